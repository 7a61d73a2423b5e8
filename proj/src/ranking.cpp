#include "recforget/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace recforget {

std::vector<int> top_k(std::span<const double> scores, int k, std::span<const int> exclude) {
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  auto ex = exclude.begin();
  for (int j = 0; j < static_cast<int>(scores.size()); ++j) {
    while (ex != exclude.end() && *ex < j) ++ex;
    if (ex != exclude.end() && *ex == j) continue;
    candidates.push_back(j);
  }
  const auto better = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), better);
  candidates.resize(take);
  return candidates;
}

double ndcg_of_ranking(std::span<const int> ranked, std::span<const int> relevant, int k) {
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  const int depth = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < depth; ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) dcg += 1.0 / std::log2(r + 2.0);
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(r + 2.0);
  return dcg / idcg;
}

double recall_of_ranking(std::span<const int> ranked, std::span<const int> relevant, int k) {
  if (relevant.empty()) return 0.0;
  int hits = 0;
  const int depth = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < depth; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double PerUserMetrics::mean_ndcg() const {
  return ndcg.empty() ? 0.0 : std::accumulate(ndcg.begin(), ndcg.end(), 0.0) / static_cast<double>(ndcg.size());
}

double PerUserMetrics::mean_hr() const {
  return hr.empty() ? 0.0 : std::accumulate(hr.begin(), hr.end(), 0.0) / static_cast<double>(hr.size());
}

PerUserMetrics rank_metrics(const Scorer& scorer, const std::vector<std::vector<int>>& targets,
                            const std::vector<std::vector<int>>& exclude, std::span<const int> users,
                            int k) {
  std::vector<int> eligible;
  for (int u : users)
    if (u >= 0 && u < static_cast<int>(targets.size()) && !targets[u].empty()) eligible.push_back(u);
  std::sort(eligible.begin(), eligible.end());
  eligible.erase(std::unique(eligible.begin(), eligible.end()), eligible.end());

  PerUserMetrics out;
  out.users = eligible;
  out.ndcg.reserve(eligible.size());
  out.hr.reserve(eligible.size());
  constexpr std::size_t block = 256;
  static const std::vector<int> none;
  for (std::size_t b = 0; b < eligible.size(); b += block) {
    const std::size_t e = std::min(eligible.size(), b + block);
    std::span<const int> chunk(eligible.data() + b, e - b);
    const RowMatrix scores = scorer.score_users(chunk);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const int u = chunk[r];
      const auto& ex = u < static_cast<int>(exclude.size()) ? exclude[u] : none;
      const auto ranked =
          top_k(std::span<const double>(scores.row(static_cast<Eigen::Index>(r)).data(),
                                        static_cast<std::size_t>(scores.cols())),
                k, ex);
      out.ndcg.push_back(ndcg_of_ranking(ranked, targets[u], k));
      out.hr.push_back(recall_of_ranking(ranked, targets[u], k));
    }
  }
  return out;
}

}  // namespace recforget
