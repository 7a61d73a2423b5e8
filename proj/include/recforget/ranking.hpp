#pragma once

#include <span>
#include <vector>

#include "recforget/common.hpp"
#include "recforget/dataset.hpp"

namespace recforget {

/// Anything that can score the full catalogue for a block of users.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int num_items() const = 0;
  /// One row of item scores per requested user.
  virtual RowMatrix score_users(std::span<const int> users) const = 0;
};

/// Items with the k highest scores in descending order, ties to the lower item index.
/// `exclude` must be sorted.
std::vector<int> top_k(std::span<const double> scores, int k, std::span<const int> exclude);

/// DCG of the ranking over IDCG with min(k, |relevant|) ideal hits. `relevant` sorted.
double ndcg_of_ranking(std::span<const int> ranked, std::span<const int> relevant, int k);

/// Hits in the first k ranks over |relevant| (per-user recall).
double recall_of_ranking(std::span<const int> ranked, std::span<const int> relevant, int k);

/// Per-user NDCG@k and HR@k, for each user with at least one target item.
struct PerUserMetrics {
  std::vector<int> users;
  std::vector<double> ndcg;
  std::vector<double> hr;

  double mean_ndcg() const;
  double mean_hr() const;
};

/// Ranks the catalogue for every user in `users` that has target items, excluding that user's
/// items in `exclude` (indexed by user, sorted). Users are visited in ascending order.
PerUserMetrics rank_metrics(const Scorer& scorer, const std::vector<std::vector<int>>& targets,
                            const std::vector<std::vector<int>>& exclude, std::span<const int> users,
                            int k);

}  // namespace recforget
