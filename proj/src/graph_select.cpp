#include "recforget/graph_select.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace recforget {

BipartiteGraph build_graph(const InteractionSet& train) {
  BipartiteGraph g;
  g.user_adj.resize(train.num_users);
  g.item_adj.resize(train.num_items);
  for (const auto& x : train.interactions) {
    g.user_adj[x.user].push_back(x.item);
    g.item_adj[x.item].push_back(x.user);
  }
  for (auto& v : g.user_adj) std::sort(v.begin(), v.end());
  for (auto& v : g.item_adj) std::sort(v.begin(), v.end());
  return g;
}

NodeImportance importance(const BipartiteGraph& g, NodeRef node) {
  const auto& nb = g.neighbors(node);
  NodeImportance out{node, static_cast<double>(nb.size()), 0.0};
  if (nb.empty()) return out;
  const Side other = node.side == Side::user ? Side::item : Side::user;
  double sum = 0.0;
  for (int y : nb) sum += g.degree({other, y});
  out.importance = out.centrality * sum / static_cast<double>(nb.size());
  return out;
}

Eigen::VectorXd importance_all(const BipartiteGraph& g, Side side) {
  const int n = side == Side::user ? g.num_users() : g.num_items();
  Eigen::VectorXd out(n);
  for (int x = 0; x < n; ++x) out[x] = importance(g, {side, x}).importance;
  return out;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::core: return "core";
    case Strategy::random: return "random";
    case Strategy::edge: return "edge";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "core") return Strategy::core;
  if (s == "random") return Strategy::random;
  if (s == "edge") return Strategy::edge;
  throw InvalidArgument("unknown strategy '" + s + "'");
}

UnlearnSet select_unlearn_set(const BipartiteGraph& g, const InteractionSet& train, Strategy strategy,
                              double ratio, std::uint64_t seed, RatioBasis basis) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("unlearning ratio must lie in [0, 1]");
  UnlearnSet out;
  out.strategy = strategy;
  out.ratio = ratio;
  if (ratio == 0.0) return out;

  std::vector<int> order;
  for (int u = 0; u < g.num_users(); ++u)
    if (!g.user_adj[u].empty()) order.push_back(u);

  if (strategy == Strategy::random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    const Eigen::VectorXd imp = importance_all(g, Side::user);
    const bool descending = strategy == Strategy::core;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (imp[a] != imp[b]) return descending ? imp[a] > imp[b] : imp[a] < imp[b];
      return a < b;
    });
  }

  const double total = basis == RatioBasis::interactions ? static_cast<double>(train.size())
                                                         : static_cast<double>(order.size());
  const double target = ratio * total;
  double mass = 0.0;
  for (int u : order) {
    if (mass >= target - 1e-9) break;
    out.users.push_back(u);
    mass += basis == RatioBasis::interactions ? static_cast<double>(g.user_adj[u].size()) : 1.0;
  }
  if (out.users.size() == order.size()) {
    throw InvalidArgument("unlearning ratio leaves no remaining users");
  }
  std::sort(out.users.begin(), out.users.end());
  std::vector<char> chosen(train.num_users, 0);
  for (int u : out.users) chosen[u] = 1;
  for (const auto& x : train.interactions)
    if (chosen[x.user]) out.interactions.push_back(x);
  std::sort(out.interactions.begin(), out.interactions.end());
  return out;
}

}  // namespace recforget
