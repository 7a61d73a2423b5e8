#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recforget/dataset.hpp"

namespace recforget {

enum class Side { user, item };

struct NodeRef {
  Side side = Side::user;
  int index = 0;
};

/// Unweighted user-item bipartite graph over a training set.
struct BipartiteGraph {
  std::vector<std::vector<int>> user_adj;
  std::vector<std::vector<int>> item_adj;

  int num_users() const { return static_cast<int>(user_adj.size()); }
  int num_items() const { return static_cast<int>(item_adj.size()); }
  const std::vector<int>& neighbors(NodeRef x) const {
    return x.side == Side::user ? user_adj.at(x.index) : item_adj.at(x.index);
  }
  /// Degree centrality c(x).
  int degree(NodeRef x) const { return static_cast<int>(neighbors(x).size()); }
};

struct NodeImportance {
  NodeRef node;
  double centrality = 0.0;
  double importance = 0.0;
};

BipartiteGraph build_graph(const InteractionSet& train);

/// Degree times mean neighbour degree; 0 for an isolated node.
NodeImportance importance(const BipartiteGraph& g, NodeRef node);

/// Importance of every node on one side, indexed by node.
Eigen::VectorXd importance_all(const BipartiteGraph& g, Side side);

enum class Strategy { core, random, edge };
enum class RatioBasis { interactions, users };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct UnlearnSet {
  Strategy strategy = Strategy::random;
  std::vector<int> users;                 // ascending
  std::vector<Interaction> interactions;  // those users' training interactions, sorted
  double ratio = 0.0;

  bool empty() const { return users.empty(); }
};

/// Picks whole users (core: descending importance, edge: ascending, random: seeded shuffle)
/// until their training interactions (or their count, for RatioBasis::users) first reach
/// `ratio` of the total. Ties in importance go to the lower user index.
UnlearnSet select_unlearn_set(const BipartiteGraph& g, const InteractionSet& train, Strategy strategy,
                              double ratio, std::uint64_t seed,
                              RatioBasis basis = RatioBasis::interactions);

}  // namespace recforget
