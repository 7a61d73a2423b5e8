#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "recforget/common.hpp"

namespace recforget {

struct RawRating {
  std::string user;
  std::string item;
  int rating = 0;
  std::int64_t timestamp = 0;

  bool operator==(const RawRating&) const = default;
};

struct Interaction {
  int user = 0;
  int item = 0;

  auto operator<=>(const Interaction&) const = default;
};

/// Bijection between external string ids and dense indices.
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<std::string> sorted_ids);

  int size() const { return static_cast<int>(external_.size()); }
  const std::string& external(int index) const { return external_.at(index); }
  /// Returns -1 for an unknown id.
  int dense(const std::string& id) const;

 private:
  std::vector<std::string> external_;
  std::unordered_map<std::string, int> dense_;
};

struct IdMaps {
  IdMap users;
  IdMap items;
};

/// Deduplicated implicit-feedback interactions over a dense index space.
struct InteractionSet {
  std::vector<Interaction> interactions;
  int num_users = 0;
  int num_items = 0;
  std::shared_ptr<const IdMaps> ids;

  std::size_t size() const { return interactions.size(); }
  bool empty() const { return interactions.empty(); }
};

struct SplitBundle {
  InteractionSet train;
  InteractionSet valid;
  InteractionSet test;
  std::uint64_t seed = 0;
};

/// Per-positive negative items stored as a ragged array aligned with the training interactions.
struct NegativeSampleTable {
  std::vector<std::size_t> offsets;  // size() + 1 entries
  std::vector<int> items;
  std::uint64_t seed = 0;

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const int> negatives(std::size_t positive) const {
    return {items.data() + offsets[positive], offsets[positive + 1] - offsets[positive]};
  }
};

/// Reads a tab-separated `user item rating timestamp` file (MovieLens u.data layout).
std::vector<RawRating> load_ratings(const std::filesystem::path& path);

/// Parses the same layout from an in-memory buffer.
std::vector<RawRating> parse_ratings(const std::string& text);

/// Converts ratings to implicit positives and drops users/items under `min_interactions`
/// repeatedly until no such user or item remains. Dense indices follow ascending external id
/// (numeric ids compare numerically).
InteractionSet preprocess(std::span<const RawRating> raw, int min_interactions = 5);

/// Interaction-level uniform random split. Each part is sorted by (user, item).
SplitBundle split(const InteractionSet& ds, double train_fraction, double valid_fraction,
                  std::uint64_t seed);

/// Draws k negatives per positive, uniformly without replacement among the user's
/// non-interacted items (with respect to `train`).
NegativeSampleTable sample_negatives(const InteractionSet& train, int k, std::uint64_t seed);

/// Seed used for the negative table of a given training epoch.
inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed + static_cast<std::uint64_t>(epoch);
}

// Helpers shared by the other modules.

/// Sorted item list of every user.
std::vector<std::vector<int>> items_by_user(const InteractionSet& set);

/// Number of interactions of every user.
std::vector<int> user_counts(const InteractionSet& set);

/// Copy of `set` restricted to interactions whose user is flagged in `keep_user`.
InteractionSet filter_users(const InteractionSet& set, const std::vector<char>& keep_user);

/// Fraction of absent entries in the user-item matrix.
double sparsity(const InteractionSet& set);

}  // namespace recforget
