#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "recforget/dataset.hpp"
#include "recforget/ranking.hpp"
#include "recforget/recmodel.hpp"
#include "recforget/unlearn.hpp"

namespace recforget {

/// Test items and excluded (training) items of every user, as the ranking metrics need them.
struct EvalData {
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<int>> exclude;

  EvalData(const InteractionSet& test, const InteractionSet& exclude_set);
};

/// Per-user NDCG@k / HR@k over `users` (every user when empty); users without test items skip.
PerUserMetrics utility(const Scorer& scorer, const EvalData& data, std::span<const int> users = {}, int k = 20);

double ndcg_at_k(const Scorer& scorer, const InteractionSet& test, const InteractionSet& exclude,
                 std::span<const int> users = {}, int k = 20);
double hr_at_k(const Scorer& scorer, const InteractionSet& test, const InteractionSet& exclude,
               std::span<const int> users = {}, int k = 20);

// ---------------------------------------------------------------------------------------------
// Fairness

struct GroupAssignment {
  std::vector<int> active;    // ascending
  std::vector<int> inactive;  // ascending
};

/// Top ceil(fraction * n) of `remaining_users` by training count (ties to the lower index) are
/// active; the rest are inactive.
GroupAssignment assign_groups(const InteractionSet& train, std::span<const int> remaining_users,
                              double active_fraction = 0.05);

/// Mean NDCG of active users with test items minus the same mean for inactive users.
double a_igf(const PerUserMetrics& metrics, const GroupAssignment& groups);
double a_igf(const Scorer& scorer, const EvalData& data, const GroupAssignment& groups, int k = 20);

double population_variance(std::span<const double> values);

struct ShardUtility {
  std::vector<int> shards;     // shards that had test users
  std::vector<double> ndcg;    // aligned with `shards`
  std::vector<int> excluded;   // shards without test users
  double variance = 0.0;
};

/// Each submodel ranked for its own shard's users (restricted to `users` when non-empty),
/// excluding that submodel's training items; population variance of the shard means.
ShardUtility shard_gf(const ShardEnsemble& ensemble, const InteractionSet& test, std::span<const int> users = {},
                      int k = 20);

// ---------------------------------------------------------------------------------------------
// Membership inference

/// concat(user vector, mean of the item vectors of `items`).
Vector mio_features(const EmbeddingTable& scoring, int user, std::span<const int> items);

/// One feature row per user, using that user's items from `items_of`.
RowMatrix mio_feature_matrix(const EmbeddingTable& scoring, std::span<const int> users,
                             const std::vector<std::vector<int>>& items_of);

/// Anything that labels feature rows as member (1) or non-member (0).
class MembershipClassifier {
 public:
  virtual ~MembershipClassifier() = default;
  virtual std::vector<int> predict(const RowMatrix& features) const = 0;
};

struct MioOptions {
  std::vector<int> hidden = {64, 16, 4};
  int epochs = 100;
  double learning_rate = 0.001;
};

/// Feed-forward ReLU network with a two-way softmax head over standardised features.
class MioModel : public MembershipClassifier {
 public:
  struct Layer {
    RowMatrix weight;  // out x in
    Vector bias;
  };

  MioModel(Vector mean, Vector scale, std::vector<Layer> layers);

  int feature_dim() const { return static_cast<int>(mean_.size()); }
  const std::vector<Layer>& layers() const { return layers_; }
  /// Rows of (P(non-member), P(member)).
  RowMatrix predict_proba(const RowMatrix& features) const;
  std::vector<int> predict(const RowMatrix& features) const override;

 private:
  Vector mean_;
  Vector scale_;
  std::vector<Layer> layers_;
};

/// Balances the classes by seeded downsampling of the larger one, standardises features, and
/// runs per-sample SGD on cross-entropy from He-initialised weights.
MioModel train_mio(const RowMatrix& members, const RowMatrix& nonmembers, std::uint64_t seed,
                   const MioOptions& opts = {});

/// Fraction of rows labelled correctly, members counting as 1 and non-members as 0.
double query_accuracy(const MembershipClassifier& clf, const RowMatrix& members, const RowMatrix& nonmembers);

/// Queries `clf` with the unlearned users (members) and an equal-sized seeded sample of the
/// holdout users (non-members), featurised from the model under test.
double mio_accuracy(const MembershipClassifier& clf, const EmbeddingTable& scoring,
                    std::span<const int> unlearned_users, std::span<const int> holdout_users,
                    const std::vector<std::vector<int>>& items_of, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------

struct MetricReport {
  double ndcg20 = 0.0;
  double hr20 = 0.0;
  std::optional<double> mio_accuracy;
  std::optional<double> a_igf;
  std::optional<double> shard_gf;
  double wall_time_s = 0.0;
};

}  // namespace recforget
