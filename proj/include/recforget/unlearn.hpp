#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "recforget/dataset.hpp"
#include "recforget/graph_select.hpp"
#include "recforget/recmodel.hpp"

namespace recforget {

enum class Method { retrain, sisa, receraser, ultrare, scif };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
/// SISA, RecEraser and UltraRE retrain shards; Retrain retrains the full model.
bool is_sharded(Method m);

// ---------------------------------------------------------------------------------------------
// Division

enum class PartitionMode { random, balanced_kmeans, balanced_ot };

std::string to_string(PartitionMode m);

struct ShardPlan {
  int num_shards = 1;
  PartitionMode mode = PartitionMode::random;
  std::vector<int> assignment;  // per user index; -1 for users outside the partition

  /// Users of each shard in ascending order.
  std::vector<std::vector<int>> members() const;
  std::vector<int> sizes() const;
};

struct PartitionOptions {
  int kmeans_iterations = 20;
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_iterations = 200;
};

/// Splits `users` into S shards whose sizes all lie in {floor(n/S), ceil(n/S)}.
/// random: seeded shuffle then round-robin. balanced_kmeans: k-means over `features` rows with
/// greedy capacity-capped assignment. balanced_ot: the same centroid loop with an entropic
/// transport assignment and capacity repair. `features` is indexed by user and is required for
/// the two balanced modes.
ShardPlan balanced_partition(std::span<const int> users, int num_users, int num_shards, PartitionMode mode,
                             const RowMatrix* features, std::uint64_t seed, const PartitionOptions& opts = {});

/// Log-domain Sinkhorn plan between uniform row marginals and uniform column marginals.
RowMatrix sinkhorn_plan(const RowMatrix& cost, double epsilon, int iterations);

// ---------------------------------------------------------------------------------------------
// Ensembles

enum class AggregatorMode { uniform, learned };

struct AggregatorOptions {
  double held_fraction = 0.1;
  double learning_rate = 0.01;
  int epochs = 50;
  int batch_size = 512;
};

/// Division-aggregation serving model: one submodel per shard plus a row-stochastic weight
/// matrix whose row h holds the simplex weights applied to users whose home shard is h.
class ShardEnsemble : public Scorer {
 public:
  ShardEnsemble(ShardPlan plan, std::vector<std::shared_ptr<const TrainedModel>> submodels, RowMatrix weights);

  const ShardPlan& plan() const { return plan_; }
  int num_shards() const { return static_cast<int>(submodels_.size()); }
  const TrainedModel& submodel(int s) const { return *submodels_.at(s); }
  std::shared_ptr<const TrainedModel> submodel_ptr(int s) const { return submodels_.at(s); }
  const RowMatrix& weights() const { return weights_; }
  /// Weights used for `user`: its home shard's row, or the mean row for users outside the plan.
  RowVector weights_for(int user) const;
  void set_weights(RowMatrix w);

  /// Weighted sum of submodel scores; a submodel that never saw the user contributes its
  /// shard prior (mean scoring user vector of the shard) dotted with the item vector.
  double aggregate_score(int user, int item) const;
  /// Vector a submodel uses for `user` (its own embedding or its prior).
  RowVector user_vector(int shard, int user) const;

  int num_items() const override;
  RowMatrix score_users(std::span<const int> users) const override;

 private:
  ShardPlan plan_;
  std::vector<std::shared_ptr<const TrainedModel>> submodels_;
  RowMatrix weights_;
  RowVector mean_weights_;
  std::vector<RowVector> priors_;
};

/// Uniform weights, or softmax-parameterised weight rows fitted by mini-batch gradient descent on
/// the summed pairwise logistic loss of the aggregated score over a seeded held slice of
/// `remaining_train` (negatives redrawn every epoch).
RowMatrix fit_aggregator(std::span<const std::shared_ptr<const TrainedModel>> submodels, const ShardPlan& plan,
                         const InteractionSet& remaining_train, AggregatorMode mode, std::uint64_t seed,
                         const AggregatorOptions& opts = {});

// ---------------------------------------------------------------------------------------------
// Approximate unlearning

struct InfluenceOptions {
  double damping = 0.01;
  int cg_max_iterations = 100;
  double cg_tolerance = 1e-4;
  /// Seed of the fixed negative table that defines the loss for sampled models.
  std::uint64_t negative_seed = 0;
};

struct InfluenceUpdate {
  ParamSelection affected;
  Vector delta;
  int cg_iterations = 0;
  double residual_norm = 0.0;  // relative to the right-hand side
  bool converged = true;
  std::string warning;
};

/// Affected rows: items the unlearned users interacted with, plus remaining users sharing at
/// least one of those items.
ParamSelection scif_affected_set(const InteractionSet& train, std::span<const int> unlearned_users);

/// Loss terms of the given users' training interactions under the model's loss definition.
LossTerms model_terms(const TrainedModel& model, const InteractionSet& train, const std::vector<char>& user_mask,
                      std::uint64_t negative_seed);

/// Preconditioned conjugate gradient on a symmetric operator; stops on relative residual or
/// when a non-positive curvature direction appears, returning the best iterate.
struct CgResult {
  Vector x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};
CgResult conjugate_gradient(const HessianOperator& op, const Vector& rhs, const Vector& preconditioner,
                            int max_iterations, double tolerance);

/// One damped Newton step removing the unlearned users' interactions: solves
/// (H_aff + damping I) d = g on the affected rows, adds d, and zeroes the unlearned users' rows.
std::pair<TrainedModel, InfluenceUpdate> scif_influence_update(const TrainedModel& model,
                                                               const InteractionSet& train,
                                                               const UnlearnSet& unlearn_set,
                                                               const InfluenceOptions& opts = {});

// ---------------------------------------------------------------------------------------------
// Methods

struct UnlearnConfig {
  int num_shards = 10;
  /// Workers assumed for shard retraining; 0 means one per shard.
  int parallel_workers = 0;
  /// Epoch cap of the full-data WMF run whose user embeddings drive the balanced divisions.
  int division_epochs = 50;
  PartitionOptions partition;
  AggregatorOptions aggregator;
  InfluenceOptions influence;
};

/// Stage I output of one method.
struct PreparedState {
  Method method = Method::retrain;
  ModelKind kind = ModelKind::wmf;
  Hyperparams hyper;
  std::uint64_t seed = 0;
  std::shared_ptr<const InteractionSet> train;
  std::shared_ptr<const InteractionSet> valid;
  UnlearnConfig config;
  std::shared_ptr<const TrainedModel> model;        // Retrain / SCIF
  std::shared_ptr<const ShardEnsemble> ensemble;    // sharded methods
  std::vector<std::shared_ptr<const InteractionSet>> shard_train;  // sharded methods
  std::vector<TrainLog> logs;
};

/// Shared stage-I artefacts: the full-data original model and the division embeddings.
struct StageOneCache {
  std::shared_ptr<const TrainedModel> original;
  std::shared_ptr<const RowMatrix> division_features;
};

PreparedState prepare(Method method, ModelKind kind, std::shared_ptr<const InteractionSet> train,
                      std::shared_ptr<const InteractionSet> valid, const Hyperparams& hyper, std::uint64_t seed,
                      const UnlearnConfig& config, StageOneCache* cache = nullptr);

/// Full-data WMF user embeddings for the balanced divisions.
RowMatrix division_features(const InteractionSet& train, const InteractionSet& valid, const Hyperparams& hyper,
                            int epochs, std::uint64_t seed);

/// Training data of one shard: interactions of the shard's users.
InteractionSet shard_data(const InteractionSet& train, const ShardPlan& plan, int shard);

struct ShardJobTiming {
  int shard = 0;
  double seconds = 0.0;
  int stop_epoch = 0;
  std::size_t interactions = 0;
};

struct UnlearnOutcome {
  std::variant<std::shared_ptr<const TrainedModel>, std::shared_ptr<const ShardEnsemble>> serving;
  /// Stage III wall time: serial work plus the makespan of shard jobs on the configured workers.
  double wall_time_s = 0.0;
  /// Elapsed time on this host.
  double elapsed_s = 0.0;
  int shards_retrained = 0;
  int workers = 1;
  std::vector<ShardJobTiming> shard_jobs;
  std::vector<std::shared_ptr<const InteractionSet>> shard_train;
  std::shared_ptr<const InteractionSet> remaining_train;
  std::optional<InfluenceUpdate> influence;

  const Scorer& scorer() const;
};

UnlearnOutcome unlearn(const PreparedState& state, const UnlearnSet& request);

/// Makespan of jobs (in list order) greedily placed on the earliest-free of `workers` workers.
double list_schedule_makespan(std::span<const double> durations, int workers);

}  // namespace recforget
