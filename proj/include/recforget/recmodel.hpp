#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "recforget/common.hpp"
#include "recforget/dataset.hpp"
#include "recforget/ranking.hpp"

namespace recforget {

enum class ModelKind { wmf, bpr, lightgcn };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct Hyperparams {
  int embedding_dim = 32;
  int batch_size = 512;
  double learning_rate = 0.01;
  int max_epochs = 500;
  int patience = 5;
  int negatives_per_positive = 4;
  double wmf_negative_weight = 1.0;
  int lightgcn_layers = 2;
  double l2_reg = 1.5e-2;
  double init_std = 0.01;
  /// WMF only: weight every missing entry instead of sampling negatives (small instances).
  bool wmf_dense = false;

  void validate() const;
};

/// User and item embedding rows.
struct EmbeddingTable {
  RowMatrix users;
  RowMatrix items;

  static EmbeddingTable zeros(int num_users, int num_items, int dim);
  int dim() const { return static_cast<int>(users.cols()); }
  int num_users() const { return static_cast<int>(users.rows()); }
  int num_items() const { return static_cast<int>(items.rows()); }
  bool all_finite() const { return users.allFinite() && items.allFinite(); }
  /// Euclidean norm over every entry.
  double norm() const;
};

/// Mean over layers 0..L of powers of the symmetric-normalised user-item adjacency.
/// The operator is symmetric, so it also back-propagates gradients.
class Propagation {
 public:
  Propagation(const InteractionSet& train, int layers);

  int layers() const { return layers_; }
  EmbeddingTable apply(const EmbeddingTable& in) const;

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> adj_;
  int layers_ = 0;
  int num_users_ = 0;
};

// ---------------------------------------------------------------------------------------------
// Loss terms

/// Weighted squared error w * (target - score)^2 (WMF).
struct PointTerm {
  int user = 0;
  int item = 0;
  double target = 0.0;
  double weight = 1.0;
};

/// Pairwise logistic loss -ln sigmoid(score(u,pos) - score(u,neg)) (BPR, LightGCN).
struct PairTerm {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

/// A batch of loss terms. Every term also carries l2 * squared norm of each raw row it touches.
struct LossTerms {
  std::vector<PointTerm> points;
  std::vector<PairTerm> pairs;

  bool empty() const { return points.empty() && pairs.empty(); }
  void append(const LossTerms& other);
};

/// Terms for the given positives (indices into `positives`, which `negatives` is aligned with).
/// WMF produces one positive point and one weighted zero-target point per negative; the
/// pairwise kinds produce one pair per negative.
LossTerms make_terms(ModelKind kind, std::span<const Interaction> positives,
                     const NegativeSampleTable& negatives, std::span<const std::size_t> indices,
                     double wmf_negative_weight);

/// Same, over every positive.
LossTerms make_terms(ModelKind kind, std::span<const Interaction> positives,
                     const NegativeSampleTable& negatives, double wmf_negative_weight);

/// Non-sampling WMF terms: every (user, item) cell of the listed users, positives weighted 1
/// and missing entries weighted `negative_weight`.
LossTerms dense_wmf_terms(const InteractionSet& train, std::span<const int> users, double negative_weight);

/// Scoring embeddings of raw parameters (identity except for LightGCN).
EmbeddingTable scoring_embeddings(ModelKind kind, const EmbeddingTable& params, const Propagation* prop);

double loss_value(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms, double l2,
                  const Propagation* prop = nullptr);

/// Exact gradient of the batch loss (including the l2 term) with respect to the raw table.
/// Rows the batch does not touch are zero (LightGCN spreads through propagation).
EmbeddingTable loss_grad(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms, double l2,
                         const Propagation* prop = nullptr);

// ---------------------------------------------------------------------------------------------
// Parameter subsets and Hessian-vector products

/// A subset of embedding rows; flat vectors list the selected user rows then the selected item
/// rows, each row contributing `dim` consecutive entries.
struct ParamSelection {
  std::vector<int> users;  // ascending
  std::vector<int> items;  // ascending

  static ParamSelection all(int num_users, int num_items);
  Eigen::Index size(int dim) const {
    return static_cast<Eigen::Index>(users.size() + items.size()) * dim;
  }
};

Vector gather(const EmbeddingTable& t, const ParamSelection& sel);
/// Writes `flat` into the selected rows of `t`.
void scatter(EmbeddingTable& t, const ParamSelection& sel, const Vector& flat);

/// (H + damping I) restricted to a parameter subset, at fixed parameters and terms.
/// Per-term curvature is cached at construction so repeated products are cheap.
class HessianOperator {
 public:
  HessianOperator(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms, double l2,
                  const Propagation* prop, ParamSelection selection, double damping);

  Eigen::Index size() const { return selection_.size(dim_); }
  const ParamSelection& selection() const { return selection_; }
  Vector apply(const Vector& v) const;
  /// Diagonal of the restricted operator (used as a preconditioner).
  Vector diagonal() const;

 private:
  ModelKind kind_;
  const LossTerms* terms_;
  const Propagation* prop_;
  EmbeddingTable scoring_;
  ParamSelection selection_;
  int dim_ = 0;
  double l2_ = 0.0;
  double damping_ = 0.0;
  std::vector<double> d1_, d2_;  // first/second derivative of each term w.r.t. its score
  std::vector<double> user_reg_count_, item_reg_count_;
  std::vector<char> user_sel_, item_sel_;
};

/// One-shot (H + damping I) v over the selected parameters.
Vector hessian_vector_product(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms,
                              double l2, const Propagation* prop, const ParamSelection& selection,
                              const Vector& v, double damping);

// ---------------------------------------------------------------------------------------------
// Models

class TrainedModel : public Scorer {
 public:
  TrainedModel(ModelKind kind, EmbeddingTable params, Hyperparams hyper,
               std::shared_ptr<const InteractionSet> train);

  ModelKind kind() const { return kind_; }
  const EmbeddingTable& params() const { return params_; }
  const Hyperparams& hyper() const { return hyper_; }
  const InteractionSet& train_set() const { return *train_; }
  std::shared_ptr<const InteractionSet> train_ptr() const { return train_; }
  const Propagation* propagation() const { return prop_.get(); }
  /// Embeddings used for scoring (propagated for LightGCN).
  const EmbeddingTable& scoring() const { return scoring_; }
  /// Whether the user has at least one interaction in the training set.
  bool knows_user(int user) const { return user >= 0 && user < static_cast<int>(known_.size()) && known_[user]; }

  void set_params(EmbeddingTable params);

  double score(int user, int item) const;
  int num_items() const override { return static_cast<int>(scoring_.items.rows()); }
  RowMatrix score_users(std::span<const int> users) const override;

 private:
  ModelKind kind_;
  EmbeddingTable params_;
  Hyperparams hyper_;
  std::shared_ptr<const InteractionSet> train_;
  std::shared_ptr<const Propagation> prop_;
  EmbeddingTable scoring_;
  std::vector<char> known_;
};

struct TrainLog {
  std::vector<double> valid_ndcg;  // one entry per epoch run
  int stop_epoch = 0;
  int best_epoch = 0;
  bool early_stopped = false;
  double wall_time_s = 0.0;
};

struct TrainResult {
  TrainedModel model;
  TrainLog log;
};

/// Seeded N(0, init_std) table.
EmbeddingTable init_embeddings(int num_users, int num_items, const Hyperparams& hyper, std::uint64_t seed);

/// Mini-batch SGD on the model loss with per-epoch negative resampling and early stopping on
/// validation NDCG@20; returns the best-validation parameters. When `valid` has no usable user
/// the run lasts max_epochs and returns the last parameters.
TrainResult train(ModelKind kind, const InteractionSet& train_set, const InteractionSet& valid,
                  const Hyperparams& hyper, std::uint64_t seed);

/// Top-k items for a user, excluding `exclude` (sorted); ties to the lower item index.
std::vector<int> score_topk(const TrainedModel& m, int user, int k, std::span<const int> exclude);

/// Validation NDCG@20 over users that have validation items and a trained embedding.
double validate(const TrainedModel& m, const InteractionSet& valid);

/// Scorer over a bare scoring table.
class EmbeddingScorer : public Scorer {
 public:
  explicit EmbeddingScorer(const EmbeddingTable& scoring) : t_(&scoring) {}
  int num_items() const override { return static_cast<int>(t_->items.rows()); }
  RowMatrix score_users(std::span<const int> users) const override;

 private:
  const EmbeddingTable* t_;
};

/// Plain-text checkpoint: a version line, the kind, shapes, then row-major values.
void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const EmbeddingTable& params);
std::pair<ModelKind, EmbeddingTable> load_checkpoint(const std::filesystem::path& path);

}  // namespace recforget
