#include "recforget/recmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace recforget {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::wmf: return "WMF";
    case ModelKind::bpr: return "BPR";
    case ModelKind::lightgcn: return "LightGCN";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "wmf") return ModelKind::wmf;
  if (l == "bpr") return ModelKind::bpr;
  if (l == "lightgcn") return ModelKind::lightgcn;
  throw InvalidArgument("unknown model kind '" + s + "'");
}

void Hyperparams::validate() const {
  if (embedding_dim < 1 || batch_size < 1 || max_epochs < 1 || patience < 1 ||
      negatives_per_positive < 1 || lightgcn_layers < 0) {
    throw InvalidArgument("hyper-parameter counts must be positive");
  }
  if (!(learning_rate > 0) || !(wmf_negative_weight > 0 && wmf_negative_weight <= 1) || !(l2_reg >= 0) ||
      !(init_std > 0)) {
    throw InvalidArgument("hyper-parameter values out of range");
  }
}

EmbeddingTable EmbeddingTable::zeros(int num_users, int num_items, int dim) {
  return {RowMatrix::Zero(num_users, dim), RowMatrix::Zero(num_items, dim)};
}

double EmbeddingTable::norm() const {
  return std::sqrt(users.squaredNorm() + items.squaredNorm());
}

Propagation::Propagation(const InteractionSet& train, int layers)
    : layers_(layers), num_users_(train.num_users) {
  const int n = train.num_users + train.num_items;
  std::vector<double> udeg(train.num_users, 0.0), ideg(train.num_items, 0.0);
  for (const auto& x : train.interactions) {
    udeg[x.user] += 1.0;
    ideg[x.item] += 1.0;
  }
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * train.size());
  for (const auto& x : train.interactions) {
    const double w = 1.0 / std::sqrt(udeg[x.user] * ideg[x.item]);
    trip.emplace_back(x.user, num_users_ + x.item, w);
    trip.emplace_back(num_users_ + x.item, x.user, w);
  }
  adj_.resize(n, n);
  adj_.setFromTriplets(trip.begin(), trip.end());
}

EmbeddingTable Propagation::apply(const EmbeddingTable& in) const {
  const int nu = in.num_users();
  const int ni = in.num_items();
  RowMatrix x(nu + ni, in.dim());
  x.topRows(nu) = in.users;
  x.bottomRows(ni) = in.items;
  RowMatrix acc = x;
  RowMatrix cur = x;
  for (int k = 0; k < layers_; ++k) {
    RowMatrix next = adj_ * cur;
    cur.swap(next);
    acc += cur;
  }
  acc /= static_cast<double>(layers_ + 1);
  return {acc.topRows(nu), acc.bottomRows(ni)};
}

void LossTerms::append(const LossTerms& other) {
  points.insert(points.end(), other.points.begin(), other.points.end());
  pairs.insert(pairs.end(), other.pairs.begin(), other.pairs.end());
}

LossTerms make_terms(ModelKind kind, std::span<const Interaction> positives,
                     const NegativeSampleTable& negatives, std::span<const std::size_t> indices,
                     double wmf_negative_weight) {
  LossTerms t;
  for (std::size_t idx : indices) {
    const auto& x = positives[idx];
    const auto negs = negatives.negatives(idx);
    if (kind == ModelKind::wmf) {
      t.points.push_back({x.user, x.item, 1.0, 1.0});
      for (int j : negs) t.points.push_back({x.user, j, 0.0, wmf_negative_weight});
    } else {
      for (int j : negs) t.pairs.push_back({x.user, x.item, j});
    }
  }
  return t;
}

LossTerms make_terms(ModelKind kind, std::span<const Interaction> positives,
                     const NegativeSampleTable& negatives, double wmf_negative_weight) {
  std::vector<std::size_t> all(positives.size());
  std::iota(all.begin(), all.end(), 0);
  return make_terms(kind, positives, negatives, all, wmf_negative_weight);
}

LossTerms dense_wmf_terms(const InteractionSet& train, std::span<const int> users, double negative_weight) {
  const auto by_user = items_by_user(train);
  LossTerms t;
  for (int u : users) {
    const auto& pos = by_user[u];
    for (int j = 0; j < train.num_items; ++j) {
      const bool positive = std::binary_search(pos.begin(), pos.end(), j);
      t.points.push_back({u, j, positive ? 1.0 : 0.0, positive ? 1.0 : negative_weight});
    }
  }
  return t;
}

EmbeddingTable scoring_embeddings(ModelKind kind, const EmbeddingTable& params, const Propagation* prop) {
  if (kind != ModelKind::lightgcn) return params;
  if (prop == nullptr) throw InvalidArgument("LightGCN requires a propagation operator");
  return prop->apply(params);
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// -ln sigmoid(z), stable for large |z|.
inline double neg_log_sigmoid(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// Adds d(data loss)/dF into g and returns the data loss.
double data_grad(const EmbeddingTable& f, const LossTerms& terms, EmbeddingTable& g) {
  double loss = 0.0;
  for (const auto& t : terms.points) {
    const auto p = f.users.row(t.user);
    const auto q = f.items.row(t.item);
    const double r = t.target - p.dot(q);
    loss += t.weight * r * r;
    const double d1 = -2.0 * t.weight * r;
    g.users.row(t.user) += d1 * q;
    g.items.row(t.item) += d1 * p;
  }
  for (const auto& t : terms.pairs) {
    const auto p = f.users.row(t.user);
    const auto qi = f.items.row(t.pos);
    const auto qj = f.items.row(t.neg);
    const double z = p.dot(qi) - p.dot(qj);
    loss += neg_log_sigmoid(z);
    const double d1 = sigmoid(z) - 1.0;
    g.users.row(t.user) += d1 * (qi - qj);
    g.items.row(t.pos) += d1 * p;
    g.items.row(t.neg) -= d1 * p;
  }
  return loss;
}

// Adds the gradient of l2 * ||row||^2 per row occurrence and returns that penalty.
double reg_grad(const EmbeddingTable& e, const LossTerms& terms, double l2, EmbeddingTable& g) {
  if (l2 == 0.0) return 0.0;
  double loss = 0.0;
  auto user = [&](int u) {
    loss += l2 * e.users.row(u).squaredNorm();
    g.users.row(u) += 2.0 * l2 * e.users.row(u);
  };
  auto item = [&](int i) {
    loss += l2 * e.items.row(i).squaredNorm();
    g.items.row(i) += 2.0 * l2 * e.items.row(i);
  };
  for (const auto& t : terms.points) {
    user(t.user);
    item(t.item);
  }
  for (const auto& t : terms.pairs) {
    user(t.user);
    item(t.pos);
    item(t.neg);
  }
  return loss;
}

double reg_value(const EmbeddingTable& e, const LossTerms& terms, double l2) {
  double loss = 0.0;
  for (const auto& t : terms.points)
    loss += e.users.row(t.user).squaredNorm() + e.items.row(t.item).squaredNorm();
  for (const auto& t : terms.pairs)
    loss += e.users.row(t.user).squaredNorm() + e.items.row(t.pos).squaredNorm() +
            e.items.row(t.neg).squaredNorm();
  return l2 * loss;
}

}  // namespace

double loss_value(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms, double l2,
                  const Propagation* prop) {
  const EmbeddingTable f = scoring_embeddings(kind, params, prop);
  double loss = 0.0;
  for (const auto& t : terms.points) {
    const double r = t.target - f.users.row(t.user).dot(f.items.row(t.item));
    loss += t.weight * r * r;
  }
  for (const auto& t : terms.pairs) {
    const auto p = f.users.row(t.user);
    loss += neg_log_sigmoid(p.dot(f.items.row(t.pos)) - p.dot(f.items.row(t.neg)));
  }
  return loss + reg_value(params, terms, l2);
}

EmbeddingTable loss_grad(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms, double l2,
                         const Propagation* prop) {
  EmbeddingTable g = EmbeddingTable::zeros(params.num_users(), params.num_items(), params.dim());
  if (terms.empty()) return g;
  if (kind == ModelKind::lightgcn) {
    const EmbeddingTable f = scoring_embeddings(kind, params, prop);
    EmbeddingTable gf = EmbeddingTable::zeros(params.num_users(), params.num_items(), params.dim());
    data_grad(f, terms, gf);
    g = prop->apply(gf);
  } else {
    data_grad(params, terms, g);
  }
  reg_grad(params, terms, l2, g);
  return g;
}

// ---------------------------------------------------------------------------------------------

ParamSelection ParamSelection::all(int num_users, int num_items) {
  ParamSelection s;
  s.users.resize(num_users);
  s.items.resize(num_items);
  std::iota(s.users.begin(), s.users.end(), 0);
  std::iota(s.items.begin(), s.items.end(), 0);
  return s;
}

Vector gather(const EmbeddingTable& t, const ParamSelection& sel) {
  const int d = t.dim();
  Vector out(sel.size(d));
  Eigen::Index k = 0;
  for (int u : sel.users) {
    out.segment(k, d) = t.users.row(u).transpose();
    k += d;
  }
  for (int i : sel.items) {
    out.segment(k, d) = t.items.row(i).transpose();
    k += d;
  }
  return out;
}

void scatter(EmbeddingTable& t, const ParamSelection& sel, const Vector& flat) {
  const int d = t.dim();
  if (flat.size() != sel.size(d)) throw InvalidArgument("flat vector does not match the selection");
  Eigen::Index k = 0;
  for (int u : sel.users) {
    t.users.row(u) = flat.segment(k, d).transpose();
    k += d;
  }
  for (int i : sel.items) {
    t.items.row(i) = flat.segment(k, d).transpose();
    k += d;
  }
}

HessianOperator::HessianOperator(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms,
                                 double l2, const Propagation* prop, ParamSelection selection,
                                 double damping)
    : kind_(kind),
      terms_(&terms),
      prop_(prop),
      scoring_(scoring_embeddings(kind, params, prop)),
      selection_(std::move(selection)),
      dim_(params.dim()),
      l2_(l2),
      damping_(damping),
      user_reg_count_(params.num_users(), 0.0),
      item_reg_count_(params.num_items(), 0.0),
      user_sel_(params.num_users(), 0),
      item_sel_(params.num_items(), 0) {
  if (damping < 0) throw InvalidArgument("damping must be non-negative");
  for (int u : selection_.users) user_sel_.at(u) = 1;
  for (int i : selection_.items) item_sel_.at(i) = 1;

  d1_.reserve(terms.points.size() + terms.pairs.size());
  d2_.reserve(d1_.capacity());
  for (const auto& t : terms.points) {
    const double r = t.target - scoring_.users.row(t.user).dot(scoring_.items.row(t.item));
    d1_.push_back(-2.0 * t.weight * r);
    d2_.push_back(2.0 * t.weight);
    user_reg_count_[t.user] += 1.0;
    item_reg_count_[t.item] += 1.0;
  }
  for (const auto& t : terms.pairs) {
    const auto p = scoring_.users.row(t.user);
    const double s = sigmoid(p.dot(scoring_.items.row(t.pos)) - p.dot(scoring_.items.row(t.neg)));
    d1_.push_back(s - 1.0);
    d2_.push_back(s * (1.0 - s));
    user_reg_count_[t.user] += 1.0;
    item_reg_count_[t.pos] += 1.0;
    item_reg_count_[t.neg] += 1.0;
  }
}

Vector HessianOperator::apply(const Vector& v) const {
  if (v.size() != size()) {
    throw InvalidArgument("vector of length " + std::to_string(v.size()) + " does not match selection of " +
                          std::to_string(size()));
  }
  const int nu = scoring_.num_users();
  const int ni = scoring_.num_items();
  EmbeddingTable vraw = EmbeddingTable::zeros(nu, ni, dim_);
  scatter(vraw, selection_, v);
  const bool mixing = kind_ == ModelKind::lightgcn;
  const EmbeddingTable vf = mixing ? prop_->apply(vraw) : vraw;
  EmbeddingTable hf = EmbeddingTable::zeros(nu, ni, dim_);

  const auto& f = scoring_;
  std::size_t k = 0;
  for (const auto& t : terms_->points) {
    const std::size_t idx = k++;
    if (!mixing && !user_sel_[t.user] && !item_sel_[t.item]) continue;
    const auto p = f.users.row(t.user);
    const auto q = f.items.row(t.item);
    const auto vp = vf.users.row(t.user);
    const auto vq = vf.items.row(t.item);
    const double ds = vp.dot(q) + p.dot(vq);
    const double a = d2_[idx] * ds;
    hf.users.row(t.user) += a * q + d1_[idx] * vq;
    hf.items.row(t.item) += a * p + d1_[idx] * vp;
  }
  for (const auto& t : terms_->pairs) {
    const std::size_t idx = k++;
    if (!mixing && !user_sel_[t.user] && !item_sel_[t.pos] && !item_sel_[t.neg]) continue;
    const auto p = f.users.row(t.user);
    const RowVector diff = f.items.row(t.pos) - f.items.row(t.neg);
    const auto vp = vf.users.row(t.user);
    const RowVector vdiff = vf.items.row(t.pos) - vf.items.row(t.neg);
    const double dz = vp.dot(diff) + p.dot(vdiff);
    const double a = d2_[idx] * dz;
    hf.users.row(t.user) += a * diff + d1_[idx] * vdiff;
    const RowVector item_part = a * p + d1_[idx] * vp;
    hf.items.row(t.pos) += item_part;
    hf.items.row(t.neg) -= item_part;
  }
  EmbeddingTable h = mixing ? prop_->apply(hf) : std::move(hf);
  for (int u : selection_.users) h.users.row(u) += 2.0 * l2_ * user_reg_count_[u] * vraw.users.row(u);
  for (int i : selection_.items) h.items.row(i) += 2.0 * l2_ * item_reg_count_[i] * vraw.items.row(i);
  return gather(h, selection_) + damping_ * v;
}

Vector HessianOperator::diagonal() const {
  const int nu = scoring_.num_users();
  const int ni = scoring_.num_items();
  EmbeddingTable diag = EmbeddingTable::zeros(nu, ni, dim_);
  if (kind_ != ModelKind::lightgcn) {
    const auto& f = scoring_;
    std::size_t k = 0;
    for (const auto& t : terms_->points) {
      const double c = d2_[k++];
      diag.users.row(t.user) += c * f.items.row(t.item).array().square().matrix();
      diag.items.row(t.item) += c * f.users.row(t.user).array().square().matrix();
    }
    for (const auto& t : terms_->pairs) {
      const double c = d2_[k++];
      const RowVector diff = f.items.row(t.pos) - f.items.row(t.neg);
      const RowVector p2 = f.users.row(t.user).array().square().matrix();
      diag.users.row(t.user) += c * diff.array().square().matrix();
      diag.items.row(t.pos) += c * p2;
      diag.items.row(t.neg) += c * p2;
    }
  } else {
    diag.users.setOnes();
    diag.items.setOnes();
  }
  for (int u = 0; u < nu; ++u) diag.users.row(u).array() += 2.0 * l2_ * user_reg_count_[u];
  for (int i = 0; i < ni; ++i) diag.items.row(i).array() += 2.0 * l2_ * item_reg_count_[i];
  return gather(diag, selection_).array() + damping_;
}

Vector hessian_vector_product(ModelKind kind, const EmbeddingTable& params, const LossTerms& terms,
                              double l2, const Propagation* prop, const ParamSelection& selection,
                              const Vector& v, double damping) {
  return HessianOperator(kind, params, terms, l2, prop, selection, damping).apply(v);
}

// ---------------------------------------------------------------------------------------------

TrainedModel::TrainedModel(ModelKind kind, EmbeddingTable params, Hyperparams hyper,
                           std::shared_ptr<const InteractionSet> train)
    : kind_(kind), hyper_(hyper), train_(std::move(train)) {
  if (!train_) throw InvalidArgument("model requires its training set");
  if (params.num_users() != train_->num_users || params.num_items() != train_->num_items) {
    throw InvalidArgument("embedding table shape does not match the training index space");
  }
  known_.assign(train_->num_users, 0);
  for (const auto& x : train_->interactions) known_[x.user] = 1;
  if (kind_ == ModelKind::lightgcn) prop_ = std::make_shared<Propagation>(*train_, hyper_.lightgcn_layers);
  set_params(std::move(params));
}

void TrainedModel::set_params(EmbeddingTable params) {
  params_ = std::move(params);
  scoring_ = scoring_embeddings(kind_, params_, prop_.get());
}

double TrainedModel::score(int user, int item) const {
  return scoring_.users.row(user).dot(scoring_.items.row(item));
}

RowMatrix EmbeddingScorer::score_users(std::span<const int> users) const {
  RowMatrix block(static_cast<Eigen::Index>(users.size()), t_->dim());
  for (std::size_t r = 0; r < users.size(); ++r) block.row(static_cast<Eigen::Index>(r)) = t_->users.row(users[r]);
  return block * t_->items.transpose();
}

RowMatrix TrainedModel::score_users(std::span<const int> users) const {
  return EmbeddingScorer(scoring_).score_users(users);
}

EmbeddingTable init_embeddings(int num_users, int num_items, const Hyperparams& hyper, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, hyper.init_std);
  EmbeddingTable t = EmbeddingTable::zeros(num_users, num_items, hyper.embedding_dim);
  for (Eigen::Index k = 0; k < t.users.size(); ++k) t.users.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < t.items.size(); ++k) t.items.data()[k] = normal(rng);
  return t;
}

namespace {

struct ValidationData {
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<int>> exclude;
  std::vector<int> users;
};

ValidationData make_validation(const InteractionSet& train, const InteractionSet& valid) {
  ValidationData v;
  v.targets = items_by_user(valid);
  v.exclude = items_by_user(train);
  for (int u = 0; u < static_cast<int>(v.targets.size()); ++u)
    if (!v.targets[u].empty() && u < static_cast<int>(v.exclude.size()) && !v.exclude[u].empty())
      v.users.push_back(u);
  return v;
}

// One SGD step on the matrix-factorisation kinds, touching only the rows in the batch.
double mf_step(EmbeddingTable& e, EmbeddingTable& g, const LossTerms& terms, double l2, double lr,
               std::vector<int>& touched_users, std::vector<int>& touched_items, std::vector<char>& umark,
               std::vector<char>& imark) {
  const double loss = data_grad(e, terms, g) + reg_grad(e, terms, l2, g);
  touched_users.clear();
  touched_items.clear();
  auto tu = [&](int u) {
    if (!umark[u]) {
      umark[u] = 1;
      touched_users.push_back(u);
    }
  };
  auto ti = [&](int i) {
    if (!imark[i]) {
      imark[i] = 1;
      touched_items.push_back(i);
    }
  };
  for (const auto& t : terms.points) {
    tu(t.user);
    ti(t.item);
  }
  for (const auto& t : terms.pairs) {
    tu(t.user);
    ti(t.pos);
    ti(t.neg);
  }
  for (int u : touched_users) {
    e.users.row(u) -= lr * g.users.row(u);
    g.users.row(u).setZero();
    umark[u] = 0;
  }
  for (int i : touched_items) {
    e.items.row(i) -= lr * g.items.row(i);
    g.items.row(i).setZero();
    imark[i] = 0;
  }
  return loss;
}

double lightgcn_step(EmbeddingTable& e, const LossTerms& terms, const Propagation& prop, double l2, double lr) {
  const EmbeddingTable f = prop.apply(e);
  EmbeddingTable gf = EmbeddingTable::zeros(e.num_users(), e.num_items(), e.dim());
  double loss = data_grad(f, terms, gf);
  EmbeddingTable g = prop.apply(gf);
  loss += reg_grad(e, terms, l2, g);
  e.users -= lr * g.users;
  e.items -= lr * g.items;
  return loss;
}

}  // namespace

TrainResult train(ModelKind kind, const InteractionSet& train_set, const InteractionSet& valid,
                  const Hyperparams& hyper, std::uint64_t seed) {
  hyper.validate();
  Stopwatch clock;
  auto train_ptr = std::make_shared<const InteractionSet>(train_set);
  const int nu = train_set.num_users;
  const int ni = train_set.num_items;
  EmbeddingTable e = init_embeddings(nu, ni, hyper, seed);
  std::shared_ptr<const Propagation> prop;
  if (kind == ModelKind::lightgcn) prop = std::make_shared<Propagation>(train_set, hyper.lightgcn_layers);

  const ValidationData vd = make_validation(train_set, valid);
  const bool early_stopping = !vd.users.empty();

  const bool dense = kind == ModelKind::wmf && hyper.wmf_dense;
  LossTerms dense_terms;
  if (dense) {
    std::vector<int> users;
    const auto counts = user_counts(train_set);
    for (int u = 0; u < nu; ++u)
      if (counts[u] > 0) users.push_back(u);
    dense_terms = dense_wmf_terms(train_set, users, hyper.wmf_negative_weight);
  }

  std::mt19937_64 shuffle_rng(derive_seed(seed, 2));
  const std::uint64_t negative_seed = derive_seed(seed, 1);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  EmbeddingTable grad = EmbeddingTable::zeros(nu, ni, hyper.embedding_dim);
  std::vector<int> touched_users, touched_items;
  std::vector<char> umark(nu, 0), imark(ni, 0);

  TrainLog log;
  EmbeddingTable best = e;
  double best_ndcg = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    double loss = 0.0;
    if (dense) {
      loss = mf_step(e, grad, dense_terms, hyper.l2_reg, hyper.learning_rate, touched_users, touched_items,
                     umark, imark);
    } else {
      const NegativeSampleTable negs =
          sample_negatives(train_set, hyper.negatives_per_positive, epoch_seed(negative_seed, epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(hyper.batch_size)) {
        const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(hyper.batch_size));
        const LossTerms terms = make_terms(kind, train_set.interactions, negs,
                                           std::span<const std::size_t>(order.data() + b, end - b),
                                           hyper.wmf_negative_weight);
        loss += kind == ModelKind::lightgcn
                    ? lightgcn_step(e, terms, *prop, hyper.l2_reg, hyper.learning_rate)
                    : mf_step(e, grad, terms, hyper.l2_reg, hyper.learning_rate, touched_users, touched_items,
                              umark, imark);
      }
    }
    if (!std::isfinite(loss) || !e.all_finite()) {
      throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    log.stop_epoch = epoch;
    if (!early_stopping) continue;

    const EmbeddingTable f = scoring_embeddings(kind, e, prop.get());
    const double ndcg = rank_metrics(EmbeddingScorer(f), vd.targets, vd.exclude, vd.users, 20).mean_ndcg();
    log.valid_ndcg.push_back(ndcg);
    if (ndcg > best_ndcg) {
      best_ndcg = ndcg;
      best = e;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      log.early_stopped = true;
      break;
    }
  }
  if (!early_stopping) {
    best = std::move(e);
    log.best_epoch = log.stop_epoch;
  }
  log.wall_time_s = clock.seconds();
  return {TrainedModel(kind, std::move(best), hyper, train_ptr), log};
}

std::vector<int> score_topk(const TrainedModel& m, int user, int k, std::span<const int> exclude) {
  if (user < 0 || user >= m.params().num_users() || !m.knows_user(user)) {
    throw InvalidArgument("user " + std::to_string(user) + " has no trained embedding");
  }
  const int users[1] = {user};
  const RowMatrix s = m.score_users(users);
  return top_k(std::span<const double>(s.data(), static_cast<std::size_t>(s.cols())), k, exclude);
}

double validate(const TrainedModel& m, const InteractionSet& valid) {
  const ValidationData vd = make_validation(m.train_set(), valid);
  return rank_metrics(m, vd.targets, vd.exclude, vd.users, 20).mean_ndcg();
}

void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const EmbeddingTable& params) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << "recforget-embeddings 1\n";
  out << "kind " << to_string(kind) << "\n";
  out << "users " << params.num_users() << " items " << params.num_items() << " dim " << params.dim() << "\n";
  out << std::setprecision(17);
  for (const RowMatrix* m : {&params.users, &params.items}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) out << (c ? " " : "") << (*m)(r, c);
      out << "\n";
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::pair<ModelKind, EmbeddingTable> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string magic, key, kind_name;
  int version = 0;
  in >> magic >> version;
  if (magic != "recforget-embeddings" || version != 1) throw ParseError(1, "not a version-1 checkpoint");
  in >> key >> kind_name;
  if (key != "kind") throw ParseError(2, "expected kind");
  std::string ku, ki, kd;
  int nu = 0, ni = 0, dim = 0;
  in >> ku >> nu >> ki >> ni >> kd >> dim;
  if (ku != "users" || ki != "items" || kd != "dim" || nu < 0 || ni < 0 || dim < 1) {
    throw ParseError(3, "bad shape line");
  }
  EmbeddingTable t = EmbeddingTable::zeros(nu, ni, dim);
  for (RowMatrix* m : {&t.users, &t.items})
    for (Eigen::Index k = 0; k < m->size(); ++k)
      if (!(in >> m->data()[k])) throw ParseError(4, "truncated embedding values");
  return {model_kind_from_string(kind_name), std::move(t)};
}

}  // namespace recforget
