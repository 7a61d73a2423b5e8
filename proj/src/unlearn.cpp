#include "recforget/unlearn.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <random>
#include <thread>

namespace recforget {

std::string to_string(Method m) {
  switch (m) {
    case Method::retrain: return "Retrain";
    case Method::sisa: return "SISA";
    case Method::receraser: return "RecEraser";
    case Method::ultrare: return "UltraRE";
    case Method::scif: return "SCIF";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "retrain") return Method::retrain;
  if (l == "sisa") return Method::sisa;
  if (l == "receraser") return Method::receraser;
  if (l == "ultrare") return Method::ultrare;
  if (l == "scif") return Method::scif;
  throw InvalidArgument("unknown unlearning method '" + s + "'");
}

bool is_sharded(Method m) { return m == Method::sisa || m == Method::receraser || m == Method::ultrare; }

// ---------------------------------------------------------------------------------------------
// Ensembles

ShardEnsemble::ShardEnsemble(ShardPlan plan, std::vector<std::shared_ptr<const TrainedModel>> submodels,
                             RowMatrix weights)
    : plan_(std::move(plan)), submodels_(std::move(submodels)) {
  if (submodels_.empty() || static_cast<int>(submodels_.size()) != plan_.num_shards) {
    throw InvalidArgument("ensemble needs one submodel per shard");
  }
  for (const auto& m : submodels_) {
    if (!m) throw InvalidArgument("null submodel");
    if (m->num_items() != submodels_.front()->num_items() ||
        m->scoring().dim() != submodels_.front()->scoring().dim()) {
      throw InvalidArgument("submodels disagree on shape");
    }
  }
  const auto members = plan_.members();
  for (int s = 0; s < num_shards(); ++s) {
    const auto& f = submodels_[s]->scoring();
    RowVector prior = RowVector::Zero(f.dim());
    int n = 0;
    for (int u : members[s]) {
      if (!submodels_[s]->knows_user(u)) continue;
      prior += f.users.row(u);
      ++n;
    }
    if (n > 0) prior /= n;
    priors_.push_back(std::move(prior));
  }
  set_weights(std::move(weights));
}

void ShardEnsemble::set_weights(RowMatrix w) {
  const int S = num_shards();
  if (w.rows() != S || w.cols() != S) throw InvalidArgument("weight matrix does not match the shard count");
  for (int h = 0; h < S; ++h) {
    if ((w.row(h).array() < 0).any() || std::abs(w.row(h).sum() - 1.0) > 1e-9) {
      throw InvalidArgument("aggregator weights must lie on the simplex");
    }
  }
  weights_ = std::move(w);
  mean_weights_ = weights_.colwise().mean();
}

RowVector ShardEnsemble::weights_for(int user) const {
  const int h = user >= 0 && user < static_cast<int>(plan_.assignment.size()) ? plan_.assignment[user] : -1;
  return h >= 0 ? RowVector(weights_.row(h)) : mean_weights_;
}

RowVector ShardEnsemble::user_vector(int shard, int user) const {
  const auto& m = *submodels_.at(shard);
  return m.knows_user(user) ? RowVector(m.scoring().users.row(user)) : priors_[shard];
}

double ShardEnsemble::aggregate_score(int user, int item) const {
  const RowVector w = weights_for(user);
  double s = 0.0;
  for (int k = 0; k < num_shards(); ++k)
    s += w(k) * user_vector(k, user).dot(submodels_[k]->scoring().items.row(item));
  return s;
}

int ShardEnsemble::num_items() const { return submodels_.front()->num_items(); }

RowMatrix ShardEnsemble::score_users(std::span<const int> users) const {
  const auto rows = static_cast<Eigen::Index>(users.size());
  RowMatrix w(rows, num_shards());
  for (Eigen::Index r = 0; r < rows; ++r) w.row(r) = weights_for(users[r]);
  RowMatrix out = RowMatrix::Zero(rows, num_items());
  for (int k = 0; k < num_shards(); ++k) {
    RowMatrix block(rows, submodels_[k]->scoring().dim());
    for (Eigen::Index r = 0; r < rows; ++r) block.row(r) = w(r, k) * user_vector(k, users[r]);
    out.noalias() += block * submodels_[k]->scoring().items.transpose();
  }
  return out;
}

RowMatrix fit_aggregator(std::span<const std::shared_ptr<const TrainedModel>> submodels, const ShardPlan& plan,
                         const InteractionSet& remaining_train, AggregatorMode mode, std::uint64_t seed,
                         const AggregatorOptions& opts) {
  const int S = static_cast<int>(submodels.size());
  if (S < 1) throw InvalidArgument("aggregator needs at least one submodel");
  const RowMatrix uniform = RowMatrix::Constant(S, S, 1.0 / S);
  if (mode == AggregatorMode::uniform || S == 1 || remaining_train.empty()) return uniform;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> held(remaining_train.size());
  std::iota(held.begin(), held.end(), 0);
  std::shuffle(held.begin(), held.end(), rng);
  const auto n_held = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(opts.held_fraction * static_cast<double>(held.size()))));
  held.resize(std::min(n_held, held.size()));
  std::sort(held.begin(), held.end());

  const auto by_user = items_by_user(remaining_train);
  std::vector<std::shared_ptr<const TrainedModel>> models(submodels.begin(), submodels.end());
  const ShardEnsemble probe(plan, models, uniform);

  // Held positives whose user has a home shard and at least one non-interacted item.
  std::vector<std::size_t> usable;
  for (std::size_t k : held) {
    const auto& x = remaining_train.interactions[k];
    if (x.user < static_cast<int>(plan.assignment.size()) && plan.assignment[x.user] >= 0 &&
        static_cast<int>(by_user[x.user].size()) < remaining_train.num_items) {
      usable.push_back(k);
    }
  }
  if (usable.empty()) return uniform;

  // User vectors per shard for every held user, and positive item scores, are fixed.
  const auto P = static_cast<Eigen::Index>(usable.size());
  const int d = models.front()->scoring().dim();
  std::vector<RowMatrix> uvec(S, RowMatrix(P, d));
  RowMatrix pos_score(P, S);
  std::vector<int> home(usable.size());
  for (Eigen::Index t = 0; t < P; ++t) {
    const auto& x = remaining_train.interactions[usable[static_cast<std::size_t>(t)]];
    home[static_cast<std::size_t>(t)] = plan.assignment[x.user];
    for (int s = 0; s < S; ++s) {
      uvec[s].row(t) = probe.user_vector(s, x.user);
      pos_score(t, s) = uvec[s].row(t).dot(models[s]->scoring().items.row(x.item));
    }
  }

  RowMatrix logits = RowMatrix::Zero(S, S);
  const auto softmax = [](const RowVector& a) {
    const RowVector e = (a.array() - a.maxCoeff()).exp();
    return RowVector(e / e.sum());
  };
  std::uniform_int_distribution<int> pick(0, remaining_train.num_items - 1);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(P));
  std::iota(order.begin(), order.end(), 0);
  RowMatrix margin(P, S);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (Eigen::Index t = 0; t < P; ++t) {
      const auto& x = remaining_train.interactions[usable[static_cast<std::size_t>(t)]];
      const auto& pos = by_user[x.user];
      int j = pick(rng);
      while (std::binary_search(pos.begin(), pos.end(), j)) j = pick(rng);
      for (int s = 0; s < S; ++s) margin(t, s) = pos_score(t, s) - uvec[s].row(t).dot(models[s]->scoring().items.row(j));
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(opts.batch_size));
      RowMatrix w(S, S);
      for (int h = 0; h < S; ++h) w.row(h) = softmax(logits.row(h));
      RowMatrix gw = RowMatrix::Zero(S, S);
      for (std::size_t k = b; k < e; ++k) {
        const Eigen::Index t = order[k];
        const int h = home[static_cast<std::size_t>(t)];
        const double z = margin.row(t).dot(w.row(h));
        gw.row(h) += (1.0 / (1.0 + std::exp(-z)) - 1.0) * margin.row(t);
      }
      for (int h = 0; h < S; ++h) {
        const double c = w.row(h).dot(gw.row(h));
        logits.row(h) -= opts.learning_rate * (w.row(h).array() * (gw.row(h).array() - c)).matrix();
      }
    }
  }
  RowMatrix w(S, S);
  for (int h = 0; h < S; ++h) {
    w.row(h) = softmax(logits.row(h));
    w.row(h) /= w.row(h).sum();
  }
  return w;
}

// ---------------------------------------------------------------------------------------------
// Approximate unlearning

ParamSelection scif_affected_set(const InteractionSet& train, std::span<const int> unlearned_users) {
  std::vector<char> gone(train.num_users, 0);
  for (int u : unlearned_users) gone.at(u) = 1;
  std::vector<char> item_hit(train.num_items, 0);
  for (const auto& x : train.interactions)
    if (gone[x.user]) item_hit[x.item] = 1;
  std::vector<char> user_hit(train.num_users, 0);
  for (const auto& x : train.interactions)
    if (!gone[x.user] && item_hit[x.item]) user_hit[x.user] = 1;
  ParamSelection sel;
  for (int u = 0; u < train.num_users; ++u)
    if (user_hit[u]) sel.users.push_back(u);
  for (int i = 0; i < train.num_items; ++i)
    if (item_hit[i]) sel.items.push_back(i);
  return sel;
}

LossTerms model_terms(const TrainedModel& model, const InteractionSet& train, const std::vector<char>& user_mask,
                      std::uint64_t negative_seed) {
  const auto& h = model.hyper();
  if (model.kind() == ModelKind::wmf && h.wmf_dense) {
    std::vector<int> users;
    const auto counts = user_counts(train);
    for (int u = 0; u < train.num_users; ++u)
      if (user_mask.at(u) && counts[u] > 0) users.push_back(u);
    return dense_wmf_terms(train, users, h.wmf_negative_weight);
  }
  const NegativeSampleTable negs = sample_negatives(train, h.negatives_per_positive, negative_seed);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < train.size(); ++k)
    if (user_mask.at(train.interactions[k].user)) idx.push_back(k);
  return make_terms(model.kind(), train.interactions, negs, idx, h.wmf_negative_weight);
}

CgResult conjugate_gradient(const HessianOperator& op, const Vector& rhs, const Vector& preconditioner,
                            int max_iterations, double tolerance) {
  CgResult res;
  res.x = Vector::Zero(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  const Vector inv = preconditioner.cwiseMax(1e-12).cwiseInverse();
  Vector r = rhs;
  Vector z = inv.cwiseProduct(r);
  Vector p = z;
  double rz = r.dot(z);
  Vector x = res.x;
  res.relative_residual = 1.0;
  for (int it = 1; it <= max_iterations; ++it) {
    const Vector ap = op.apply(p);
    const double curvature = p.dot(ap);
    if (!(curvature > 0)) break;
    const double alpha = rz / curvature;
    x += alpha * p;
    r -= alpha * ap;
    const double rel = r.norm() / bnorm;
    res.iterations = it;
    if (rel < res.relative_residual) {
      res.relative_residual = rel;
      res.x = x;
    }
    if (rel < tolerance) {
      res.converged = true;
      break;
    }
    z = inv.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

std::pair<TrainedModel, InfluenceUpdate> scif_influence_update(const TrainedModel& model,
                                                               const InteractionSet& train,
                                                               const UnlearnSet& unlearn_set,
                                                               const InfluenceOptions& opts) {
  if (model.kind() == ModelKind::lightgcn) {
    throw InvalidArgument("influence unlearning is only defined for WMF and BPR");
  }
  std::vector<char> gone(train.num_users, 0);
  for (int u : unlearn_set.users) {
    if (u < 0 || u >= train.num_users) throw InvalidArgument("unlearned user out of range");
    gone[u] = 1;
  }
  std::vector<char> keep(gone.size());
  std::transform(gone.begin(), gone.end(), keep.begin(), [](char g) { return static_cast<char>(!g); });
  auto remaining = std::make_shared<const InteractionSet>(filter_users(train, keep));

  InfluenceUpdate upd;
  upd.affected = scif_affected_set(train, unlearn_set.users);
  EmbeddingTable params = model.params();
  const int dim = params.dim();
  upd.delta = Vector::Zero(upd.affected.size(dim));
  if (unlearn_set.users.empty()) {
    return {TrainedModel(model.kind(), std::move(params), model.hyper(), remaining), std::move(upd)};
  }

  const double l2 = model.hyper().l2_reg;
  std::vector<char> usel(train.num_users, 0), isel(train.num_items, 0);
  for (int u : upd.affected.users) usel[u] = 1;
  for (int i : upd.affected.items) isel[i] = 1;
  const auto touches = [&](const auto& t) {
    if constexpr (requires { t.item; }) return usel[t.user] || isel[t.item];
    else return usel[t.user] || isel[t.pos] || isel[t.neg];
  };

  // Only remaining terms that touch an affected row enter the restricted Hessian.
  LossTerms removed, rest;
  const auto& hp = model.hyper();
  if (model.kind() == ModelKind::wmf && hp.wmf_dense) {
    removed = model_terms(model, train, gone, opts.negative_seed);
    const LossTerms all_remaining = model_terms(model, train, keep, opts.negative_seed);
    for (const auto& t : all_remaining.points)
      if (touches(t)) rest.points.push_back(t);
  } else {
    const NegativeSampleTable negs = sample_negatives(train, hp.negatives_per_positive, opts.negative_seed);
    std::vector<std::size_t> gone_idx, keep_idx;
    for (std::size_t k = 0; k < train.size(); ++k) {
      const auto& x = train.interactions[k];
      if (gone[x.user]) gone_idx.push_back(k);
      else if (usel[x.user]) keep_idx.push_back(k);
      else {
        bool hit = isel[x.item];
        for (int j : negs.negatives(k)) hit = hit || isel[j];
        if (hit) keep_idx.push_back(k);
      }
    }
    removed = make_terms(model.kind(), train.interactions, negs, gone_idx, hp.wmf_negative_weight);
    const LossTerms near = make_terms(model.kind(), train.interactions, negs, keep_idx, hp.wmf_negative_weight);
    for (const auto& t : near.points)
      if (touches(t)) rest.points.push_back(t);
    for (const auto& t : near.pairs)
      if (touches(t)) rest.pairs.push_back(t);
  }

  const Vector g = gather(loss_grad(model.kind(), params, removed, l2), upd.affected);
  const HessianOperator h(model.kind(), params, rest, l2, nullptr, upd.affected, opts.damping);
  const CgResult cg = conjugate_gradient(h, g, h.diagonal(), opts.cg_max_iterations, opts.cg_tolerance);
  upd.delta = cg.x;
  upd.cg_iterations = cg.iterations;
  upd.residual_norm = cg.relative_residual;
  upd.converged = cg.converged;
  if (!cg.converged) {
    upd.warning = "conjugate gradient stopped after " + std::to_string(cg.iterations) +
                  " iterations at relative residual " + std::to_string(cg.relative_residual);
  }
  if (!upd.delta.allFinite()) throw TrainingError("influence update produced non-finite values");

  scatter(params, upd.affected, gather(params, upd.affected) + upd.delta);
  for (int u : unlearn_set.users) params.users.row(u).setZero();
  return {TrainedModel(model.kind(), std::move(params), model.hyper(), remaining), std::move(upd)};
}

// ---------------------------------------------------------------------------------------------
// Methods

namespace {

constexpr std::uint64_t kPlanStream = 10;
constexpr std::uint64_t kDivisionStream = 11;
constexpr std::uint64_t kAggregatorStream = 12;
constexpr std::uint64_t kInfluenceStream = 13;
constexpr std::uint64_t kShardStream = 100;

PartitionMode partition_mode(Method m) {
  switch (m) {
    case Method::receraser: return PartitionMode::balanced_kmeans;
    case Method::ultrare: return PartitionMode::balanced_ot;
    default: return PartitionMode::random;
  }
}

AggregatorMode aggregator_mode(Method m) {
  return m == Method::sisa ? AggregatorMode::uniform : AggregatorMode::learned;
}

std::vector<char> shard_mask(const ShardPlan& plan, int shard) {
  std::vector<char> mask(plan.assignment.size(), 0);
  for (std::size_t u = 0; u < plan.assignment.size(); ++u) mask[u] = plan.assignment[u] == shard;
  return mask;
}

TrainResult train_shard(const PreparedState& st, const InteractionSet& data, const ShardPlan& plan, int s) {
  const InteractionSet shard_valid = filter_users(*st.valid, shard_mask(plan, s));
  return train(st.kind, data, shard_valid, st.hyper, derive_seed(st.seed, kShardStream + static_cast<std::uint64_t>(s)));
}

// Runs jobs on up to `threads` host threads; each job's own duration is recorded.
void run_jobs(std::vector<std::function<void()>>& jobs, std::vector<double>& seconds, int threads) {
  seconds.assign(jobs.size(), 0.0);
  const auto timed = [&](std::size_t k) {
    Stopwatch w;
    jobs[k]();
    seconds[k] = w.seconds();
  };
  if (threads <= 1 || jobs.size() <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) timed(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < jobs.size(); k = next++) {
        try {
          timed(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int worker_count(const UnlearnConfig& cfg, int num_jobs_cap) {
  const int w = cfg.parallel_workers > 0 ? cfg.parallel_workers : cfg.num_shards;
  return std::max(1, std::min(w, std::max(1, num_jobs_cap)));
}

}  // namespace

RowMatrix division_features(const InteractionSet& train_set, const InteractionSet& valid, const Hyperparams& hyper,
                            int epochs, std::uint64_t seed) {
  Hyperparams h = hyper;
  h.max_epochs = std::max(1, epochs);
  h.wmf_dense = false;
  return train(ModelKind::wmf, train_set, valid, h, seed).model.scoring().users;
}

InteractionSet shard_data(const InteractionSet& train, const ShardPlan& plan, int shard) {
  if (shard < 0 || shard >= plan.num_shards) throw InvalidArgument("shard index out of range");
  return filter_users(train, shard_mask(plan, shard));
}

PreparedState prepare(Method method, ModelKind kind, std::shared_ptr<const InteractionSet> train_set,
                      std::shared_ptr<const InteractionSet> valid, const Hyperparams& hyper, std::uint64_t seed,
                      const UnlearnConfig& config, StageOneCache* cache) {
  if (!train_set || !valid) throw InvalidArgument("prepare needs training and validation data");
  if (method == Method::scif && kind == ModelKind::lightgcn) {
    throw InvalidArgument("SCIF does not support LightGCN");
  }
  PreparedState st;
  st.method = method;
  st.kind = kind;
  st.hyper = hyper;
  st.seed = seed;
  st.train = train_set;
  st.valid = valid;
  st.config = config;

  if (!is_sharded(method)) {
    if (cache != nullptr && cache->original) {
      st.model = cache->original;
    } else {
      TrainResult r = train(kind, *train_set, *valid, hyper, seed);
      st.logs.push_back(r.log);
      st.model = std::make_shared<const TrainedModel>(std::move(r.model));
      if (cache != nullptr) cache->original = st.model;
    }
    return st;
  }

  std::vector<int> users;
  const auto counts = user_counts(*train_set);
  for (int u = 0; u < train_set->num_users; ++u)
    if (counts[u] > 0) users.push_back(u);

  const PartitionMode mode = partition_mode(method);
  std::shared_ptr<const RowMatrix> features;
  if (mode != PartitionMode::random) {
    if (cache != nullptr && cache->division_features) {
      features = cache->division_features;
    } else {
      features = std::make_shared<const RowMatrix>(division_features(
          *train_set, *valid, hyper, config.division_epochs, derive_seed(seed, kDivisionStream)));
      if (cache != nullptr) cache->division_features = features;
    }
  }
  ShardPlan plan = balanced_partition(users, train_set->num_users, config.num_shards, mode, features.get(),
                                      derive_seed(seed, kPlanStream), config.partition);

  std::vector<std::shared_ptr<const TrainedModel>> subs(config.num_shards);
  st.logs.resize(config.num_shards);
  for (int s = 0; s < config.num_shards; ++s) {
    auto data = std::make_shared<const InteractionSet>(shard_data(*train_set, plan, s));
    TrainResult r = train_shard(st, *data, plan, s);
    st.logs[s] = r.log;
    subs[s] = std::make_shared<const TrainedModel>(std::move(r.model));
    st.shard_train.push_back(std::move(data));
  }
  RowMatrix w = fit_aggregator(subs, plan, *train_set, aggregator_mode(method),
                                     derive_seed(seed, kAggregatorStream), config.aggregator);
  st.ensemble = std::make_shared<const ShardEnsemble>(std::move(plan), std::move(subs), std::move(w));
  return st;
}

double list_schedule_makespan(std::span<const double> durations, int workers) {
  if (workers < 1) throw InvalidArgument("worker count must be positive");
  std::priority_queue<double, std::vector<double>, std::greater<>> free_at;
  for (int k = 0; k < workers; ++k) free_at.push(0.0);
  double makespan = 0.0;
  for (double d : durations) {
    const double start = free_at.top();
    free_at.pop();
    free_at.push(start + d);
    makespan = std::max(makespan, start + d);
  }
  return makespan;
}

const Scorer& UnlearnOutcome::scorer() const {
  return std::visit([](const auto& p) -> const Scorer& { return *p; }, serving);
}

UnlearnOutcome unlearn(const PreparedState& st, const UnlearnSet& request) {
  if (!st.train) throw InvalidArgument("state was not prepared");
  const InteractionSet& train_set = *st.train;
  std::vector<char> keep(train_set.num_users, 1);
  const auto counts = user_counts(train_set);
  for (int u : request.users) {
    if (u < 0 || u >= train_set.num_users || counts[u] == 0) {
      throw InvalidArgument("unlearned user " + std::to_string(u) + " is not in the training data");
    }
    keep[u] = 0;
  }

  UnlearnOutcome out;
  Stopwatch clock;
  out.remaining_train = std::make_shared<const InteractionSet>(filter_users(train_set, keep));

  if (request.users.empty()) {
    if (st.ensemble) {
      out.serving = st.ensemble;
      out.shard_train = st.shard_train;
    } else {
      out.serving = st.model;
    }
  } else if (st.method == Method::retrain) {
    TrainResult r = train(st.kind, *out.remaining_train, *st.valid, st.hyper, st.seed);
    out.serving = std::make_shared<const TrainedModel>(std::move(r.model));
  } else if (st.method == Method::scif) {
    InfluenceOptions opts = st.config.influence;
    opts.negative_seed = derive_seed(st.seed, kInfluenceStream);
    auto [model, upd] = scif_influence_update(*st.model, train_set, request, opts);
    out.serving = std::make_shared<const TrainedModel>(std::move(model));
    out.influence = std::move(upd);
  } else {
    const ShardPlan& plan = st.ensemble->plan();
    std::vector<char> touched(plan.num_shards, 0);
    for (int u : request.users)
      if (plan.assignment.at(u) >= 0) touched[plan.assignment[u]] = 1;

    std::vector<std::shared_ptr<const TrainedModel>> subs;
    for (int s = 0; s < plan.num_shards; ++s) subs.push_back(st.ensemble->submodel_ptr(s));
    out.shard_train = st.shard_train;

    std::vector<int> jobs_shards;
    for (int s = 0; s < plan.num_shards; ++s)
      if (touched[s]) jobs_shards.push_back(s);
    std::vector<std::function<void()>> jobs;
    std::vector<ShardJobTiming> job_info(jobs_shards.size());
    for (std::size_t k = 0; k < jobs_shards.size(); ++k) {
      const int s = jobs_shards[k];
      jobs.emplace_back([&, s, k] {
        auto data = std::make_shared<const InteractionSet>(shard_data(*out.remaining_train, plan, s));
        TrainResult r = train_shard(st, *data, plan, s);
        job_info[k] = {s, 0.0, r.log.stop_epoch, data->size()};
        subs[s] = std::make_shared<const TrainedModel>(std::move(r.model));
        out.shard_train[s] = std::move(data);
      });
    }
    out.workers = worker_count(st.config, static_cast<int>(jobs.size()));
    const int host_threads = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    std::vector<double> seconds;
    Stopwatch job_phase;
    run_jobs(jobs, seconds, std::min(out.workers, host_threads));
    const double job_phase_s = job_phase.seconds();
    for (std::size_t k = 0; k < jobs_shards.size(); ++k) {
      job_info[k].seconds = seconds[k];
      out.shard_jobs.push_back(job_info[k]);
    }
    out.shards_retrained = static_cast<int>(jobs_shards.size());

    RowMatrix w = fit_aggregator(subs, plan, *out.remaining_train, aggregator_mode(st.method),
                                       derive_seed(st.seed, kAggregatorStream), st.config.aggregator);
    out.serving = std::make_shared<const ShardEnsemble>(plan, std::move(subs), std::move(w));

    out.elapsed_s = clock.seconds();
    out.wall_time_s = (out.elapsed_s - job_phase_s) + list_schedule_makespan(seconds, out.workers);
    return out;
  }
  out.elapsed_s = clock.seconds();
  out.wall_time_s = out.elapsed_s;
  return out;
}

}  // namespace recforget
