#include "recforget/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace recforget {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (!(unlearn_ratio > 0 && unlearn_ratio < 1)) throw InvalidArgument("unlearn_ratio must lie in (0, 1)");
  if (num_shards < 1) throw InvalidArgument("num_shards must be at least 1");
  if (models.empty() || methods.empty() || strategies.empty()) {
    throw InvalidArgument("models, methods and strategies must be non-empty");
  }
  if (!(train_fraction > 0 && valid_fraction >= 0 && train_fraction + valid_fraction < 1)) {
    throw InvalidArgument("split fractions must leave a non-empty test part");
  }
  if (!(mio_holdout_fraction >= 0 && mio_holdout_fraction < 1)) {
    throw InvalidArgument("mio holdout fraction must lie in [0, 1)");
  }
  if (!(active_fraction > 0 && active_fraction < 1)) throw InvalidArgument("active fraction must lie in (0, 1)");
  if (top_k < 1) throw InvalidArgument("top_k must be positive");
  hyper.validate();
}

namespace {

// Reads `key` from `j` into `out` when present; records the key as known.
template <typename T>
void read(const json& j, const char* key, T& out, std::set<std::string>& known) {
  known.insert(key);
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw InvalidArgument("unknown config key '" + where + it.key() + "'");
  }
}

const json& object_at(const json& j, const char* key, std::set<std::string>& known) {
  static const json empty = json::object();
  known.insert(key);
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw InvalidArgument(std::string("config key '") + key + "' must be an object");
  return j.at(key);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");

  ExperimentConfig c;
  try {
    std::set<std::string> top;

    const json& ds = object_at(j, "dataset", top);
    std::set<std::string> dk;
    std::string path;
    read(ds, "name", c.dataset_name, dk);
    read(ds, "path", path, dk);
    read(ds, "min_interactions", c.min_interactions, dk);
    read(ds, "train_fraction", c.train_fraction, dk);
    read(ds, "valid_fraction", c.valid_fraction, dk);
    reject_unknown(ds, dk, "dataset.");
    if (!path.empty()) {
      c.dataset_path = path;
      if (c.dataset_path.is_relative() && !base_dir.empty()) c.dataset_path = base_dir / c.dataset_path;
    }

    std::vector<std::string> names;
    top.insert("models");
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& s : j.at("models").get<std::vector<std::string>>()) c.models.push_back(model_kind_from_string(s));
    }
    top.insert("methods");
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& s : j.at("methods").get<std::vector<std::string>>()) c.methods.push_back(method_from_string(s));
    }
    top.insert("strategies");
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j.at("strategies").get<std::vector<std::string>>())
        c.strategies.push_back(strategy_from_string(s));
    }
    read(j, "unlearn_ratio", c.unlearn_ratio, top);
    std::string basis = "interactions";
    read(j, "ratio_basis", basis, top);
    if (basis == "interactions") c.ratio_basis = RatioBasis::interactions;
    else if (basis == "users") c.ratio_basis = RatioBasis::users;
    else throw InvalidArgument("ratio_basis must be 'interactions' or 'users'");
    read(j, "num_shards", c.num_shards, top);
    read(j, "parallel_workers", c.unlearn.parallel_workers, top);
    read(j, "division_epochs", c.unlearn.division_epochs, top);

    const json& seeds = object_at(j, "seeds", top);
    std::set<std::string> sk;
    read(seeds, "split", c.seeds.split, sk);
    read(seeds, "holdout", c.seeds.holdout, sk);
    read(seeds, "selection", c.seeds.selection, sk);
    read(seeds, "training", c.seeds.training, sk);
    read(seeds, "mio", c.seeds.mio, sk);
    reject_unknown(seeds, sk, "seeds.");

    const json& hp = object_at(j, "hyperparams", top);
    std::set<std::string> hk;
    read(hp, "embedding_dim", c.hyper.embedding_dim, hk);
    read(hp, "batch_size", c.hyper.batch_size, hk);
    read(hp, "learning_rate", c.hyper.learning_rate, hk);
    read(hp, "max_epochs", c.hyper.max_epochs, hk);
    read(hp, "patience", c.hyper.patience, hk);
    read(hp, "negatives_per_positive", c.hyper.negatives_per_positive, hk);
    read(hp, "wmf_negative_weight", c.hyper.wmf_negative_weight, hk);
    read(hp, "lightgcn_layers", c.hyper.lightgcn_layers, hk);
    read(hp, "l2_reg", c.hyper.l2_reg, hk);
    read(hp, "init_std", c.hyper.init_std, hk);
    read(hp, "wmf_dense", c.hyper.wmf_dense, hk);
    reject_unknown(hp, hk, "hyperparams.");

    const json& part = object_at(j, "partition", top);
    std::set<std::string> pk;
    read(part, "kmeans_iterations", c.unlearn.partition.kmeans_iterations, pk);
    read(part, "sinkhorn_epsilon", c.unlearn.partition.sinkhorn_epsilon, pk);
    read(part, "sinkhorn_iterations", c.unlearn.partition.sinkhorn_iterations, pk);
    reject_unknown(part, pk, "partition.");

    const json& agg = object_at(j, "aggregator", top);
    std::set<std::string> ak;
    read(agg, "held_fraction", c.unlearn.aggregator.held_fraction, ak);
    read(agg, "learning_rate", c.unlearn.aggregator.learning_rate, ak);
    read(agg, "epochs", c.unlearn.aggregator.epochs, ak);
    read(agg, "batch_size", c.unlearn.aggregator.batch_size, ak);
    reject_unknown(agg, ak, "aggregator.");

    const json& inf = object_at(j, "influence", top);
    std::set<std::string> ik;
    read(inf, "damping", c.unlearn.influence.damping, ik);
    read(inf, "cg_max_iterations", c.unlearn.influence.cg_max_iterations, ik);
    read(inf, "cg_tolerance", c.unlearn.influence.cg_tolerance, ik);
    reject_unknown(inf, ik, "influence.");

    const json& mio = object_at(j, "mio", top);
    std::set<std::string> mk;
    read(mio, "hidden", c.mio.hidden, mk);
    read(mio, "epochs", c.mio.epochs, mk);
    read(mio, "learning_rate", c.mio.learning_rate, mk);
    read(mio, "holdout_fraction", c.mio_holdout_fraction, mk);
    reject_unknown(mio, mk, "mio.");

    read(j, "active_fraction", c.active_fraction, top);
    read(j, "top_k", c.top_k, top);
    read(j, "include_learn_row", c.include_learn_row, top);

    const json& sw = object_at(j, "sweep", top);
    std::set<std::string> wk;
    read(sw, "shards", c.sweep_shards, wk);
    read(sw, "ratios", c.sweep_ratios, wk);
    reject_unknown(sw, wk, "sweep.");

    std::string out;
    read(j, "output_dir", out, top);
    if (!out.empty()) {
      c.output_dir = out;
      if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
    }
    reject_unknown(j, top, "");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
  c.unlearn.num_shards = c.num_shards;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------------------------
// Data stage

ExperimentData make_experiment_data(InteractionSet full, const ExperimentConfig& cfg) {
  ExperimentData d;
  d.full = std::move(full);
  d.split = split(d.full, cfg.train_fraction, cfg.valid_fraction, cfg.seeds.split);

  std::vector<int> users(d.full.num_users);
  std::iota(users.begin(), users.end(), 0);
  std::mt19937_64 rng(cfg.seeds.holdout);
  std::shuffle(users.begin(), users.end(), rng);
  const auto n = static_cast<std::size_t>(std::llround(cfg.mio_holdout_fraction * d.full.num_users));
  d.holdout_users.assign(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(std::min(n, users.size())));
  std::sort(d.holdout_users.begin(), d.holdout_users.end());

  std::vector<char> keep(d.full.num_users, 1);
  for (int u : d.holdout_users) keep[u] = 0;
  d.train = std::make_shared<const InteractionSet>(filter_users(d.split.train, keep));
  d.valid = std::make_shared<const InteractionSet>(filter_users(d.split.valid, keep));
  d.test = std::make_shared<const InteractionSet>(filter_users(d.split.test, keep));
  d.feature_items = items_by_user(d.split.train);
  if (d.train->empty()) throw EmptyDatasetError("no training interactions remain after the holdout reservation");
  return d;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.dataset_path.empty()) throw InvalidArgument("config has no dataset path");
  return make_experiment_data(preprocess(load_ratings(cfg.dataset_path), cfg.min_interactions), cfg);
}

std::vector<std::pair<int, int>> shard_composition_report(const ShardPlan& plan, const GroupAssignment& groups) {
  std::vector<std::pair<int, int>> out(plan.num_shards, {0, 0});
  const auto place = [&](int u, bool active) {
    if (u < 0 || u >= static_cast<int>(plan.assignment.size()) || plan.assignment[u] < 0) {
      throw InvalidArgument("user " + std::to_string(u) + " is not covered by the shard plan");
    }
    auto& cell = out[plan.assignment[u]];
    (active ? cell.first : cell.second) += 1;
  };
  for (int u : groups.active) place(u, true);
  for (int u : groups.inactive) place(u, false);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Runs

namespace {

std::string fmt(double v) { return format_number(v); }

class Session {
 public:
  explicit Session(const ExperimentData& data) : data_(data), eval_(*data.test, *data.train) {
    const auto counts = user_counts(*data.train);
    for (int u = 0; u < data.train->num_users; ++u)
      if (counts[u] > 0) training_users_.push_back(u);
    graph_ = build_graph(*data.train);
  }

  void run(const ExperimentConfig& cfg, ExperimentOutput& out);

 private:
  struct KindState {
    StageOneCache cache;
    std::optional<MioModel> mio;
    std::map<std::pair<Method, int>, std::shared_ptr<const PreparedState>> states;
    std::map<std::pair<Method, int>, std::string> failures;
  };

  std::shared_ptr<const PreparedState> state_for(const ExperimentConfig& cfg, ModelKind kind, Method m,
                                                 KindState& ks, ExperimentOutput& out);
  const MioModel& mio_for(const ExperimentConfig& cfg, ModelKind kind, KindState& ks, ExperimentOutput& out);
  void evaluate(const ExperimentConfig& cfg, ModelKind kind, const std::string& method, const UnlearnSet& set,
                const Scorer& scorer, const EmbeddingTable* scoring, const ShardEnsemble* ensemble,
                KindState& ks, ResultRow& row, ExperimentOutput& out);

  const ExperimentData& data_;
  EvalData eval_;
  std::vector<int> training_users_;
  BipartiteGraph graph_;
  std::map<ModelKind, KindState> kinds_;
};

std::shared_ptr<const PreparedState> Session::state_for(const ExperimentConfig& cfg, ModelKind kind, Method m,
                                                        KindState& ks, ExperimentOutput& out) {
  const int shards = is_sharded(m) ? cfg.num_shards : 0;
  const auto key = std::make_pair(m, shards);
  if (auto it = ks.states.find(key); it != ks.states.end()) return it->second;
  if (auto it = ks.failures.find(key); it != ks.failures.end()) throw TrainingError(it->second);
  UnlearnConfig uc = cfg.unlearn;
  uc.num_shards = cfg.num_shards;
  try {
    Stopwatch w;
    auto st = std::make_shared<const PreparedState>(
        prepare(m, kind, data_.train, data_.valid, cfg.hyper, cfg.seeds.training, uc, &ks.cache));
    std::ostringstream line;
    line << "stage1 model=" << to_string(kind) << " method=" << to_string(m);
    if (is_sharded(m)) line << " shards=" << cfg.num_shards;
    line << " seconds=" << fmt(w.seconds());
    for (std::size_t s = 0; s < st->logs.size(); ++s) {
      line << (is_sharded(m) ? " shard" + std::to_string(s) : std::string(" original"))
           << "_stop_epoch=" << st->logs[s].stop_epoch;
    }
    if (is_sharded(m)) line << " submodel_validation=shard_users_validation_interactions";
    out.log.push_back(line.str());
    ks.states[key] = st;
    return st;
  } catch (const std::exception& e) {
    ks.failures[key] = e.what();
    out.log.push_back("stage1 FAILED model=" + to_string(kind) + " method=" + to_string(m) + ": " + e.what());
    throw;
  }
}

const MioModel& Session::mio_for(const ExperimentConfig& cfg, ModelKind kind, KindState& ks, ExperimentOutput& out) {
  if (ks.mio) return *ks.mio;
  if (!ks.cache.original) state_for(cfg, kind, Method::retrain, ks, out);
  const EmbeddingTable& scoring = ks.cache.original->scoring();
  std::vector<int> nonmembers;
  for (int u : data_.holdout_users)
    if (!data_.feature_items[u].empty()) nonmembers.push_back(u);
  if (nonmembers.empty()) throw InvalidArgument("no holdout users available for the membership oracle");
  const RowMatrix pos = mio_feature_matrix(scoring, training_users_, data_.feature_items);
  const RowMatrix neg = mio_feature_matrix(scoring, nonmembers, data_.feature_items);
  ks.mio = train_mio(pos, neg, cfg.seeds.mio, cfg.mio);
  out.log.push_back("mio model=" + to_string(kind) + " members=" + std::to_string(pos.rows()) +
                    " nonmembers=" + std::to_string(neg.rows()) + " balanced_per_class=" +
                    std::to_string(std::min(pos.rows(), neg.rows())));
  return *ks.mio;
}

void Session::evaluate(const ExperimentConfig& cfg, ModelKind kind, const std::string& method,
                       const UnlearnSet& set, const Scorer& scorer, const EmbeddingTable* scoring,
                       const ShardEnsemble* ensemble, KindState& ks, ResultRow& row, ExperimentOutput& out) {
  std::vector<int> remaining;
  std::set_difference(training_users_.begin(), training_users_.end(), set.users.begin(), set.users.end(),
                      std::back_inserter(remaining));
  const PerUserMetrics pm = utility(scorer, eval_, remaining, cfg.top_k);
  row.metrics.ndcg20 = pm.mean_ndcg();
  row.metrics.hr20 = pm.mean_hr();
  const GroupAssignment groups = assign_groups(*data_.train, remaining, cfg.active_fraction);
  try {
    row.metrics.a_igf = a_igf(pm, groups);
  } catch (const InvalidArgument& e) {
    out.log.push_back("a_igf skipped model=" + to_string(kind) + " method=" + method + ": " + e.what());
  }
  if (ensemble != nullptr) {
    const ShardUtility su = shard_gf(*ensemble, *data_.test, remaining, cfg.top_k);
    row.metrics.shard_gf = su.variance;
    if (!su.excluded.empty()) {
      out.log.push_back("shard_gf model=" + to_string(kind) + " method=" + method + " strategy=" + row.strategy +
                        " excluded_shards=" + std::to_string(su.excluded.size()));
    }
    const auto comp = shard_composition_report(ensemble->plan(), groups);
    for (int s = 0; s < static_cast<int>(comp.size()); ++s) {
      out.composition.push_back({to_string(kind), method, row.strategy, ensemble->num_shards(), s, comp[s].first,
                                 comp[s].second});
    }
  }
  if (scoring != nullptr && !set.users.empty() && !data_.holdout_users.empty()) {
    const MioModel& mio = mio_for(cfg, kind, ks, out);
    std::vector<int> holdout;
    for (int u : data_.holdout_users)
      if (!data_.feature_items[u].empty()) holdout.push_back(u);
    row.metrics.mio_accuracy =
        mio_accuracy(mio, *scoring, set.users, holdout, data_.feature_items, derive_seed(cfg.seeds.mio, 1));
  }
}

void Session::run(const ExperimentConfig& cfg, ExperimentOutput& out) {
  cfg.validate();
  out.log.push_back("config dataset=" + cfg.dataset_name + " ratio=" + fmt(cfg.unlearn_ratio) +
                    " shards=" + std::to_string(cfg.num_shards) + " workers=" +
                    std::to_string(cfg.unlearn.parallel_workers > 0 ? cfg.unlearn.parallel_workers : cfg.num_shards) +
                    " seeds split=" + std::to_string(cfg.seeds.split) + " holdout=" + std::to_string(cfg.seeds.holdout) +
                    " selection=" + std::to_string(cfg.seeds.selection) + " training=" +
                    std::to_string(cfg.seeds.training) + " mio=" + std::to_string(cfg.seeds.mio));

  // Stage II: unlearning sets, shared by every method and model kind.
  std::map<Strategy, UnlearnSet> sets;
  std::map<Strategy, std::string> set_errors;
  for (Strategy s : cfg.strategies) {
    try {
      sets[s] = select_unlearn_set(graph_, *data_.train, s, cfg.unlearn_ratio, cfg.seeds.selection, cfg.ratio_basis);
      out.log.push_back("stage2 strategy=" + to_string(s) + " users=" + std::to_string(sets[s].users.size()) +
                        " interactions=" + std::to_string(sets[s].interactions.size()));
    } catch (const std::exception& e) {
      set_errors[s] = e.what();
      out.log.push_back("stage2 FAILED strategy=" + to_string(s) + ": " + e.what());
    }
  }

  for (ModelKind kind : cfg.models) {
    KindState& ks = kinds_[kind];
    for (Strategy strat : cfg.strategies) {
      const auto base_row = [&](const std::string& method) {
        ResultRow r;
        r.dataset = cfg.dataset_name;
        r.model = to_string(kind);
        r.method = method;
        r.strategy = to_string(strat);
        r.ratio = cfg.unlearn_ratio;
        r.shards = cfg.num_shards;
        r.seeds = cfg.seeds;
        if (sets.count(strat)) {
          r.unlearned_users = static_cast<int>(sets[strat].users.size());
          r.unlearned_interactions = static_cast<int>(sets[strat].interactions.size());
        }
        return r;
      };

      if (cfg.include_learn_row) {
        ResultRow row = base_row("Learn");
        try {
          if (set_errors.count(strat)) throw InvalidArgument(set_errors[strat]);
          if (!ks.cache.original) state_for(cfg, kind, Method::retrain, ks, out);
          const TrainedModel& m = *ks.cache.original;
          evaluate(cfg, kind, "Learn", sets[strat], m, &m.scoring(), nullptr, ks, row, out);
        } catch (const std::exception& e) {
          row.ok = false;
          row.error = e.what();
        }
        out.rows.push_back(std::move(row));
      }

      for (Method method : cfg.methods) {
        ResultRow row = base_row(to_string(method));
        try {
          if (set_errors.count(strat)) throw InvalidArgument(set_errors[strat]);
          const auto st = state_for(cfg, kind, method, ks, out);
          const UnlearnSet& set = sets[strat];
          const UnlearnOutcome o = unlearn(*st, set);
          row.metrics.wall_time_s = o.wall_time_s;
          row.elapsed_s = o.elapsed_s;
          row.shards_retrained = o.shards_retrained;

          std::ostringstream line;
          line << "stage3 model=" << row.model << " method=" << row.method << " strategy=" << row.strategy
               << " ratio=" << fmt(row.ratio) << " wall_time_s=" << fmt(o.wall_time_s)
               << " elapsed_s=" << fmt(o.elapsed_s);
          if (is_sharded(method)) {
            line << " shards=" << cfg.num_shards << " shards_retrained=" << o.shards_retrained
                 << " workers=" << o.workers << " job_seconds=";
            for (std::size_t k = 0; k < o.shard_jobs.size(); ++k)
              line << (k ? "," : "") << o.shard_jobs[k].shard << ":" << fmt(o.shard_jobs[k].seconds) << "s/"
                   << o.shard_jobs[k].stop_epoch << "ep/" << o.shard_jobs[k].interactions;
          }
          if (o.influence) {
            line << " affected_users=" << o.influence->affected.users.size()
                 << " affected_items=" << o.influence->affected.items.size()
                 << " cg_iterations=" << o.influence->cg_iterations
                 << " cg_residual=" << fmt(o.influence->residual_norm);
            if (!o.influence->warning.empty()) line << " warning=\"" << o.influence->warning << "\"";
          }
          out.log.push_back(line.str());

          if (const auto* ens = std::get_if<std::shared_ptr<const ShardEnsemble>>(&o.serving)) {
            evaluate(cfg, kind, row.method, set, **ens, nullptr, ens->get(), ks, row, out);
          } else {
            const auto& m = std::get<std::shared_ptr<const TrainedModel>>(o.serving);
            evaluate(cfg, kind, row.method, set, *m, &m->scoring(), nullptr, ks, row, out);
          }
        } catch (const std::exception& e) {
          row.ok = false;
          row.error = e.what();
          out.log.push_back("cell FAILED model=" + row.model + " method=" + row.method + " strategy=" + row.strategy +
                            ": " + e.what());
        }
        out.rows.push_back(std::move(row));
      }
    }
  }
}

void log_data(const ExperimentData& d, ExperimentOutput& out) {
  out.log.push_back("data users=" + std::to_string(d.full.num_users) + " items=" + std::to_string(d.full.num_items) +
                    " interactions=" + std::to_string(d.full.size()) + " train=" + std::to_string(d.split.train.size()) +
                    " valid=" + std::to_string(d.split.valid.size()) + " test=" + std::to_string(d.split.test.size()));
  out.log.push_back("holdout users=" + std::to_string(d.holdout_users.size()) +
                    " (reserved before stage I, excluded from every training set) train_after_holdout=" +
                    std::to_string(d.train->size()));
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
  ExperimentOutput out;
  log_data(data, out);
  Session(data).run(cfg, out);
  return out;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, load_experiment_data(cfg));
}

SweepDim sweep_dim_from_string(const std::string& s) {
  if (s == "shards") return SweepDim::shards;
  if (s == "ratio") return SweepDim::ratio;
  throw InvalidArgument("sweep dimension must be 'shards' or 'ratio'");
}

ExperimentOutput sweep(const ExperimentConfig& cfg, const ExperimentData& data, SweepDim dim,
                       const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  ExperimentOutput out;
  log_data(data, out);
  Session session(data);
  for (double v : values) {
    ExperimentConfig c = cfg;
    if (dim == SweepDim::shards) {
      if (v < 1 || v != std::floor(v)) throw InvalidArgument("shard counts must be positive integers");
      c.num_shards = static_cast<int>(v);
      c.unlearn.num_shards = c.num_shards;
    } else {
      c.unlearn_ratio = v;
    }
    session.run(c, out);
  }
  return out;
}

ExperimentOutput sweep(const ExperimentConfig& cfg, SweepDim dim, const std::vector<double>& values) {
  cfg.validate();
  return sweep(cfg, load_experiment_data(cfg), dim, values);
}

// ---------------------------------------------------------------------------------------------
// Output

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool ResultRow::operator==(const ResultRow& o) const {
  return dataset == o.dataset && model == o.model && method == o.method && strategy == o.strategy &&
         ratio == o.ratio && shards == o.shards && ok == o.ok && error == o.error &&
         metrics.ndcg20 == o.metrics.ndcg20 && metrics.hr20 == o.metrics.hr20 &&
         metrics.mio_accuracy == o.metrics.mio_accuracy && metrics.a_igf == o.metrics.a_igf &&
         metrics.shard_gf == o.metrics.shard_gf && metrics.wall_time_s == o.metrics.wall_time_s &&
         elapsed_s == o.elapsed_s && shards_retrained == o.shards_retrained &&
         unlearned_users == o.unlearned_users && unlearned_interactions == o.unlearned_interactions &&
         seeds.split == o.seeds.split && seeds.holdout == o.seeds.holdout && seeds.selection == o.seeds.selection &&
         seeds.training == o.seeds.training && seeds.mio == o.seeds.mio;
}

namespace {

const std::vector<std::string> kResultColumns = {
    "dataset",     "model",         "method",           "strategy",         "ratio",
    "shards",      "status",        "ndcg20",           "hr20",             "mio_accuracy",
    "a_igf",       "shard_gf",      "wall_time_s",      "elapsed_s",        "shards_retrained",
    "unlearned_users", "unlearned_interactions", "seed_split", "seed_holdout", "seed_selection",
    "seed_training", "seed_mio",    "error"};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

// Splits CSV text into records of fields, honouring quoted fields.
std::vector<std::vector<std::string>> csv_records(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"' && k + 1 < text.size() && text[k + 1] == '"') {
        field += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError(rows.size() + 1, "unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

double to_double(const std::string& s, std::size_t line) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "bad number '" + s + "'");
  }
  if (used != s.size()) throw ParseError(line, "bad number '" + s + "'");
  return v;
}

std::optional<double> to_opt(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  return to_double(s, line);
}

std::uint64_t to_u64(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(line, "bad integer '" + s + "'");
}

}  // namespace

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  for (std::size_t k = 0; k < kResultColumns.size(); ++k) out << (k ? "," : "") << kResultColumns[k];
  out << "\n";
  for (const auto& r : rows) {
    const std::vector<std::string> f = {csv_field(r.dataset),
                                        csv_field(r.model),
                                        csv_field(r.method),
                                        csv_field(r.strategy),
                                        format_number(r.ratio),
                                        std::to_string(r.shards),
                                        r.ok ? "ok" : "failed",
                                        r.ok ? format_number(r.metrics.ndcg20) : "",
                                        r.ok ? format_number(r.metrics.hr20) : "",
                                        opt(r.metrics.mio_accuracy),
                                        opt(r.metrics.a_igf),
                                        opt(r.metrics.shard_gf),
                                        r.ok ? format_number(r.metrics.wall_time_s) : "",
                                        r.ok ? format_number(r.elapsed_s) : "",
                                        std::to_string(r.shards_retrained),
                                        std::to_string(r.unlearned_users),
                                        std::to_string(r.unlearned_interactions),
                                        std::to_string(r.seeds.split),
                                        std::to_string(r.seeds.holdout),
                                        std::to_string(r.seeds.selection),
                                        std::to_string(r.seeds.training),
                                        std::to_string(r.seeds.mio),
                                        csv_field(r.error)};
    for (std::size_t k = 0; k < f.size(); ++k) out << (k ? "," : "") << f[k];
    out << "\n";
  }
  return out.str();
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  const auto records = csv_records(text);
  if (records.empty() || records.front() != kResultColumns) throw ParseError(1, "unexpected results header");
  std::vector<ResultRow> rows;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& f = records[k];
    const std::size_t line = k + 1;
    if (f.size() != kResultColumns.size()) throw ParseError(line, "wrong number of fields");
    ResultRow r;
    r.dataset = f[0];
    r.model = f[1];
    r.method = f[2];
    r.strategy = f[3];
    r.ratio = to_double(f[4], line);
    r.shards = static_cast<int>(to_u64(f[5], line));
    if (f[6] != "ok" && f[6] != "failed") throw ParseError(line, "bad status '" + f[6] + "'");
    r.ok = f[6] == "ok";
    if (r.ok) {
      r.metrics.ndcg20 = to_double(f[7], line);
      r.metrics.hr20 = to_double(f[8], line);
      r.metrics.wall_time_s = to_double(f[12], line);
      r.elapsed_s = to_double(f[13], line);
    }
    r.metrics.mio_accuracy = to_opt(f[9], line);
    r.metrics.a_igf = to_opt(f[10], line);
    r.metrics.shard_gf = to_opt(f[11], line);
    r.shards_retrained = static_cast<int>(to_u64(f[14], line));
    r.unlearned_users = static_cast<int>(to_u64(f[15], line));
    r.unlearned_interactions = static_cast<int>(to_u64(f[16], line));
    r.seeds.split = to_u64(f[17], line);
    r.seeds.holdout = to_u64(f[18], line);
    r.seeds.selection = to_u64(f[19], line);
    r.seeds.training = to_u64(f[20], line);
    r.seeds.mio = to_u64(f[21], line);
    r.error = f[22];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string composition_csv(const std::vector<CompositionRow>& rows) {
  std::ostringstream out;
  out << "model,method,strategy,shards,shard,active,inactive,total\n";
  for (const auto& r : rows) {
    out << csv_field(r.model) << "," << csv_field(r.method) << "," << csv_field(r.strategy) << "," << r.shards << ","
        << r.shard << "," << r.active << "," << r.inactive << "," << (r.active + r.inactive) << "\n";
  }
  return out.str();
}

void emit_results(const ExperimentOutput& out, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const auto write = [&](const char* name, const std::string& body) {
    const auto path = out_dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << body;
    if (!f) throw IoError("failed writing " + path.string());
  };
  write("results.csv", results_csv(out.rows));
  write("shard_composition.csv", composition_csv(out.composition));
  std::string log;
  for (const auto& l : out.log) log += l + "\n";
  write("run_log.txt", log);
}

}  // namespace recforget
