#include "recforget/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace recforget {

EvalData::EvalData(const InteractionSet& test, const InteractionSet& exclude_set)
    : targets(items_by_user(test)), exclude(items_by_user(exclude_set)) {}

PerUserMetrics utility(const Scorer& scorer, const EvalData& data, std::span<const int> users, int k) {
  if (!users.empty()) return rank_metrics(scorer, data.targets, data.exclude, users, k);
  std::vector<int> all(data.targets.size());
  std::iota(all.begin(), all.end(), 0);
  return rank_metrics(scorer, data.targets, data.exclude, all, k);
}

double ndcg_at_k(const Scorer& scorer, const InteractionSet& test, const InteractionSet& exclude,
                 std::span<const int> users, int k) {
  return utility(scorer, EvalData(test, exclude), users, k).mean_ndcg();
}

double hr_at_k(const Scorer& scorer, const InteractionSet& test, const InteractionSet& exclude,
               std::span<const int> users, int k) {
  return utility(scorer, EvalData(test, exclude), users, k).mean_hr();
}

GroupAssignment assign_groups(const InteractionSet& train, std::span<const int> remaining_users,
                              double active_fraction) {
  if (!(active_fraction >= 0 && active_fraction <= 1)) throw InvalidArgument("active fraction outside [0, 1]");
  const auto counts = user_counts(train);
  std::vector<int> order(remaining_users.begin(), remaining_users.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts.at(a) > counts.at(b); });
  const auto n_active = static_cast<std::size_t>(std::ceil(active_fraction * static_cast<double>(order.size()) - 1e-9));
  GroupAssignment g;
  g.active.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_active));
  g.inactive.assign(order.begin() + static_cast<std::ptrdiff_t>(n_active), order.end());
  std::sort(g.active.begin(), g.active.end());
  std::sort(g.inactive.begin(), g.inactive.end());
  return g;
}

double a_igf(const PerUserMetrics& metrics, const GroupAssignment& groups) {
  double sum[2] = {0.0, 0.0};
  int n[2] = {0, 0};
  for (std::size_t k = 0; k < metrics.users.size(); ++k) {
    const int u = metrics.users[k];
    int side = -1;
    if (std::binary_search(groups.active.begin(), groups.active.end(), u)) side = 0;
    else if (std::binary_search(groups.inactive.begin(), groups.inactive.end(), u)) side = 1;
    if (side < 0) continue;
    sum[side] += metrics.ndcg[k];
    ++n[side];
  }
  if (n[0] == 0 || n[1] == 0) throw InvalidArgument("both groups need at least one user with test items");
  return sum[0] / n[0] - sum[1] / n[1];
}

double a_igf(const Scorer& scorer, const EvalData& data, const GroupAssignment& groups, int k) {
  std::vector<int> users = groups.active;
  users.insert(users.end(), groups.inactive.begin(), groups.inactive.end());
  return a_igf(utility(scorer, data, users, k), groups);
}

double population_variance(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(values.size());
}

ShardUtility shard_gf(const ShardEnsemble& ensemble, const InteractionSet& test, std::span<const int> users,
                      int k) {
  const auto targets = items_by_user(test);
  std::vector<char> allowed;
  if (!users.empty()) {
    allowed.assign(ensemble.plan().assignment.size(), 0);
    for (int u : users)
      if (u >= 0 && u < static_cast<int>(allowed.size())) allowed[u] = 1;
  }
  const auto members = ensemble.plan().members();
  ShardUtility out;
  for (int s = 0; s < ensemble.num_shards(); ++s) {
    std::vector<int> shard_users;
    for (int u : members[s])
      if (allowed.empty() || allowed[u]) shard_users.push_back(u);
    const auto& sub = ensemble.submodel(s);
    const auto exclude = items_by_user(sub.train_set());
    const PerUserMetrics m = rank_metrics(sub, targets, exclude, shard_users, k);
    if (m.users.empty()) {
      out.excluded.push_back(s);
      continue;
    }
    out.shards.push_back(s);
    out.ndcg.push_back(m.mean_ndcg());
  }
  out.variance = population_variance(out.ndcg);
  return out;
}

// ---------------------------------------------------------------------------------------------

Vector mio_features(const EmbeddingTable& scoring, int user, std::span<const int> items) {
  if (user < 0 || user >= scoring.num_users()) throw InvalidArgument("user out of range for features");
  if (items.empty()) throw InvalidArgument("user " + std::to_string(user) + " has no interactions to featurise");
  const int d = scoring.dim();
  Vector f(2 * d);
  f.head(d) = scoring.users.row(user).transpose();
  Vector mean = Vector::Zero(d);
  for (int i : items) mean += scoring.items.row(i).transpose();
  f.tail(d) = mean / static_cast<double>(items.size());
  return f;
}

RowMatrix mio_feature_matrix(const EmbeddingTable& scoring, std::span<const int> users,
                             const std::vector<std::vector<int>>& items_of) {
  RowMatrix out(static_cast<Eigen::Index>(users.size()), 2 * scoring.dim());
  for (std::size_t r = 0; r < users.size(); ++r) {
    const int u = users[r];
    if (u < 0 || u >= static_cast<int>(items_of.size())) throw InvalidArgument("user has no interaction list");
    out.row(static_cast<Eigen::Index>(r)) = mio_features(scoring, u, items_of[u]).transpose();
  }
  return out;
}

MioModel::MioModel(Vector mean, Vector scale, std::vector<Layer> layers)
    : mean_(std::move(mean)), scale_(std::move(scale)), layers_(std::move(layers)) {
  if (mean_.size() != scale_.size() || layers_.empty() || layers_.front().weight.cols() != mean_.size() ||
      layers_.back().weight.rows() != 2) {
    throw InvalidArgument("inconsistent membership model shapes");
  }
}

namespace {

RowMatrix standardise(const RowMatrix& x, const Vector& mean, const Vector& scale) {
  return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

RowMatrix softmax_rows(const RowMatrix& z) {
  RowMatrix p = z.colwise() - z.rowwise().maxCoeff();
  p = p.array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

}  // namespace

RowMatrix MioModel::predict_proba(const RowMatrix& features) const {
  if (features.cols() != feature_dim()) throw InvalidArgument("feature width does not match the model");
  RowMatrix h = standardise(features, mean_, scale_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    RowMatrix z = h * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    h = l + 1 < layers_.size() ? RowMatrix(z.cwiseMax(0.0)) : z;
  }
  return softmax_rows(h);
}

std::vector<int> MioModel::predict(const RowMatrix& features) const {
  const RowMatrix p = predict_proba(features);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) out[static_cast<std::size_t>(r)] = p(r, 1) > p(r, 0) ? 1 : 0;
  return out;
}

MioModel train_mio(const RowMatrix& members, const RowMatrix& nonmembers, std::uint64_t seed,
                   const MioOptions& opts) {
  if (members.rows() == 0 || nonmembers.rows() == 0) throw InvalidArgument("both membership classes need samples");
  if (members.cols() != nonmembers.cols()) throw InvalidArgument("membership classes differ in feature width");
  std::mt19937_64 rng(seed);

  const Eigen::Index n = std::min(members.rows(), nonmembers.rows());
  const auto take = [&](const RowMatrix& x) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
    RowMatrix out(n, x.cols());
    for (Eigen::Index r = 0; r < n; ++r) out.row(r) = x.row(idx[static_cast<std::size_t>(r)]);
    return out;
  };
  RowMatrix x(2 * n, members.cols());
  x.topRows(n) = take(members);
  x.bottomRows(n) = take(nonmembers);
  std::vector<int> y(static_cast<std::size_t>(2 * n), 0);
  std::fill(y.begin(), y.begin() + n, 1);

  const Vector mean = x.colwise().mean().transpose();
  Vector scale = ((x.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index c = 0; c < scale.size(); ++c)
    if (!(scale(c) > 1e-12)) scale(c) = 1.0;
  const RowMatrix xs = standardise(x, mean, scale);

  std::vector<int> widths{static_cast<int>(x.cols())};
  widths.insert(widths.end(), opts.hidden.begin(), opts.hidden.end());
  widths.push_back(2);
  std::vector<MioModel::Layer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / widths[l]));
    MioModel::Layer layer{RowMatrix(widths[l + 1], widths[l]), Vector::Zero(widths[l + 1])};
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = he(rng);
    layers.push_back(std::move(layer));
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(2 * n));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t L = layers.size();
  std::vector<Vector> act(L + 1), pre(L);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index r : order) {
      act[0] = xs.row(r).transpose();
      for (std::size_t l = 0; l < L; ++l) {
        pre[l] = layers[l].weight * act[l] + layers[l].bias;
        act[l + 1] = l + 1 < L ? Vector(pre[l].cwiseMax(0.0)) : pre[l];
      }
      Vector p = (act[L].array() - act[L].maxCoeff()).exp();
      p /= p.sum();
      Vector delta = p;
      delta(y[static_cast<std::size_t>(r)]) -= 1.0;
      for (std::size_t l = L; l-- > 0;) {
        Vector back = layers[l].weight.transpose() * delta;
        layers[l].weight.noalias() -= opts.learning_rate * delta * act[l].transpose();
        layers[l].bias -= opts.learning_rate * delta;
        if (l > 0) delta = back.cwiseProduct((pre[l - 1].array() > 0).cast<double>().matrix());
      }
    }
  }
  return MioModel(mean, scale, std::move(layers));
}

double query_accuracy(const MembershipClassifier& clf, const RowMatrix& members, const RowMatrix& nonmembers) {
  const auto total = members.rows() + nonmembers.rows();
  if (total == 0) throw InvalidArgument("empty query set");
  long correct = 0;
  if (members.rows() > 0)
    for (int v : clf.predict(members)) correct += v == 1;
  if (nonmembers.rows() > 0)
    for (int v : clf.predict(nonmembers)) correct += v == 0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

double mio_accuracy(const MembershipClassifier& clf, const EmbeddingTable& scoring,
                    std::span<const int> unlearned_users, std::span<const int> holdout_users,
                    const std::vector<std::vector<int>>& items_of, std::uint64_t seed) {
  if (unlearned_users.empty()) throw InvalidArgument("no unlearned users to query");
  if (holdout_users.empty()) throw InvalidArgument("no holdout users available for the membership query");
  std::mt19937_64 rng(seed);
  const std::size_t n = std::min(unlearned_users.size(), holdout_users.size());
  const auto sample = [&](std::span<const int> src) {
    std::vector<int> v(src.begin(), src.end());
    if (v.size() > n) {
      std::shuffle(v.begin(), v.end(), rng);
      v.resize(n);
      std::sort(v.begin(), v.end());
    }
    return v;
  };
  const std::vector<int> pos = sample(unlearned_users);
  const std::vector<int> neg = sample(holdout_users);
  return query_accuracy(clf, mio_feature_matrix(scoring, pos, items_of), mio_feature_matrix(scoring, neg, items_of));
}

}  // namespace recforget
