#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "recforget/unlearn.hpp"

namespace recforget {

std::string to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::random: return "random";
    case PartitionMode::balanced_kmeans: return "balanced_kmeans";
    case PartitionMode::balanced_ot: return "balanced_ot";
  }
  return "?";
}

std::vector<std::vector<int>> ShardPlan::members() const {
  std::vector<std::vector<int>> out(num_shards);
  for (int u = 0; u < static_cast<int>(assignment.size()); ++u)
    if (assignment[u] >= 0) out.at(assignment[u]).push_back(u);
  return out;
}

std::vector<int> ShardPlan::sizes() const {
  std::vector<int> out(num_shards, 0);
  for (int s : assignment)
    if (s >= 0) ++out.at(s);
  return out;
}

RowMatrix sinkhorn_plan(const RowMatrix& cost, double epsilon, int iterations) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  if (n == 0 || m == 0) return RowMatrix(n, m);
  if (!(epsilon > 0)) throw InvalidArgument("sinkhorn epsilon must be positive");
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);

  const auto logsumexp = [](const auto& x) {
    const double mx = x.maxCoeff();
    return mx + std::log((x.array() - mx).exp().sum());
  };
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const RowVector z = (g.transpose() - cost.row(i)) / epsilon;
      f(i) = epsilon * (log_a - logsumexp(z));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector z = (f - cost.col(j)) / epsilon;
      g(j) = epsilon * (log_b - logsumexp(z));
    }
  }
  RowMatrix plan(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) plan(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / epsilon);
  return plan;
}

namespace {

// Squared distances between rows of x and rows of c.
RowMatrix squared_distances(const RowMatrix& x, const RowMatrix& c) {
  const Vector xn = x.rowwise().squaredNorm();
  const Vector cn = c.rowwise().squaredNorm();
  RowMatrix d = -2.0 * x * c.transpose();
  d.colwise() += xn;
  d.rowwise() += cn.transpose();
  return d.cwiseMax(0.0);
}

// Assigns points to shards visiting (point, shard) pairs in ascending `key`, keeping every
// shard size in {floor(n/S), ceil(n/S)}.
std::vector<int> capacity_assign(const RowMatrix& key, int num_shards) {
  const int n = static_cast<int>(key.rows());
  const int base = n / num_shards;
  int large_left = n % num_shards;
  std::vector<std::int64_t> pairs(static_cast<std::size_t>(n) * num_shards);
  std::iota(pairs.begin(), pairs.end(), 0);
  std::stable_sort(pairs.begin(), pairs.end(), [&](std::int64_t a, std::int64_t b) {
    return key.data()[a] < key.data()[b];
  });
  std::vector<int> out(n, -1), size(num_shards, 0);
  int placed = 0;
  for (std::int64_t p : pairs) {
    const int i = static_cast<int>(p / num_shards);
    const int s = static_cast<int>(p % num_shards);
    if (out[i] >= 0) continue;
    if (size[s] < base) {
      out[i] = s;
    } else if (size[s] == base && large_left > 0) {
      out[i] = s;
      --large_left;
    } else {
      continue;
    }
    ++size[s];
    if (++placed == n) break;
  }
  return out;
}

RowMatrix kmeanspp_init(const RowMatrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  RowMatrix c(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  Vector best = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = best.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= best(pick);
        if (r <= 0) break;
      }
    } else {
      pick = first(rng);
    }
    c.row(j) = x.row(pick);
    best = best.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
  }
  return c;
}

RowMatrix centroids_of(const RowMatrix& x, const std::vector<int>& assign, const RowMatrix& previous) {
  RowMatrix c = RowMatrix::Zero(previous.rows(), previous.cols());
  std::vector<int> count(previous.rows(), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    c.row(assign[i]) += x.row(i);
    ++count[assign[i]];
  }
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    if (count[j] > 0) c.row(j) /= count[j];
    else c.row(j) = previous.row(j);
  }
  return c;
}

}  // namespace

ShardPlan balanced_partition(std::span<const int> users, int num_users, int num_shards, PartitionMode mode,
                             const RowMatrix* features, std::uint64_t seed, const PartitionOptions& opts) {
  const int n = static_cast<int>(users.size());
  if (num_shards < 1) throw InvalidArgument("number of shards must be at least 1");
  if (num_shards > n) {
    throw InvalidArgument("cannot split " + std::to_string(n) + " users into " + std::to_string(num_shards) +
                          " shards");
  }
  ShardPlan plan;
  plan.num_shards = num_shards;
  plan.mode = mode;
  plan.assignment.assign(num_users, -1);
  for (int u : users)
    if (u < 0 || u >= num_users) throw InvalidArgument("user index out of range in partition");

  std::mt19937_64 rng(seed);
  if (mode == PartitionMode::random) {
    std::vector<int> order(users.begin(), users.end());
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < n; ++k) plan.assignment[order[k]] = k % num_shards;
    return plan;
  }

  if (features == nullptr) throw InvalidArgument("balanced partitions need user features");
  RowMatrix x(n, features->cols());
  for (int k = 0; k < n; ++k) {
    if (users[k] >= features->rows()) throw InvalidArgument("feature table has no row for a user");
    x.row(k) = features->row(users[k]);
  }

  RowMatrix c = kmeanspp_init(x, num_shards, rng);
  std::vector<int> assign;
  for (int it = 0; it < std::max(1, opts.kmeans_iterations); ++it) {
    const RowMatrix d = squared_distances(x, c);
    if (mode == PartitionMode::balanced_kmeans) {
      assign = capacity_assign(d, num_shards);
    } else {
      const double scale = d.maxCoeff();
      const RowMatrix cost = scale > 0 ? RowMatrix(d / scale) : d;
      const RowMatrix p = sinkhorn_plan(cost, opts.sinkhorn_epsilon, opts.sinkhorn_iterations);
      // Row-normalised plan mass, highest first.
      RowMatrix key = p;
      for (Eigen::Index i = 0; i < key.rows(); ++i) {
        const double s = key.row(i).sum();
        key.row(i) = s > 0 ? RowVector(-key.row(i) / s) : RowVector(cost.row(i));
      }
      assign = capacity_assign(key, num_shards);
    }
    RowMatrix next = centroids_of(x, assign, c);
    const bool settled = (next - c).squaredNorm() == 0.0;
    c.swap(next);
    if (settled) break;
  }
  for (int k = 0; k < n; ++k) plan.assignment[users[k]] = assign[k];
  return plan;
}

}  // namespace recforget
