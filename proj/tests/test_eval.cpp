#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "checks.hpp"
#include "oracles.hpp"
#include "recforget/eval.hpp"

using namespace recforget;

namespace {

class FixedScorer : public Scorer {
 public:
  explicit FixedScorer(RowMatrix scores) : s_(std::move(scores)) {}
  int num_items() const override { return static_cast<int>(s_.cols()); }
  RowMatrix score_users(std::span<const int> users) const override {
    RowMatrix out(static_cast<Eigen::Index>(users.size()), s_.cols());
    for (std::size_t r = 0; r < users.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = s_.row(users[r]);
    return out;
  }

 private:
  RowMatrix s_;
};

class AlwaysMember : public MembershipClassifier {
 public:
  std::vector<int> predict(const RowMatrix& f) const override { return std::vector<int>(f.rows(), 1); }
};

InteractionSet make_set(int users, int items, std::vector<Interaction> e) {
  InteractionSet s;
  s.num_users = users;
  s.num_items = items;
  s.interactions = std::move(e);
  std::sort(s.interactions.begin(), s.interactions.end());
  return s;
}

RowMatrix gaussian_cloud(int n, int dim, double shift, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix x(n, dim);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = g(rng);
  x.col(0).array() += shift;
  return x;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("closed-form NDCG and HR values") {
    RowMatrix scores(3, 5);
    scores << 5, 4, 3, 2, 1,  //
        5, 4, 3, 2, 1,        //
        5, 4, 3, 2, 1;
    const FixedScorer scorer(scores);
    // user 0: relevant item ranked first; user 1: relevant item ranked third; user 2: 4 relevant.
    const auto test = make_set(3, 5, {{0, 0}, {1, 2}, {2, 0}, {2, 2}, {2, 3}, {2, 4}});
    const auto none = make_set(3, 5, {});
    const EvalData data(test, none);
    const auto m = utility(scorer, data, {}, 1);
    REQUIRE(m.users == std::vector<int>{0, 1, 2});
    CHECK(m.ndcg[0] == 1.0);
    CHECK(m.ndcg[1] == 0.0);
    CHECK(m.hr[2] == 0.25);

    const auto m20 = utility(scorer, data, std::vector<int>{1}, 20);
    CHECK(m20.ndcg[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m20.hr[0] == 1.0);
    CHECK(ndcg_at_k(scorer, test, none, std::vector<int>{0}) == 1.0);
    CHECK(hr_at_k(scorer, test, none, std::vector<int>{2}, 1) == 0.25);
  }

  TEST_CASE("training items are excluded from the ranking") {
    RowMatrix scores(1, 4);
    scores << 9, 8, 7, 6;
    const FixedScorer scorer(scores);
    const auto test = make_set(1, 4, {{0, 2}});
    const auto train = make_set(1, 4, {{0, 0}, {0, 1}});
    CHECK(ndcg_at_k(scorer, test, train) == 1.0);
    CHECK(ndcg_at_k(scorer, test, make_set(1, 4, {})) == doctest::Approx(0.5));
  }

  TEST_CASE("users without test items are skipped") {
    const FixedScorer scorer(RowMatrix::Ones(3, 4));
    const auto m = utility(scorer, EvalData(make_set(3, 4, {{1, 0}}), make_set(3, 4, {})));
    CHECK(m.users == std::vector<int>{1});
  }

  TEST_CASE("ranking metrics match a full-sort recomputation") {
    const auto rep = checks::ranking_metric_check(50, 99);
    CHECK(rep.instances == 50);
    CHECK(rep.worst <= 1e-12);
  }

  TEST_CASE("membership features concatenate the user and the mean item vector") {
    EmbeddingTable t = EmbeddingTable::zeros(2, 3, 2);
    t.users << 1, 2, 3, 4;
    t.items << 1, 0, 0, 1, 2, 2;
    const Vector f = mio_features(t, 1, std::vector<int>{0, 2});
    REQUIRE(f.size() == 4);
    CHECK(f(0) == 3);
    CHECK(f(1) == 4);
    CHECK(f(2) == 1.5);
    CHECK(f(3) == 1.0);
    CHECK_THROWS_AS(mio_features(t, 0, std::vector<int>{}), InvalidArgument);
    CHECK_THROWS_AS(mio_features(t, 5, std::vector<int>{0}), InvalidArgument);
    const RowMatrix m = mio_feature_matrix(t, std::vector<int>{1, 0}, {{0}, {0, 2}});
    CHECK(m.row(0).transpose() == f);
  }

  TEST_CASE("membership classifier separates shifted clouds") {
    std::mt19937_64 rng(4);
    const RowMatrix pos = gaussian_cloud(150, 4, 2.0, rng);
    const RowMatrix neg = gaussian_cloud(150, 4, -2.0, rng);
    std::vector<double> p0(pos.col(0).data(), pos.col(0).data() + pos.rows());
    std::vector<double> n0(neg.col(0).data(), neg.col(0).data() + neg.rows());
    const double oracle_acc = oracle::best_threshold_accuracy(p0, n0);
    const MioOptions opts{.hidden = {16, 4}, .epochs = 40, .learning_rate = 0.01};
    const MioModel clf = train_mio(pos, neg, 1, opts);
    const double acc = query_accuracy(clf, pos, neg);
    CHECK(acc >= 0.95);
    CHECK(acc >= oracle_acc - 0.03);
    CHECK(query_accuracy(clf, neg, pos) == doctest::Approx(1.0 - acc).epsilon(1e-15));
    const MioModel again = train_mio(pos, neg, 1, opts);
    CHECK(again.predict_proba(pos) == clf.predict_proba(pos));
  }

  TEST_CASE("membership training balances the classes and validates shapes") {
    std::mt19937_64 rng(5);
    const RowMatrix pos = gaussian_cloud(10, 3, 1.0, rng);
    const RowMatrix neg = gaussian_cloud(40, 3, -1.0, rng);
    const MioModel clf = train_mio(pos, neg, 2, MioOptions{.hidden = {4}, .epochs = 2});
    CHECK(clf.feature_dim() == 3);
    const RowMatrix p = clf.predict_proba(neg);
    CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(clf.predict_proba(RowMatrix::Zero(2, 5)), InvalidArgument);
    CHECK_THROWS_AS(train_mio(RowMatrix(0, 3), neg, 1), InvalidArgument);
    CHECK_THROWS_AS(train_mio(pos, RowMatrix::Zero(4, 2), 1), InvalidArgument);
  }

  TEST_CASE("a constant member classifier scores one half on the balanced query") {
    EmbeddingTable t = EmbeddingTable::zeros(40, 5, 2);
    std::vector<std::vector<int>> items(40, std::vector<int>{0, 1});
    std::vector<int> unlearned, holdout;
    for (int u = 0; u < 10; ++u) unlearned.push_back(u);
    for (int u = 10; u < 40; ++u) holdout.push_back(u);
    CHECK(mio_accuracy(AlwaysMember{}, t, unlearned, holdout, items, 3) == 0.5);
    CHECK(mio_accuracy(AlwaysMember{}, t, holdout, unlearned, items, 3) == 0.5);
    CHECK_THROWS_AS(mio_accuracy(AlwaysMember{}, t, {}, holdout, items, 3), InvalidArgument);
  }

  TEST_CASE("active users are the most prolific remaining users") {
    const auto s = checks::random_interactions(100, 30, 0.2, 12);
    std::vector<int> remaining(100);
    std::iota(remaining.begin(), remaining.end(), 0);
    const auto g = assign_groups(s, remaining, 0.05);
    CHECK(g.active.size() == 5);
    CHECK(g.inactive.size() == 95);
    const auto counts = user_counts(s);
    int min_active = 1 << 30, max_inactive = 0;
    for (int u : g.active) min_active = std::min(min_active, counts[u]);
    for (int u : g.inactive) max_inactive = std::max(max_inactive, counts[u]);
    CHECK(min_active >= max_inactive);

    const auto tied = make_set(4, 2, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
    const auto tg = assign_groups(tied, std::vector<int>{3, 1, 2}, 0.5);
    CHECK(tg.active == std::vector<int>{1, 2});
    CHECK(tg.inactive == std::vector<int>{3});
  }

  TEST_CASE("A-IGF is the active minus inactive mean") {
    PerUserMetrics m;
    m.users = {0, 1, 2, 3};
    m.ndcg = {0.3, 0.3, 0.2, 0.2};
    m.hr = {0, 0, 0, 0};
    const GroupAssignment g{{0, 1}, {2, 3}};
    CHECK(a_igf(m, g) == doctest::Approx(0.1).epsilon(1e-12));
    const GroupAssignment swapped{{2, 3}, {0, 1}};
    CHECK(a_igf(m, swapped) == -a_igf(m, g));
    m.ndcg = {0.25, 0.25, 0.25, 0.25};
    CHECK(a_igf(m, g) == 0.0);
    CHECK_THROWS_AS(a_igf(m, GroupAssignment{{0}, {}}), InvalidArgument);
  }

  TEST_CASE("population variance") {
    CHECK(population_variance(std::vector<double>{0.2, 0.3}) == doctest::Approx(0.0025).epsilon(1e-12));
    CHECK(population_variance(std::vector<double>{0.4}) == 0.0);
    CHECK(population_variance(std::vector<double>{}) == 0.0);
    const std::vector<double> v = {0.1, 0.7, 0.35, 0.2};
    CHECK(population_variance(v) == doctest::Approx(oracle::variance(v)).epsilon(1e-14));
  }

  TEST_CASE("shard utility ranks each user with its own submodel") {
    EmbeddingTable t = EmbeddingTable::zeros(2, 4, 1);
    t.users << 1, 1;
    t.items << 4, 3, 2, 1;
    const Hyperparams h{.embedding_dim = 1};
    auto shard0 = std::make_shared<const InteractionSet>(make_set(2, 4, {{0, 3}}));
    auto shard1 = std::make_shared<const InteractionSet>(make_set(2, 4, {{1, 3}}));
    std::vector<std::shared_ptr<const TrainedModel>> subs = {
        std::make_shared<const TrainedModel>(ModelKind::wmf, t, h, shard0),
        std::make_shared<const TrainedModel>(ModelKind::wmf, t, h, shard1)};
    ShardPlan plan{.num_shards = 2, .mode = PartitionMode::random, .assignment = {0, 1}};
    const ShardEnsemble ens(plan, subs, RowMatrix::Constant(2, 2, 0.5));
    const auto test = make_set(2, 4, {{0, 0}, {1, 2}});
    const auto su = shard_gf(ens, test);
    REQUIRE(su.ndcg.size() == 2);
    CHECK(su.ndcg[0] == 1.0);
    CHECK(su.ndcg[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(su.variance == doctest::Approx(0.0625).epsilon(1e-14));

    const auto only0 = shard_gf(ens, test, std::vector<int>{0});
    CHECK(only0.shards == std::vector<int>{0});
    CHECK(only0.excluded == std::vector<int>{1});
    CHECK(only0.variance == 0.0);

    ShardPlan single{.num_shards = 1, .mode = PartitionMode::random, .assignment = {0, 0}};
    const ShardEnsemble one(single, {subs[0]}, RowMatrix::Ones(1, 1));
    CHECK(shard_gf(one, test).variance == 0.0);
  }
}
