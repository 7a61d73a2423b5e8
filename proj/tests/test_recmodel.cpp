#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "checks.hpp"
#include "data_dir.hpp"
#include "oracles.hpp"
#include "recforget/eval.hpp"
#include "recforget/recmodel.hpp"

using namespace recforget;

namespace {

const ModelKind kAllKinds[] = {ModelKind::wmf, ModelKind::bpr, ModelKind::lightgcn};

// Five users who all interacted with item 0 and nothing else.
InteractionSet dominant_item_set() {
  InteractionSet s;
  s.num_users = 5;
  s.num_items = 5;
  for (int u = 0; u < 5; ++u) s.interactions.push_back({u, 0});
  return s;
}

InteractionSet empty_like(const InteractionSet& s) {
  InteractionSet e;
  e.num_users = s.num_users;
  e.num_items = s.num_items;
  return e;
}

}  // namespace

TEST_SUITE("recmodel") {
  TEST_CASE("hyper-parameter validation") {
    Hyperparams h;
    CHECK_NOTHROW(h.validate());
    h.embedding_dim = 0;
    CHECK_THROWS_AS(h.validate(), InvalidArgument);
    h = {};
    h.wmf_negative_weight = 0.0;
    CHECK_THROWS_AS(h.validate(), InvalidArgument);
    h = {};
    h.learning_rate = -1;
    CHECK_THROWS_AS(h.validate(), InvalidArgument);
    CHECK(model_kind_from_string(to_string(ModelKind::lightgcn)) == ModelKind::lightgcn);
    CHECK_THROWS_AS(model_kind_from_string("svd"), InvalidArgument);
  }

  TEST_CASE("initial embeddings are seeded and small") {
    Hyperparams h;
    const auto a = init_embeddings(30, 40, h, 9);
    const auto b = init_embeddings(30, 40, h, 9);
    CHECK(a.users == b.users);
    CHECK(a.items == b.items);
    CHECK(a.dim() == 32);
    const double sd = std::sqrt(a.users.squaredNorm() / static_cast<double>(a.users.size()));
    CHECK(sd == doctest::Approx(0.01).epsilon(0.1));
  }

  TEST_CASE("pairwise gradient at zero user vectors carries sigmoid(0) = 0.5") {
    EmbeddingTable t = EmbeddingTable::zeros(1, 2, 2);
    t.items.row(0) << 1.0, 2.0;
    t.items.row(1) << -1.0, 0.5;
    LossTerms terms;
    terms.pairs.push_back({0, 0, 1});
    const auto g = loss_grad(ModelKind::bpr, t, terms, 0.0);
    const RowVector expected = -0.5 * (t.items.row(0) - t.items.row(1));
    CHECK((g.users.row(0) - expected).norm() < 1e-15);
    CHECK(loss_value(ModelKind::bpr, t, terms, 0.0) == doctest::Approx(std::log(2.0)));
  }

  TEST_CASE("empty batch has zero loss and gradient") {
    const auto t = init_embeddings(3, 4, Hyperparams{}, 1);
    for (auto kind : {ModelKind::wmf, ModelKind::bpr}) {
      CHECK(loss_value(kind, t, {}, 0.1) == 0.0);
      CHECK(loss_grad(kind, t, {}, 0.1).norm() == 0.0);
    }
  }

  TEST_CASE("analytic gradients match central differences") {
    for (auto kind : kAllKinds) {
      CAPTURE(to_string(kind));
      const auto rep = checks::gradient_check(kind, 20, 17);
      CHECK(rep.instances == 20);
      CHECK(rep.worst < 1e-4);
    }
  }

  TEST_CASE("Hessian-vector products match differenced gradients and are symmetric") {
    for (auto kind : kAllKinds) {
      CAPTURE(to_string(kind));
      CHECK(checks::hvp_check(kind, 10, 5).worst < 1e-3);
      CHECK(checks::hvp_symmetry_check(kind, 10, 6).worst < 1e-8);
    }
  }

  TEST_CASE("Hessian products are linear and damping adds exactly damping * v") {
    const auto s = checks::random_interactions(4, 5, 0.4, 3);
    const auto t = init_embeddings(4, 5, Hyperparams{.embedding_dim = 3, .init_std = 0.5}, 2);
    const LossTerms terms = make_terms(ModelKind::wmf, s.interactions, sample_negatives(s, 2, 1), 0.5);
    const auto sel = ParamSelection::all(4, 5);
    const Vector zero = Vector::Zero(sel.size(3));
    CHECK(hessian_vector_product(ModelKind::wmf, t, terms, 0.1, nullptr, sel, zero, 0.3).norm() == 0.0);
    const Vector v = Vector::Random(sel.size(3));
    const Vector h0 = hessian_vector_product(ModelKind::wmf, t, terms, 0.1, nullptr, sel, v, 0.0);
    const Vector h1 = hessian_vector_product(ModelKind::wmf, t, terms, 0.1, nullptr, sel, v, 0.25);
    CHECK(((h1 - h0) - 0.25 * v).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_THROWS_AS(hessian_vector_product(ModelKind::wmf, t, terms, 0.1, nullptr, sel, v, -1.0), InvalidArgument);
    CHECK_THROWS_AS(hessian_vector_product(ModelKind::wmf, t, terms, 0.1, nullptr, sel, Vector::Zero(2), 0.0),
                    InvalidArgument);
  }

  TEST_CASE("operator diagonal matches unit-vector products") {
    const auto s = checks::random_interactions(4, 5, 0.4, 3);
    const auto t = init_embeddings(4, 5, Hyperparams{.embedding_dim = 2, .init_std = 0.5}, 2);
    const LossTerms terms = make_terms(ModelKind::bpr, s.interactions, sample_negatives(s, 2, 1), 1.0);
    ParamSelection sel{{1, 3}, {0, 2, 4}};
    const HessianOperator h(ModelKind::bpr, t, terms, 0.05, nullptr, sel, 0.01);
    const Vector d = h.diagonal();
    for (Eigen::Index k = 0; k < h.size(); ++k) CHECK(d(k) == doctest::Approx(h.apply(Vector::Unit(h.size(), k))(k)));
  }

  TEST_CASE("gather and scatter are inverse on the selection") {
    auto t = init_embeddings(3, 4, Hyperparams{.embedding_dim = 2}, 1);
    ParamSelection sel{{2}, {0, 3}};
    const Vector v = gather(t, sel);
    CHECK(v.size() == 6);
    CHECK(v.head(2).transpose() == t.users.row(2));
    scatter(t, sel, Vector::Constant(6, 7.0));
    CHECK(t.items.row(3).sum() == 14.0);
    CHECK_THROWS_AS(scatter(t, sel, Vector::Zero(5)), InvalidArgument);
  }

  TEST_CASE("propagation: zero layers is the identity and the operator is symmetric") {
    const auto s = checks::random_interactions(6, 7, 0.4, 12);
    const auto t = init_embeddings(6, 7, Hyperparams{.embedding_dim = 3, .init_std = 1.0}, 4);
    const auto same = Propagation(s, 0).apply(t);
    CHECK((same.users - t.users).norm() == 0.0);
    const Propagation p(s, 3);
    const auto w = init_embeddings(6, 7, Hyperparams{.embedding_dim = 3, .init_std = 1.0}, 5);
    const auto pt = p.apply(t);
    const auto pw = p.apply(w);
    const double lhs = (pt.users.cwiseProduct(w.users)).sum() + (pt.items.cwiseProduct(w.items)).sum();
    const double rhs = (t.users.cwiseProduct(pw.users)).sum() + (t.items.cwiseProduct(pw.items)).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("top-k ordering and exclusion") {
    const std::vector<double> s = {0.1, 0.9, 0.5};
    CHECK(top_k(s, 2, {}) == std::vector<int>{1, 2});
    CHECK(top_k(s, 10, {}) == std::vector<int>{1, 2, 0});
    const std::vector<int> one = {1};
    CHECK(top_k(s, 10, one) == std::vector<int>{2, 0});
    const std::vector<int> all = {0, 1, 2};
    CHECK(top_k(s, 2, all).empty());
    const std::vector<double> tied = {0.5, 0.5, 0.7, 0.5};
    CHECK(top_k(tied, 3, {}) == std::vector<int>{2, 0, 1});
  }

  TEST_CASE("a dominant item ends up first for every user") {
    const auto s = dominant_item_set();
    for (auto kind : kAllKinds) {
      CAPTURE(to_string(kind));
      Hyperparams h;
      h.embedding_dim = 4;
      h.max_epochs = 300;
      h.learning_rate = 0.05;
      h.l2_reg = 1e-4;
      h.init_std = 0.1;
      const auto r = train(kind, s, empty_like(s), h, 3);
      CHECK(r.log.stop_epoch == 300);
      CHECK(!r.log.early_stopped);
      for (int u = 0; u < 5; ++u) {
        for (int i = 1; i < 5; ++i) CHECK(r.model.score(u, 0) > r.model.score(u, i));
        const std::vector<int> none;
        CHECK(score_topk(r.model, u, 1, none) == std::vector<int>{0});
      }
    }
  }

  TEST_CASE("training is reproducible and early stopping follows the patience rule") {
    const auto ds = checks::random_interactions(60, 40, 0.15, 21);
    const auto b = split(ds, 0.8, 0.1, 2);
    Hyperparams h;
    h.embedding_dim = 8;
    h.max_epochs = 60;
    const auto r1 = train(ModelKind::wmf, b.train, b.valid, h, 5);
    const auto r2 = train(ModelKind::wmf, b.train, b.valid, h, 5);
    CHECK(r1.log.stop_epoch == r2.log.stop_epoch);
    CHECK(r1.log.valid_ndcg == r2.log.valid_ndcg);
    CHECK(r1.model.params().users == r2.model.params().users);
    CHECK(r1.log.stop_epoch <= h.max_epochs);
    CHECK(static_cast<int>(r1.log.valid_ndcg.size()) == r1.log.stop_epoch);
    if (r1.log.early_stopped) {
      CHECK(r1.log.stop_epoch == r1.log.best_epoch + h.patience);
      const double best = r1.log.valid_ndcg[r1.log.best_epoch - 1];
      for (int e = r1.log.best_epoch; e < r1.log.stop_epoch; ++e) CHECK(r1.log.valid_ndcg[e] <= best);
    }
    CHECK(validate(r1.model, b.valid) == doctest::Approx(r1.log.valid_ndcg[r1.log.best_epoch - 1]));
  }

  TEST_CASE("scoring with an unknown user is rejected") {
    InteractionSet s = dominant_item_set();
    s.num_users = 6;
    Hyperparams h;
    h.max_epochs = 2;
    const auto r = train(ModelKind::bpr, s, empty_like(s), h, 1);
    CHECK(!r.model.knows_user(5));
    const std::vector<int> none;
    CHECK_THROWS_AS(score_topk(r.model, 5, 3, none), InvalidArgument);
  }

  TEST_CASE("checkpoints round-trip") {
    const auto t = init_embeddings(7, 9, Hyperparams{.embedding_dim = 5, .init_std = 0.3}, 8);
    const auto path = std::filesystem::temp_directory_path() / "recforget_ckpt_test.txt";
    save_checkpoint(path, ModelKind::lightgcn, t);
    const auto [kind, back] = load_checkpoint(path);
    CHECK(kind == ModelKind::lightgcn);
    CHECK(back.users == t.users);
    CHECK(back.items == t.items);
    {
      std::ofstream bad(path);
      bad << "something else\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }

  TEST_CASE("MovieLens 100K WMF reaches the expected utility band") {
    const auto path = ml100k_path();
    if (!std::filesystem::exists(path)) {
      MESSAGE("ml-100k not found; skipped");
      return;
    }
    const auto b = split(preprocess(load_ratings(path), 5), 0.8, 0.1, 1);
    const auto r = train(ModelKind::wmf, b.train, b.valid, Hyperparams{}, 4);
    const double ndcg = ndcg_at_k(r.model, b.test, b.train);
    MESSAGE("test NDCG@20 = " << ndcg);
    CHECK(ndcg == doctest::Approx(0.3215).epsilon(0.05 / 0.3215));
  }
}
