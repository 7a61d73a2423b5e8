#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "checks.hpp"
#include "recforget/harness.hpp"

using namespace recforget;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.dataset_name = "synthetic";
  c.num_shards = 4;
  c.unlearn_ratio = 0.05;
  c.hyper.embedding_dim = 8;
  c.hyper.max_epochs = 20;
  c.hyper.patience = 3;
  c.hyper.batch_size = 128;
  c.hyper.init_std = 0.1;
  c.unlearn.division_epochs = 5;
  c.unlearn.aggregator.epochs = 5;
  c.mio.hidden = {8};
  c.mio.epochs = 5;
  c.mio_holdout_fraction = 0.1;
  return c;
}

const ExperimentData& small_data() {
  static const ExperimentData d = make_experiment_data(checks::random_interactions(150, 80, 0.12, 31), small_config());
  return d;
}

std::vector<ResultRow> masked(std::vector<ResultRow> rows) {
  for (auto& r : rows) {
    r.metrics.wall_time_s = 0;
    r.elapsed_s = 0;
  }
  return rows;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("recforget_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config parsing reads every section and resolves relative paths") {
    const auto c = parse_config(R"({
      "dataset": {"name": "toy", "path": "data/u.data", "min_interactions": 3},
      "models": ["WMF", "BPR"],
      "methods": ["Retrain", "SCIF"],
      "strategies": ["random"],
      "unlearn_ratio": 0.1,
      "num_shards": 7,
      "seeds": {"split": 11, "mio": 15},
      "hyperparams": {"embedding_dim": 16, "l2_reg": 0.02},
      "influence": {"damping": 0.05},
      "mio": {"hidden": [8, 4]},
      "sweep": {"shards": [2, 3]},
      "output_dir": "out"
    })",
                                "/base");
    CHECK(c.dataset_name == "toy");
    CHECK(c.dataset_path == fs::path("/base/data/u.data"));
    CHECK(c.output_dir == fs::path("/base/out"));
    CHECK(c.min_interactions == 3);
    CHECK(c.models == std::vector<ModelKind>{ModelKind::wmf, ModelKind::bpr});
    CHECK(c.methods == std::vector<Method>{Method::retrain, Method::scif});
    CHECK(c.strategies == std::vector<Strategy>{Strategy::random});
    CHECK(c.unlearn_ratio == 0.1);
    CHECK(c.num_shards == 7);
    CHECK(c.seeds.split == 11);
    CHECK(c.seeds.holdout == 2);
    CHECK(c.seeds.mio == 15);
    CHECK(c.hyper.embedding_dim == 16);
    CHECK(c.hyper.l2_reg == 0.02);
    CHECK(c.unlearn.influence.damping == 0.05);
    CHECK(c.mio.hidden == std::vector<int>{8, 4});
    CHECK(c.sweep_shards == std::vector<int>{2, 3});
  }

  TEST_CASE("config parsing is strict") {
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"path": "x"}, "bogus": 1})"), InvalidArgument);
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"path": "x", "nmae": "y"}})"), InvalidArgument);
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"path": "x"}, "methods": ["Oracle"]})"), InvalidArgument);
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"path": "x"}, "unlearn_ratio": 1.5})"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("{not json"), ParseError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
  }

  TEST_CASE("the shipped config loads") {
    const fs::path shipped = fs::path(RECFORGET_SOURCE_DIR) / "configs" / "ml100k_wmf.json";
    const auto c = load_config(shipped);
    CHECK(c.num_shards == 10);
    CHECK(c.methods.size() == 5);
    CHECK(c.dataset_path.filename() == "u.data");
  }

  TEST_CASE("number formatting keeps six significant digits") {
    CHECK(format_number(0.123456789) == "0.123457");
    CHECK(format_number(1234567.0) == "1.23457e+06");
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(-0.045) == "-0.045");
    CHECK(format_number(3) == "3");
  }

  TEST_CASE("results CSV round-trips") {
    ResultRow a;
    a.dataset = "toy";
    a.model = "WMF";
    a.method = "SISA";
    a.strategy = "core";
    a.ratio = 0.05;
    a.shards = 10;
    a.metrics.ndcg20 = 0.25;
    a.metrics.hr20 = 0.125;
    a.metrics.mio_accuracy = 0.5;
    a.metrics.shard_gf = 0.0025;
    a.metrics.wall_time_s = 12.5;
    a.elapsed_s = 12.5;
    a.shards_retrained = 9;
    a.unlearned_users = 40;
    a.unlearned_interactions = 3972;
    ResultRow b = a;
    b.method = "Retrain";
    b.ok = false;
    b.error = "boom, \"quoted\"\nsecond line";
    b.metrics = {};
    const auto text = results_csv({a, b});
    const auto back = parse_results_csv(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == a);
    CHECK(back[1].error == b.error);
    CHECK(!back[1].ok);
    CHECK(!back[0].metrics.a_igf.has_value());

    const auto empty = results_csv({});
    CHECK(std::count(empty.begin(), empty.end(), '\n') == 1);
    CHECK(parse_results_csv(empty).empty());
    CHECK_THROWS_AS(parse_results_csv("nope\n"), ParseError);
  }

  TEST_CASE("a single cell produces a single row without shard utility") {
    ExperimentConfig c = small_config();
    c.methods = {Method::retrain};
    c.strategies = {Strategy::random};
    const auto out = run_experiment(c, small_data());
    REQUIRE(out.rows.size() == 1);
    const auto& r = out.rows[0];
    CHECK(r.ok);
    CHECK(r.method == "Retrain");
    CHECK(!r.metrics.shard_gf.has_value());
    CHECK(r.metrics.mio_accuracy.has_value());
    CHECK(r.metrics.ndcg20 > 0);
    CHECK(out.composition.empty());
  }

  TEST_CASE("full grid: one row per cell, shard utility on sharded rows, deterministic") {
    const ExperimentConfig c = small_config();
    const auto out = run_experiment(c, small_data());
    REQUIRE(out.rows.size() == 15);
    int with_gf = 0;
    for (const auto& r : out.rows) {
      CAPTURE(r.method);
      CAPTURE(r.error);
      CHECK(r.ok);
      const bool sharded = r.method == "SISA" || r.method == "RecEraser" || r.method == "UltraRE";
      CHECK(r.metrics.shard_gf.has_value() == sharded);
      CHECK(r.metrics.mio_accuracy.has_value() == !sharded);
      with_gf += r.metrics.shard_gf.has_value();
      CHECK(r.metrics.ndcg20 >= 0);
      CHECK(r.metrics.ndcg20 <= 1);
    }
    CHECK(with_gf == 9);
    CHECK(out.composition.size() == 9 * 4);
    const auto again = run_experiment(c, small_data());
    CHECK(masked(again.rows) == masked(out.rows));
  }

  TEST_CASE("composition counts every remaining user once") {
    ExperimentConfig c = small_config();
    c.methods = {Method::sisa};
    c.strategies = {Strategy::core};
    const auto out = run_experiment(c, small_data());
    REQUIRE(out.composition.size() == 4);
    int total = 0, active = 0;
    for (const auto& cr : out.composition) {
      total += cr.active + cr.inactive;
      active += cr.active;
    }
    const auto counts = user_counts(*small_data().train);
    const auto training_users = std::count_if(counts.begin(), counts.end(), [](int n) { return n > 0; });
    CHECK(total == training_users - out.rows[0].unlearned_users);
    CHECK(active == static_cast<int>(std::ceil(0.05 * total - 1e-9)));
  }

  TEST_CASE("shard composition report") {
    ShardPlan plan{.num_shards = 2, .mode = PartitionMode::random, .assignment = {0, 1, 0, -1}};
    const auto rep = shard_composition_report(plan, GroupAssignment{{0}, {1, 2}});
    REQUIRE(rep.size() == 2);
    CHECK(rep[0] == std::pair{1, 1});
    CHECK(rep[1] == std::pair{0, 1});
    CHECK_THROWS_AS(shard_composition_report(plan, GroupAssignment{{3}, {}}), InvalidArgument);
  }

  TEST_CASE("sweeps emit one block per value and a singleton sweep equals a run") {
    ExperimentConfig c = small_config();
    c.methods = {Method::retrain, Method::sisa};
    c.strategies = {Strategy::random};
    const auto shards = sweep(c, small_data(), SweepDim::shards, {2, 4});
    REQUIRE(shards.rows.size() == 4);
    CHECK(shards.rows[0].shards == 2);
    CHECK(shards.rows[3].shards == 4);
    const auto ratios = sweep(c, small_data(), SweepDim::ratio, {0.05, 0.1, 0.2});
    REQUIRE(ratios.rows.size() == 6);
    CHECK(ratios.rows[4].ratio == 0.2);
    CHECK(ratios.rows[4].unlearned_interactions > ratios.rows[0].unlearned_interactions);

    const auto single = sweep(c, small_data(), SweepDim::shards, {4});
    const auto run = run_experiment(c, small_data());
    CHECK(masked(single.rows) == masked(run.rows));
    CHECK_THROWS_AS(sweep(c, small_data(), SweepDim::shards, {2.5}), InvalidArgument);
    CHECK_THROWS_AS(sweep(c, small_data(), SweepDim::ratio, {}), InvalidArgument);
    CHECK(sweep_dim_from_string("ratio") == SweepDim::ratio);
    CHECK_THROWS_AS(sweep_dim_from_string("depth"), InvalidArgument);
  }

  TEST_CASE("a failing cell is recorded and the run continues") {
    ExperimentConfig c = small_config();
    c.methods = {Method::retrain};
    c.strategies = {Strategy::random, Strategy::core};
    c.unlearn_ratio = 0.9999;
    const auto out = run_experiment(c, small_data());
    REQUIRE(out.rows.size() == 2);
    for (const auto& r : out.rows) {
      if (!r.ok) CHECK(!r.error.empty());
    }
  }

  TEST_CASE("emitted files") {
    ExperimentConfig c = small_config();
    c.methods = {Method::retrain, Method::sisa};
    c.strategies = {Strategy::edge};
    const auto out = run_experiment(c, small_data());
    const fs::path dir = scratch_dir("emit");
    emit_results(out, dir);
    CHECK(slurp(dir / "results.csv") == results_csv(out.rows));
    CHECK(results_csv(parse_results_csv(slurp(dir / "results.csv"))) == results_csv(out.rows));
    const auto comp = slurp(dir / "shard_composition.csv");
    CHECK(std::count(comp.begin(), comp.end(), '\n') == 1 + 4);
    const auto log = slurp(dir / "run_log.txt");
    CHECK(log.find("stage3") != std::string::npos);
    CHECK(log.find("holdout users=") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("data preparation reserves holdout users outside training") {
    const auto& d = small_data();
    CHECK(!d.holdout_users.empty());
    const auto counts = user_counts(*d.train);
    for (int u : d.holdout_users) {
      CHECK(counts[u] == 0);
      CHECK(!d.feature_items[u].empty());
    }
    CHECK(d.split.train.size() + d.split.valid.size() + d.split.test.size() == d.full.size());
  }
}
