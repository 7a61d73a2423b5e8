#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recforget/dataset.hpp"
#include "recforget/eval.hpp"
#include "recforget/graph_select.hpp"
#include "recforget/recmodel.hpp"
#include "recforget/unlearn.hpp"

namespace recforget {

struct SeedConfig {
  std::uint64_t split = 1;
  std::uint64_t holdout = 2;
  std::uint64_t selection = 3;
  std::uint64_t training = 4;
  std::uint64_t mio = 5;
};

struct ExperimentConfig {
  std::string dataset_name = "ml-100k";
  std::filesystem::path dataset_path;
  int min_interactions = 5;
  double train_fraction = 0.8;
  double valid_fraction = 0.1;

  std::vector<ModelKind> models{ModelKind::wmf};
  std::vector<Method> methods{Method::retrain, Method::sisa, Method::receraser, Method::ultrare, Method::scif};
  std::vector<Strategy> strategies{Strategy::core, Strategy::random, Strategy::edge};
  double unlearn_ratio = 0.05;
  RatioBasis ratio_basis = RatioBasis::interactions;
  int num_shards = 10;

  SeedConfig seeds;
  Hyperparams hyper;
  UnlearnConfig unlearn;
  MioOptions mio;

  double mio_holdout_fraction = 0.05;
  double active_fraction = 0.05;
  int top_k = 20;
  /// Adds a "Learn" row per (model, strategy) scoring the original model before unlearning.
  bool include_learn_row = false;

  std::vector<int> sweep_shards{5, 10, 20};
  std::vector<double> sweep_ratios{0.05, 0.10, 0.15, 0.20};

  std::filesystem::path output_dir = "out";

  void validate() const;
};

/// Reads a JSON config; relative paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});

struct ResultRow {
  std::string dataset;
  std::string model;
  std::string method;
  std::string strategy;
  double ratio = 0.0;
  int shards = 0;
  bool ok = true;
  std::string error;
  MetricReport metrics;
  double elapsed_s = 0.0;
  int shards_retrained = 0;
  int unlearned_users = 0;
  int unlearned_interactions = 0;
  SeedConfig seeds;

  bool operator==(const ResultRow& o) const;
};

struct CompositionRow {
  std::string model;
  std::string method;
  std::string strategy;
  int shards = 0;
  int shard = 0;
  int active = 0;
  int inactive = 0;
};

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  std::vector<CompositionRow> composition;
  std::vector<std::string> log;
};

/// Data shared by every cell of a run: the split with the membership holdout users removed.
struct ExperimentData {
  InteractionSet full;
  SplitBundle split;
  std::vector<int> holdout_users;  // ascending
  std::shared_ptr<const InteractionSet> train;
  std::shared_ptr<const InteractionSet> valid;
  std::shared_ptr<const InteractionSet> test;
  /// Items of every user in the training split before the holdout users were removed.
  std::vector<std::vector<int>> feature_items;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);
/// Splits and reserves holdout users from an already preprocessed dataset.
ExperimentData make_experiment_data(InteractionSet full, const ExperimentConfig& cfg);

ExperimentOutput run_experiment(const ExperimentConfig& cfg);
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ExperimentData& data);

enum class SweepDim { shards, ratio };
SweepDim sweep_dim_from_string(const std::string& s);

/// One run per value; the data stage is shared and stage-I states are reused where the swept
/// value does not affect them.
ExperimentOutput sweep(const ExperimentConfig& cfg, SweepDim dim, const std::vector<double>& values);
ExperimentOutput sweep(const ExperimentConfig& cfg, const ExperimentData& data, SweepDim dim,
                       const std::vector<double>& values);

/// Active / inactive user counts per shard.
std::vector<std::pair<int, int>> shard_composition_report(const ShardPlan& plan, const GroupAssignment& groups);

/// Writes results.csv, shard_composition.csv and run_log.txt into `out_dir`.
void emit_results(const ExperimentOutput& out, const std::filesystem::path& out_dir);

std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);
std::string composition_csv(const std::vector<CompositionRow>& rows);

/// Shortest decimal form with 6 significant digits.
std::string format_number(double v);

}  // namespace recforget
