#pragma once

// The four experiment phases and the run directory they share.
//
// <run>/config.json           effective config (after SCALE_SEED)
// <run>/init.model|.json      initial global model
// <run>/global.model|.json    trained global model
// <run>/history/              last upload per client + index.json
// <run>/partition.json, rounds.csv, timing.json
// <run>/unlearn/<method>/     unlearned.model|.json, request.json, trace.json,
//                             aoi_timeseries.csv, timing.json, metrics.json
//                             (+ sensitivity.csv, ppo_rewards.csv,
//                              actions.jsonl for scale)
// <run>/comparison.csv

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scale/config.hpp"
#include "scale/dataset.hpp"
#include "scale/federation.hpp"
#include "scale/metrics.hpp"
#include "scale/theory.hpp"

namespace scale {

namespace fs = std::filesystem;

enum class Method { scale, retrain, uniform, grad_ascent };
std::string_view to_string(Method m);
Method parse_method(std::string_view s);
/// "scale,retrain" -> {scale, retrain}
std::vector<Method> parse_methods(std::string_view csv);

struct RunPaths {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path init_stem() const { return root / "init"; }
  fs::path global_stem() const { return root / "global"; }
  fs::path history_dir() const { return root / "history"; }
  fs::path partition() const { return root / "partition.json"; }
  fs::path rounds_csv() const { return root / "rounds.csv"; }
  fs::path method_dir(Method m) const { return root / "unlearn" / std::string(to_string(m)); }
  fs::path comparison_csv() const { return root / "comparison.csv"; }
};

struct DataBundle {
  Dataset train;
  Dataset eval;
  ImageShape shape;
};

DataBundle build_data(const ExperimentConfig& cfg);
Model build_init_model(const ExperimentConfig& cfg, const DataBundle& data);
FedConfig fed_config(const ExperimentConfig& cfg);

struct TrainSummary {
  double final_accuracy = 0.0;
  double wall_secs = 0.0;
  std::string config_hash;
};

/// Builds data, partitions it, runs FedAvg and persists the run directory.
/// Refuses to overwrite a finished run unless `force`.
TrainSummary cmd_train(const ExperimentConfig& cfg, const fs::path& out, bool force = false);
TrainSummary cmd_train(const fs::path& config_path, const fs::path& out, bool force = false);

struct UnlearnOptions {
  Method method = Method::scale;
  /// Overrides the config's request string.
  std::optional<std::string> request;
  /// Unlearning seed; defaults to the master seed.
  std::optional<std::uint64_t> seed;
  bool force = false;
};

struct UnlearnSummary {
  Method method = Method::scale;
  std::size_t zeroed = 0;
  double comm_ct = 0.0;
  double wall_secs = 0.0;
};

UnlearnSummary cmd_unlearn(const fs::path& run, const UnlearnOptions& opt);

/// Computes metrics.json per method and comparison.csv. Refuses methods
/// whose artifacts carry a different config hash unless `force`.
std::vector<EvalReport> cmd_eval(const fs::path& run, std::span<const Method> methods, bool force = false);

nlohmann::json eval_report_json(const EvalReport& r, const std::string& config_hash);

/// Writes theory_report.json when `out` is nonempty.
nlohmann::json cmd_theory(const TheoryOptions& opt, const fs::path& out = {});

/// Loaded training artifacts.
struct TrainedRun {
  ExperimentConfig cfg;
  std::string config_hash;
  DataBundle data;
  ClientPartition partition;
  Model init;
  Model global;
  FederationHistory history;
};

TrainedRun load_run(const fs::path& run);

}  // namespace scale
