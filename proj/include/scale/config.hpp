#pragma once

// Experiment configuration: a JSON document with fixed blocks. Missing
// keys take the defaults below; unknown keys and ill-typed values are
// rejected with the dotted path of the offending field.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scale/ppo.hpp"
#include "scale/sensitivity.hpp"

namespace scale {

struct DatasetConfig {
  std::string source = "synthetic";  ///< "synthetic" | "idx"
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t per_class = 100;
  double spread = 0.15;
  std::size_t holdout_per_class = 50;
  std::string idx_images;
  std::string idx_labels;
  std::string idx_test_images;
  std::string idx_test_labels;
  std::size_t idx_limit = 0;
};

struct FederationBlock {
  std::size_t clients = 8;
  std::size_t rounds = 30;
  std::size_t local_epochs = 2;
  double eta = 0.05;
  std::size_t clients_per_round = 8;
  std::size_t batch_size = 10;
  double dirichlet_alpha = 1.0;
};

struct ModelBlock {
  std::string arch = "mlp";  ///< "mlp" | "mini_cnn"
  std::vector<std::size_t> hidden{64, 32, 16};
  std::size_t cnn_dense_hidden = 32;
};

struct ScaleBlock {
  double lambda = 0.5;
  /// 0 selects ceil(L / 3).
  std::size_t m_sel = 0;
  std::size_t groups = 8;
  double w_f = 0.7;
  double w_c = 0.3;
  std::size_t t_collect = 32;
  std::size_t deploy_steps = 32;
  std::size_t ratio_levels = 10;
  double sparsity_cap = 0.95;
  std::string kl_scheme = "softmax";  ///< "softmax" | "abs_smoothed"
  PpoConfig ppo;
};

struct BaselineBlock {
  std::size_t ascent_steps = 10;
  double ascent_eta = 0.05;
};

struct MetricsBlock {
  double alpha_w = 1.0;
  double beta_w = 1.0;
  double secs_per_step = 0.25;
  bool aoi_paper_literal = false;
};

struct ExperimentConfig {
  std::string scenario = "r1";
  DatasetConfig dataset;
  FederationBlock federation;
  ModelBlock model;
  ScaleBlock scale;
  BaselineBlock baselines;
  MetricsBlock metrics;
  /// Default unlearning request, "client:3" style.
  std::string request = "client:3";
  std::uint64_t master_seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  /// Throws ConfigError naming the first unknown or ill-typed key.
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;

  DistributionScheme distribution_scheme() const;
  EnvConfig env_config() const;
};

/// Reads and validates a config file. When `apply_env` is set, a
/// SCALE_SEED environment variable replaces the master seed.
ExperimentConfig load_config(const std::filesystem::path& path, bool apply_env = true);

/// Applies SCALE_SEED if set; throws ConfigError if it is not an integer.
void apply_seed_override(ExperimentConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace scale
