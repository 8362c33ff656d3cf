#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scale/model.hpp"

namespace scale {

enum class DataSource { synthetic, idx_files };

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  DataSource source = DataSource::synthetic;
  /// size() x dim, row-major.
  std::vector<double> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

  /// Throws if empty, labels out of range, or inputs/labels misaligned.
  void validate() const;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& ds);
std::vector<std::size_t> all_indices(const Dataset& ds);

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t per_class = 100;
  double spread = 0.15;
};

/// C isotropic Gaussian clusters (std = spread) whose means are seeded
/// random points on the unit sphere. Samples are ordered class-major.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);
Dataset gen_synthetic(std::size_t classes, std::size_t dim, std::size_t per_class, double spread,
                      std::uint64_t seed);

/// Fresh draws from the same clusters as gen_synthetic(spec, seed) with
/// per_class samples per class; used as the held-out evaluation set.
Dataset gen_synthetic_holdout(const SyntheticSpec& spec, std::uint64_t seed, std::size_t per_class);

/// IDX (MNIST-family) image/label pair. Pixels are scaled to [0, 1].
/// `limit` > 0 keeps only the first `limit` samples.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t limit = 0);

/// Image geometry recorded by load_idx (rows, cols); zero for synthetic data.
struct ImageShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
};
ImageShape idx_image_shape(const std::filesystem::path& images_path);

/// Client n's sample indices into the parent dataset.
struct ClientPartition {
  std::vector<std::vector<std::size_t>> clients;

  std::size_t num_clients() const { return clients.size(); }
  std::vector<std::size_t> sizes() const;
};

/// Label-skew partition: for every class a Dirichlet(alpha * 1_N) proportion
/// vector splits that class's samples across clients (largest-remainder
/// rounding). Clients left empty receive one sample from the largest client.
ClientPartition dirichlet_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed);

/// {"<client_id>": [indices...]}
nlohmann::json partition_to_json(const ClientPartition& part);
ClientPartition partition_from_json(const nlohmann::json& j);

enum class Granularity { client, class_, sample };

struct UnlearnRequest {
  std::vector<std::size_t> clients;
  Granularity granularity = Granularity::client;
  std::vector<int> class_set;
  std::optional<double> sample_fraction;
  std::uint64_t seed = 0;

  void validate() const;

  /// "client:3", "class:3:0,2", "sample:3:0.5"
  static UnlearnRequest parse(const std::string& text, std::uint64_t seed = 0);
  std::string to_string() const;
};

struct ForgetSplit {
  /// Sorted ascending.
  std::vector<std::size_t> forget;
  std::vector<std::size_t> remain;
  /// Per client: the client's indices that stay in D_r.
  std::vector<std::vector<std::size_t>> remain_by_client;

  std::size_t forget_size() const { return forget.size(); }
  std::size_t remain_size() const { return remain.size(); }
  std::vector<std::size_t> remain_sizes() const;
};

ForgetSplit build_split(const Dataset& ds, const ClientPartition& part, const UnlearnRequest& req);

/// Split that forgets nothing (D_r = D).
ForgetSplit empty_split(const ClientPartition& part);

}  // namespace scale
