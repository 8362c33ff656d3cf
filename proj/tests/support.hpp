#pragma once

// Shared generators for the property suites. Everything is driven by
// scale::Rng so a failing case can be replayed from its printed seed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scale/model.hpp"
#include "scale/rng.hpp"

namespace testing {

/// Cases per randomized property.
inline constexpr std::size_t kCases = 128;

inline std::vector<double> random_vector(scale::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::size_t random_size(scale::Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(hi - lo + 1);
}

/// Small MLP with 1-3 hidden layers and random widths.
inline scale::Model random_mlp(scale::Rng& rng, std::size_t max_width = 8) {
  const std::size_t in = random_size(rng, 2, max_width);
  const std::size_t classes = random_size(rng, 2, 5);
  std::vector<std::size_t> hidden(random_size(rng, 1, 3));
  for (auto& h : hidden) h = random_size(rng, 2, max_width);
  return scale::Model::mlp(in, hidden, classes, rng.next_u64());
}

/// Same shapes as `like`, fresh uniform parameters.
inline scale::Model perturbed(const scale::Model& like, scale::Rng& rng, double scale = 1.0) {
  scale::Model m = like;
  for (std::size_t l = 0; l < m.num_layers(); ++l)
    for (double& p : m.mutable_params(l)) p = rng.uniform(-scale, scale);
  return m;
}

inline scale::Batch random_batch(scale::Rng& rng, std::size_t input_dim, std::size_t classes, std::size_t n) {
  scale::Batch b;
  b.inputs = scale::Matrix(n, input_dim);
  for (double& x : b.inputs.data) x = rng.uniform(-1.0, 1.0);
  b.labels.resize(n);
  for (int& y : b.labels) y = static_cast<int>(rng.below(classes));
  return b;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("scale_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
