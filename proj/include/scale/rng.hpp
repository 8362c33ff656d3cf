#pragma once

// Portable random streams. std::mt19937_64 is bit-specified by the standard,
// but the std:: distributions are not, so every variate used by the
// simulator is derived here from raw engine output.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace scale {

/// Fixed component tags XOR-ed into the master seed.
enum class SeedTag : std::uint64_t {
  dataset = 0x0da7a5e7ULL,
  holdout = 0x401d07ULL,
  partition = 0x9a271710ULL,
  init = 0x1417ULL,
  federation = 0xfed0ULL,
  request = 0x5e9e57ULL,
  ppo = 0x9907ULL,
  baseline = 0xba5e11eULL,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Component seed: mixed (master XOR tag).
std::uint64_t derive_seed(std::uint64_t master, SeedTag tag);

/// Child seed for an indexed sub-stream (round, client, episode, ...).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform in (0, 1]; safe as a log argument.
  double uniform_pos();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n);

  double normal();

  /// log of a Gamma(shape, 1) variate. Working in log space keeps
  /// Dirichlet draws with shape << 1 from underflowing to all-zero.
  double log_gamma_variate(double shape);

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Dirichlet(alpha * 1_k) draw.
std::vector<double> dirichlet(Rng& rng, std::size_t k, double alpha);

}  // namespace scale
