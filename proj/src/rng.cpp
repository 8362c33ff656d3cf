#include "scale/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace scale {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, SeedTag tag) {
  return splitmix64(master ^ static_cast<std::uint64_t>(tag));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(parent ^ splitmix64(a)) ^ b);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_pos() {
  return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller.
  const double u1 = uniform_pos();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::log_gamma_variate(double shape) {
  // Marsaglia-Tsang; shapes below one use Gamma(a) = Gamma(a+1) * U^(1/a).
  double boost = 0.0;
  if (shape < 1.0) {
    boost = std::log(uniform_pos()) / shape;
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x ||
        std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return std::log(d * v) + boost;
    }
  }
}

std::vector<double> dirichlet(Rng& rng, std::size_t k, double alpha) {
  std::vector<double> logs(k);
  for (auto& l : logs) l = rng.log_gamma_variate(alpha);
  const double mx = *std::max_element(logs.begin(), logs.end());
  double total = 0.0;
  for (auto& l : logs) {
    l = std::exp(l - mx);
    total += l;
  }
  for (auto& l : logs) l /= total;
  return logs;
}

}  // namespace scale
