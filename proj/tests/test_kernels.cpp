#include <doctest.h>

#include <cmath>
#include <limits>

#include "scale/kernels.hpp"
#include "scale/model.hpp"
#include "support.hpp"

using namespace scale;
namespace k = scale::kernels;

namespace {

// Restores the dispatch choice when a test forces one.
struct IsaGuard {
  k::Isa saved = k::active_isa();
  ~IsaGuard() { k::set_active_isa(saved); }
};

double abs_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] * b[i]);
  return s;
}

// Reassociated sums may differ by about n ulps of the absolute sum.
double reassoc_tol(std::size_t n, double abs_sum) {
  return 4.0 * static_cast<double>(n + 4) * std::numeric_limits<double>::epsilon() * abs_sum + 1e-300;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar table matches naive loops exactly") {
  const auto& s = k::scalar_table();
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u}) {
    auto a = testing::random_vector(rng, n);
    auto b = testing::random_vector(rng, n);
    double dot = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += a[i] * b[i];
      sum += a[i];
    }
    CHECK(s.dot(a.data(), b.data(), n) == dot);
    CHECK(s.sum(a.data(), n) == sum);
    auto y = b;
    s.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == b[i] + 0.5 * a[i]);
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const k::KernelTable* v = k::avx2_table();
  if (v == nullptr || !k::isa_supported(k::Isa::avx2)) {
    MESSAGE("AVX2 path not available on this machine; equivalence not exercised");
    return;
  }
  const auto& s = k::scalar_table();
  Rng rng(12);
  for (std::size_t c = 0; c < testing::kCases; ++c) {
    // Cover every tail length around the 4- and 16-wide unrolls.
    const std::size_t n = c < 40 ? c : testing::random_size(rng, 0, 1000);
    auto a = testing::random_vector(rng, n, -10.0, 10.0);
    auto b = testing::random_vector(rng, n, -10.0, 10.0);
    CAPTURE(n);

    CHECK(std::abs(v->dot(a.data(), b.data(), n) - s.dot(a.data(), b.data(), n)) <= reassoc_tol(n, abs_dot(a, b)));

    double abs_sum = 0.0;
    for (double x : a) abs_sum += std::abs(x);
    CHECK(std::abs(v->sum(a.data(), n) - s.sum(a.data(), n)) <= reassoc_tol(n, abs_sum));

    const double alpha = rng.uniform(-3.0, 3.0);
    auto y1 = b, y2 = b;
    s.axpy(alpha, a.data(), y1.data(), n);
    v->axpy(alpha, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      // One fused vs. one separate rounding.
      const double bound = 2.0 * std::numeric_limits<double>::epsilon() * (std::abs(b[i]) + std::abs(alpha * a[i]));
      CHECK(std::abs(y1[i] - y2[i]) <= bound);
    }

    auto x1 = a, x2 = a;
    s.scal(alpha, x1.data(), n);
    v->scal(alpha, x2.data(), n);
    CHECK(x1 == x2);
  }
}

TEST_CASE("forward pass agrees across kernel sets") {
  if (!k::isa_supported(k::Isa::avx2)) return;
  IsaGuard guard;
  Rng rng(13);
  for (std::size_t c = 0; c < 20; ++c) {
    Model m = testing::random_mlp(rng, 40);
    Batch b = testing::random_batch(rng, m.input_dim(), m.num_classes(), 5);
    k::set_active_isa(k::Isa::scalar);
    const auto ls = loss(m, b);
    const auto zs = forward(m, b.inputs);
    k::set_active_isa(k::Isa::avx2);
    const auto lv = loss(m, b);
    const auto zv = forward(m, b.inputs);
    CHECK(lv == doctest::Approx(ls).epsilon(1e-12));
    CHECK(testing::max_abs_diff(zs.data, zv.data) < 1e-12);
  }
}

TEST_CASE("isa selection") {
  IsaGuard guard;
  CHECK(k::isa_supported(k::Isa::scalar));
  k::set_active_isa(k::Isa::scalar);
  CHECK(k::active_isa() == k::Isa::scalar);
  CHECK(&k::active() == &k::scalar_table());
  CHECK(k::isa_name(k::Isa::scalar) == "scalar");
  CHECK(k::isa_name(k::Isa::avx2) == "avx2");
  if (!k::isa_supported(k::Isa::avx2)) CHECK_THROWS(k::set_active_isa(k::Isa::avx2));
}

}
