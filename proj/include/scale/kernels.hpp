#pragma once

// Dense inner-loop kernels used by the network substrate.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The variant is chosen once at first use from CPUID;
// SCALE_SIMD=scalar|avx2 in the environment overrides the choice. The AVX2
// variants reassociate sums (four-lane accumulators plus FMA), so results
// differ from the scalar path in the last bits but are deterministic for a
// given ISA.

#include <cassert>
#include <cstddef>
#include <span>
#include <string_view>

namespace scale::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// x *= alpha
  void (*scal)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
Isa active_isa();
/// Force a kernel set (tests, benchmarking). Throws if unsupported.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void scal(double alpha, std::span<double> x) { active().scal(alpha, x.data(), x.size()); }

inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

}  // namespace scale::kernels
