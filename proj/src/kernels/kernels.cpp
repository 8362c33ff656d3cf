#include "scale/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "scale/error.hpp"

namespace scale::kernels {

#ifndef SCALE_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("SCALE_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Isa> g_isa{Isa::scalar};

void install(Isa isa) {
  g_isa.store(isa);
  g_active.store(isa == Isa::avx2 ? avx2_table() : &scalar_table());
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return avx2_table() != nullptr && cpu_has_avx2();
  }
  return false;
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    install(detect());
    t = g_active.load();
  }
  return *t;
}

Isa active_isa() {
  active();
  return g_isa.load();
}

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) throw Error("kernel set not supported on this CPU: " + std::string(isa_name(isa)));
  install(isa);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace scale::kernels
