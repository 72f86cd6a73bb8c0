#include <atomic>
#include <cstdlib>
#include <string>

#include "meshsplat/simd/kernels.hpp"

namespace meshsplat::simd {

namespace {

Isa detect() {
  if (const char* env = std::getenv("MESHSPLAT_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && isa_available(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<int>& active_slot() {
  static std::atomic<int> slot{static_cast<int>(detect())};
  return slot;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(MESHSPLAT_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return static_cast<Isa>(active_slot().load()); }

void force_isa(Isa isa) {
  if (!isa_available(isa)) throw Error(std::string("SIMD variant not available: ") + isa_name(isa));
  active_slot().store(static_cast<int>(isa));
}

const KernelTable& kernels(Isa isa) {
#if defined(MESHSPLAT_HAVE_AVX2)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return detail::avx2_table();
#endif
  (void)isa;
  return detail::scalar_table();
}

const KernelTable& kernels() { return kernels(active_isa()); }

}  // namespace meshsplat::simd
