#include <atomic>
#include <cstdlib>
#include <string>

#include "roie/error.hpp"
#include "roie/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define ROIE_HAVE_AVX2_TU 1
#else
#define ROIE_HAVE_AVX2_TU 0
#endif

namespace roie::kernels {

#if !ROIE_HAVE_AVX2_TU
template <typename T>
const KernelTable<T>* avx2_table() {
  return nullptr;
}
template const KernelTable<float>* avx2_table<float>();
template const KernelTable<double>* avx2_table<double>();
#endif

namespace {

bool cpu_has_avx2() {
#if ROIE_HAVE_AVX2_TU && defined(__GNUC__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("ROIE_NET_SIMD")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return detected_isa();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

Isa detected_isa() {
  static const bool avx2 = cpu_has_avx2();
  return avx2 ? Isa::avx2 : Isa::scalar;
}

bool isa_available(Isa isa) {
  return isa == Isa::scalar || detected_isa() == Isa::avx2;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ConfigError("kernel ISA '" + std::string(isa_name(isa)) +
                      "' is not supported on this CPU");
  }
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& table(Isa isa) {
  if (isa == Isa::avx2) {
    if (const auto* t = avx2_table<T>()) return *t;
  }
  return scalar_table<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace roie::kernels
