#pragma once

// Inner-loop arithmetic kernels. Every kernel has a scalar reference
// implementation; vectorized variants (AVX2+FMA on x86-64) are selected at
// runtime when the CPU supports them. All tensor operations route their hot
// loops through the active table, so switching the ISA switches the whole
// numeric path.

#include <cstddef>
#include <string_view>

namespace roie::kernels {

template <typename T>
struct KernelTable {
  const char* name;
  // y += a * x
  void (*axpy)(std::size_t n, T a, const T* x, T* y);
  // sum_i x[i] * y[i]
  T (*dot)(std::size_t n, const T* x, const T* y);
  // sum_i x[i]
  T (*sum)(std::size_t n, const T* x);
  // out = a * b
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  // out = a + b
  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  // y += a * b
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* y);
  // out = s * x
  void (*scale)(std::size_t n, T s, const T* x, T* out);
};

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// Best ISA the running CPU supports (and this build contains).
Isa detected_isa();

// Currently selected ISA. Initialized from ROIE_NET_SIMD ("scalar" forces the
// reference kernels) and otherwise from detected_isa().
Isa active_isa();

// Throws ConfigError if the ISA is unavailable on this machine.
void set_active_isa(Isa isa);

bool isa_available(Isa isa);

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
inline const KernelTable<T>& active() {
  return table<T>(active_isa());
}

// Implementations, one per translation unit.
template <typename T>
const KernelTable<T>& scalar_table();
template <typename T>
const KernelTable<T>* avx2_table();  // nullptr when not compiled in

}  // namespace roie::kernels
