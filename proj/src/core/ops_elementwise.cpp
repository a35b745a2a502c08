#include <algorithm>
#include <cmath>
#include <limits>

#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/ops.hpp"

namespace roie {
namespace {

// Channel-broadcast geometry for a binary op: per output (n, c) plane, the
// plane index into each operand.
struct Broadcast {
  Shape out;
  int64_t ca;
  int64_t cb;
  int64_t a_plane(int64_t n, int64_t c) const { return n * ca + (ca == 1 ? 0 : c); }
  int64_t b_plane(int64_t n, int64_t c) const { return n * cb + (cb == 1 ? 0 : c); }
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const bool spatial = a.n == b.n && a.h == b.h && a.w == b.w;
  const bool channels = a.c == b.c || a.c == 1 || b.c == 1;
  if (!spatial || !channels) {
    throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                     " are not broadcast-compatible");
  }
  return {Shape{a.n, std::max(a.c, b.c), a.h, a.w}, a.c, b.c};
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto xi = x.impl();
  return detail::make_result<T>("relu", x.shape(), std::move(out), {xi},
                                [xi](const TensorImpl<T>& res) {
                                  for (std::size_t i = 0; i < res.data.size(); ++i) {
                                    if (xi->data[i] > T(0)) xi->grad[i] += res.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    T y;
    if (v >= 0) {
      y = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y = e / (T(1) + e);
    }
    // Saturated values are pinned to the nearest representable interior
    // point so the output stays strictly inside (0, 1).
    out[i] = std::clamp(y, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
  }
  auto xi = x.impl();
  return detail::make_result<T>("sigmoid", x.shape(), std::move(out), {xi},
                                [xi](const TensorImpl<T>& res) {
                                  for (std::size_t i = 0; i < res.data.size(); ++i) {
                                    const T y = res.data[i];
                                    xi->grad[i] += res.grad[i] * y * (T(1) - y);
                                  }
                                });
}

template <typename T>
Tensor<T> ew_mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast bc = broadcast_shapes(a.shape(), b.shape(), "ew_mul");
  const auto& k = kernels::active<T>();
  const int64_t HW = bc.out.plane();
  const auto len = static_cast<std::size_t>(HW);
  std::vector<T> out(static_cast<std::size_t>(bc.out.numel()));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (int64_t n = 0; n < bc.out.n; ++n) {
    for (int64_t c = 0; c < bc.out.c; ++c) {
      k.mul(len, av + bc.a_plane(n, c) * HW, bv + bc.b_plane(n, c) * HW,
            out.data() + (n * bc.out.c + c) * HW);
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "ew_mul", bc.out, std::move(out), {ai, bi}, [ai, bi, bc](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t HW = bc.out.plane();
        const auto len = static_cast<std::size_t>(HW);
        for (int64_t n = 0; n < bc.out.n; ++n) {
          for (int64_t c = 0; c < bc.out.c; ++c) {
            const T* g = res.grad.data() + (n * bc.out.c + c) * HW;
            const int64_t pa = bc.a_plane(n, c) * HW;
            const int64_t pb = bc.b_plane(n, c) * HW;
            if (ai->requires_grad) k.mul_acc(len, g, bi->data.data() + pb, ai->grad.data() + pa);
            if (bi->requires_grad) k.mul_acc(len, g, ai->data.data() + pa, bi->grad.data() + pb);
          }
        }
      });
}

template <typename T>
Tensor<T> ew_add(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast bc = broadcast_shapes(a.shape(), b.shape(), "ew_add");
  const auto& k = kernels::active<T>();
  const int64_t HW = bc.out.plane();
  const auto len = static_cast<std::size_t>(HW);
  std::vector<T> out(static_cast<std::size_t>(bc.out.numel()));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (int64_t n = 0; n < bc.out.n; ++n) {
    for (int64_t c = 0; c < bc.out.c; ++c) {
      k.add(len, av + bc.a_plane(n, c) * HW, bv + bc.b_plane(n, c) * HW,
            out.data() + (n * bc.out.c + c) * HW);
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "ew_add", bc.out, std::move(out), {ai, bi}, [ai, bi, bc](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t HW = bc.out.plane();
        const auto len = static_cast<std::size_t>(HW);
        for (int64_t n = 0; n < bc.out.n; ++n) {
          for (int64_t c = 0; c < bc.out.c; ++c) {
            const T* g = res.grad.data() + (n * bc.out.c + c) * HW;
            if (ai->requires_grad) k.axpy(len, T(1), g, ai->grad.data() + bc.a_plane(n, c) * HW);
            if (bi->requires_grad) k.axpy(len, T(1), g, bi->grad.data() + bc.b_plane(n, c) * HW);
          }
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  const auto& k = kernels::active<T>();
  std::vector<T> out(x.values().size());
  k.scale(out.size(), s, x.values().data(), out.data());
  auto xi = x.impl();
  return detail::make_result<T>("scale", x.shape(), std::move(out), {xi},
                                [xi, s](const TensorImpl<T>& res) {
                                  kernels::active<T>().axpy(res.grad.size(), s, res.grad.data(),
                                                            xi->grad.data());
                                });
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape xs = x.shape();
  const Shape ss = s.shape();
  if (ss.n != xs.n || ss.c != xs.c || ss.h != 1 || ss.w != 1) {
    throw ShapeError("channel_scale: factors " + ss.str() + " incompatible with input " +
                     xs.str());
  }
  const auto& k = kernels::active<T>();
  const int64_t HW = xs.plane();
  const auto len = static_cast<std::size_t>(HW);
  std::vector<T> out(static_cast<std::size_t>(xs.numel()));
  for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    k.scale(len, s.values()[nc], x.values().data() + nc * HW, out.data() + nc * HW);
  }
  auto xi = x.impl();
  auto si = s.impl();
  return detail::make_result<T>(
      "channel_scale", xs, std::move(out), {xi, si}, [xi, si, xs](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t HW = xs.plane();
        const auto len = static_cast<std::size_t>(HW);
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
          const T* g = res.grad.data() + nc * HW;
          if (xi->requires_grad) k.axpy(len, si->data[nc], g, xi->grad.data() + nc * HW);
          if (si->requires_grad) si->grad[nc] += k.dot(len, g, xi->data.data() + nc * HW);
        }
      });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const auto& k = kernels::active<T>();
  std::vector<T> out{k.sum(x.values().size(), x.values().data())};
  auto xi = x.impl();
  return detail::make_result<T>("sum_all", Shape{1, 1, 1, 1}, std::move(out), {xi},
                                [xi](const TensorImpl<T>& res) {
                                  const T g = res.grad[0];
                                  for (T& v : xi->grad) v += g;
                                });
}

#define ROIE_INSTANTIATE(T)                                             \
  template Tensor<T> relu(const Tensor<T>&);                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                         \
  template Tensor<T> ew_mul(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> ew_add(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> scale(const Tensor<T>&, T);                        \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> sum_all(const Tensor<T>&);

ROIE_INSTANTIATE(float)
ROIE_INSTANTIATE(double)

#undef ROIE_INSTANTIATE

}  // namespace roie
