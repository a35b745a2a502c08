#include <algorithm>

#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/ops.hpp"
#include "roie/parallel.hpp"

namespace roie {
namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
void check_bias(const Tensor<T>& bias, int64_t channels, const char* op) {
  if (!bias.defined()) return;
  if (bias.numel() != channels) {
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.numel()) +
                     " elements, expected " + std::to_string(channels));
  }
}

// Valid output column range for kernel column kx with padding 1:
// output x reads input x + kx - 1.
struct Span1d {
  int64_t begin;
  int64_t end;
};

inline Span1d valid_range(int64_t size, int64_t k) {
  return {std::max<int64_t>(0, 1 - k), std::min<int64_t>(size, size + 1 - k)};
}

}  // namespace

template <typename T>
Tensor<T> conv2d_depthwise(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != s.c || ws.c != 1 || ws.h != 3 || ws.w != 3) {
    throw ShapeError("conv2d_depthwise: weight " + ws.str() + " incompatible with input " +
                     s.str() + " (expected " + std::to_string(s.c) + "x1x3x3)");
  }
  check_bias(bias, s.c, "conv2d_depthwise");

  const auto& k = kernels::active<T>();
  const int64_t H = s.h, W = s.w, HW = s.plane();
  std::vector<T> out(static_cast<std::size_t>(s.numel()), T(0));
  const T* in = x.values().data();
  const T* wt = weight.values().data();
  const T* bs = bias.defined() ? bias.values().data() : nullptr;

  parallel_for(0, s.n * s.c, [&](int64_t nc) {
    const int64_t c = nc % s.c;
    T* o = out.data() + nc * HW;
    const T* src = in + nc * HW;
    if (bs) std::fill(o, o + HW, bs[c]);
    for (int64_t ky = 0; ky < 3; ++ky) {
      const Span1d rows = valid_range(H, ky);
      for (int64_t kx = 0; kx < 3; ++kx) {
        const T wv = wt[c * 9 + ky * 3 + kx];
        const Span1d cols = valid_range(W, kx);
        const auto len = static_cast<std::size_t>(cols.end - cols.begin);
        for (int64_t y = rows.begin; y < rows.end; ++y) {
          k.axpy(len, wv, src + (y + ky - 1) * W + cols.begin + kx - 1, o + y * W + cols.begin);
        }
      }
    }
  });

  std::vector<ImplPtr<T>> inputs{x.impl(), weight.impl()};
  if (bias.defined()) inputs.push_back(bias.impl());
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result<T>(
      "conv2d_depthwise", s, std::move(out), std::move(inputs),
      [xi, wi, bi, s](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t H = s.h, W = s.w, HW = s.plane();
        const T* g = res.grad.data();
        if (xi->requires_grad) {
          T* gx = xi->grad.data();
          const T* wt = wi->data.data();
          parallel_for(0, s.n * s.c, [&](int64_t nc) {
            const int64_t c = nc % s.c;
            for (int64_t ky = 0; ky < 3; ++ky) {
              const Span1d rows = valid_range(H, ky);
              for (int64_t kx = 0; kx < 3; ++kx) {
                const T wv = wt[c * 9 + ky * 3 + kx];
                const Span1d cols = valid_range(W, kx);
                const auto len = static_cast<std::size_t>(cols.end - cols.begin);
                for (int64_t y = rows.begin; y < rows.end; ++y) {
                  k.axpy(len, wv, g + nc * HW + y * W + cols.begin,
                         gx + nc * HW + (y + ky - 1) * W + cols.begin + kx - 1);
                }
              }
            }
          });
        }
        if (wi->requires_grad) {
          T* gw = wi->grad.data();
          const T* in = xi->data.data();
          parallel_for(0, s.c, [&](int64_t c) {
            for (int64_t ky = 0; ky < 3; ++ky) {
              const Span1d rows = valid_range(H, ky);
              for (int64_t kx = 0; kx < 3; ++kx) {
                const Span1d cols = valid_range(W, kx);
                const auto len = static_cast<std::size_t>(cols.end - cols.begin);
                T acc = 0;
                for (int64_t n = 0; n < s.n; ++n) {
                  const int64_t nc = n * s.c + c;
                  for (int64_t y = rows.begin; y < rows.end; ++y) {
                    acc += k.dot(len, g + nc * HW + y * W + cols.begin,
                                 in + nc * HW + (y + ky - 1) * W + cols.begin + kx - 1);
                  }
                }
                gw[c * 9 + ky * 3 + kx] += acc;
              }
            }
          });
        }
        if (bi && bi->requires_grad) {
          for (int64_t n = 0; n < s.n; ++n) {
            for (int64_t c = 0; c < s.c; ++c) {
              bi->grad[c] += k.sum(static_cast<std::size_t>(HW), g + (n * s.c + c) * HW);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d_pointwise(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != s.c || ws.h != 1 || ws.w != 1) {
    throw ShapeError("conv2d_pointwise: weight " + ws.str() + " incompatible with input " +
                     s.str() + " (expected Coutx" + std::to_string(s.c) + "x1x1)");
  }
  const int64_t cout = ws.n;
  check_bias(bias, cout, "conv2d_pointwise");

  const auto& k = kernels::active<T>();
  const Shape os{s.n, cout, s.h, s.w};
  const int64_t HW = s.plane();
  const auto len = static_cast<std::size_t>(HW);
  std::vector<T> out(static_cast<std::size_t>(os.numel()), T(0));
  const T* in = x.values().data();
  const T* wt = weight.values().data();
  const T* bs = bias.defined() ? bias.values().data() : nullptr;

  parallel_for(0, s.n * cout, [&](int64_t nco) {
    const int64_t n = nco / cout, co = nco % cout;
    T* o = out.data() + nco * HW;
    if (bs) std::fill(o, o + HW, bs[co]);
    for (int64_t ci = 0; ci < s.c; ++ci) {
      k.axpy(len, wt[co * s.c + ci], in + (n * s.c + ci) * HW, o);
    }
  });

  std::vector<ImplPtr<T>> inputs{x.impl(), weight.impl()};
  if (bias.defined()) inputs.push_back(bias.impl());
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result<T>(
      "conv2d_pointwise", os, std::move(out), std::move(inputs),
      [xi, wi, bi, s, cout](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t HW = s.plane();
        const auto len = static_cast<std::size_t>(HW);
        const T* g = res.grad.data();
        if (xi->requires_grad) {
          T* gx = xi->grad.data();
          const T* wt = wi->data.data();
          parallel_for(0, s.n * s.c, [&](int64_t nci) {
            const int64_t n = nci / s.c, ci = nci % s.c;
            for (int64_t co = 0; co < cout; ++co) {
              k.axpy(len, wt[co * s.c + ci], g + (n * cout + co) * HW, gx + nci * HW);
            }
          });
        }
        if (wi->requires_grad) {
          T* gw = wi->grad.data();
          const T* in = xi->data.data();
          parallel_for(0, cout, [&](int64_t co) {
            for (int64_t ci = 0; ci < s.c; ++ci) {
              T acc = 0;
              for (int64_t n = 0; n < s.n; ++n) {
                acc += k.dot(len, g + (n * cout + co) * HW, in + (n * s.c + ci) * HW);
              }
              gw[co * s.c + ci] += acc;
            }
          });
        }
        if (bi && bi->requires_grad) {
          for (int64_t n = 0; n < s.n; ++n) {
            for (int64_t co = 0; co < cout; ++co) {
              bi->grad[co] += k.sum(len, g + (n * cout + co) * HW);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape s = x.shape();
  const int64_t features = s.c * s.h * s.w;
  const Shape ws = weight.shape();
  if (ws.c * ws.h * ws.w != features) {
    throw ShapeError("dense: weight " + ws.str() + " expects " +
                     std::to_string(ws.c * ws.h * ws.w) + " features, input " + s.str() +
                     " has " + std::to_string(features));
  }
  const int64_t units = ws.n;
  check_bias(bias, units, "dense");

  const auto& k = kernels::active<T>();
  const auto len = static_cast<std::size_t>(features);
  const Shape os{s.n, units, 1, 1};
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  const T* in = x.values().data();
  const T* wt = weight.values().data();
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t u = 0; u < units; ++u) {
      T v = k.dot(len, wt + u * features, in + n * features);
      if (bias.defined()) v += bias.values()[static_cast<std::size_t>(u)];
      out[static_cast<std::size_t>(n * units + u)] = v;
    }
  }

  std::vector<ImplPtr<T>> inputs{x.impl(), weight.impl()};
  if (bias.defined()) inputs.push_back(bias.impl());
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result<T>(
      "dense", os, std::move(out), std::move(inputs),
      [xi, wi, bi, s, features, units](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const auto len = static_cast<std::size_t>(features);
        const T* g = res.grad.data();
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t u = 0; u < units; ++u) {
            const T gv = g[n * units + u];
            if (xi->requires_grad) {
              k.axpy(len, gv, wi->data.data() + u * features, xi->grad.data() + n * features);
            }
            if (wi->requires_grad) {
              k.axpy(len, gv, xi->data.data() + n * features, wi->grad.data() + u * features);
            }
            if (bi && bi->requires_grad) bi->grad[static_cast<std::size_t>(u)] += gv;
          }
        }
      });
}

#define ROIE_INSTANTIATE(T)                                                             \
  template Tensor<T> conv2d_depthwise(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> conv2d_pointwise(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

ROIE_INSTANTIATE(float)
ROIE_INSTANTIATE(double)

#undef ROIE_INSTANTIATE

}  // namespace roie
