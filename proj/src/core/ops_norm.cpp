#include <algorithm>
#include <cmath>

#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/ops.hpp"
#include "roie/parallel.hpp"

namespace roie {

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options) {
  const Shape s = x.shape();
  const std::initializer_list<const Tensor<T>*> per_channel{&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* t : per_channel) {
    if (t->numel() != s.c) {
      throw ShapeError("batch_norm: per-channel tensor has " + std::to_string(t->numel()) +
                       " elements, input " + s.str() + " has " + std::to_string(s.c) +
                       " channels");
    }
  }
  if (!(options.epsilon > 0)) throw ConfigError("batch_norm: epsilon must be positive");
  if (!(options.momentum >= 0 && options.momentum <= 1)) {
    throw ConfigError("batch_norm: momentum must be in [0, 1]");
  }

  const int64_t C = s.c, HW = s.plane();
  const int64_t count = s.n * HW;
  const T* in = x.values().data();
  std::vector<T> mean(static_cast<std::size_t>(C));
  std::vector<T> inv_std(static_cast<std::size_t>(C));

  if (mode == Mode::train) {
    T* rm = running_mean.data().data();
    T* rv = running_var.data().data();
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (int64_t n = 0; n < s.n; ++n) {
        const T* p = in + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0;
      for (int64_t n = 0; n < s.n; ++n) {
        const T* p = in + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      rm[c] = static_cast<T>((1 - options.momentum) * rm[c] + options.momentum * mu);
      rv[c] = static_cast<T>((1 - options.momentum) * rv[c] + options.momentum * unbiased);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.values()[c]) +
                                                  options.epsilon));
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.numel()));
  std::vector<T> out(static_cast<std::size_t>(s.numel()));
  const T* gm = gamma.values().data();
  const T* bt = beta.values().data();
  parallel_for(0, s.n * C, [&](int64_t nc) {
    const int64_t c = nc % C;
    const T mu = mean[c], is = inv_std[c], g = gm[c], b = bt[c];
    T* xh = xhat->data() + nc * HW;
    T* o = out.data() + nc * HW;
    const T* p = in + nc * HW;
    for (int64_t i = 0; i < HW; ++i) {
      xh[i] = (p[i] - mu) * is;
      o[i] = g * xh[i] + b;
    }
  });

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return detail::make_result<T>(
      "batch_norm", s, std::move(out), {xi, gi, bi},
      [xi, gi, bi, s, xhat, inv_std = std::move(inv_std), mode](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t C = s.c, HW = s.plane();
        const auto len = static_cast<std::size_t>(HW);
        const T M = static_cast<T>(s.n * HW);
        const T* g = res.grad.data();
        const T* xh = xhat->data();
        std::vector<T> sum_g(static_cast<std::size_t>(C), T(0));
        std::vector<T> sum_gx(static_cast<std::size_t>(C), T(0));
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (n * C + c) * HW;
            sum_g[c] += k.sum(len, g + off);
            sum_gx[c] += k.dot(len, g + off, xh + off);
          }
        }
        if (gi->requires_grad) {
          for (int64_t c = 0; c < C; ++c) gi->grad[c] += sum_gx[c];
        }
        if (bi->requires_grad) {
          for (int64_t c = 0; c < C; ++c) bi->grad[c] += sum_g[c];
        }
        if (!xi->requires_grad) return;
        T* gx = xi->grad.data();
        const T* gm = gi->data.data();
        parallel_for(0, s.n * C, [&](int64_t nc) {
          const int64_t c = nc % C;
          const int64_t off = nc * HW;
          const T scale = gm[c] * inv_std[c];
          if (mode == Mode::train) {
            const T mg = sum_g[c] / M;
            const T mgx = sum_gx[c] / M;
            for (int64_t i = 0; i < HW; ++i) {
              gx[off + i] += scale * (g[off + i] - mg - xh[off + i] * mgx);
            }
          } else {
            k.axpy(len, scale, g + off, gx + off);
          }
        });
      });
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& x, const Tensor<T>& y) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError("bce_loss: prediction " + x.shape().str() + " vs target " +
                     y.shape().str());
  }
  const T lo = static_cast<T>(kBceClamp);
  const T hi = static_cast<T>(1.0 - kBceClamp);
  const auto& xv = x.values();
  const auto& yv = y.values();
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double p = std::clamp(xv[i], lo, hi);
    acc += yv[i] * std::log(p) + (1 - yv[i]) * std::log1p(-p);
  }
  const double count = static_cast<double>(xv.size());
  std::vector<T> out{static_cast<T>(-acc / count)};

  auto xi = x.impl();
  auto yi = y.impl();
  return detail::make_result<T>(
      "bce_loss", Shape{1, 1, 1, 1}, std::move(out), {xi},
      [xi, yi, lo, hi, count](const TensorImpl<T>& res) {
        const T g = res.grad[0] / static_cast<T>(count);
        const auto& xv = xi->data;
        const auto& yv = yi->data;
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const T p = xv[i];
          if (p < lo || p > hi) continue;
          xi->grad[i] += g * (p - yv[i]) / (p * (1 - p));
        }
      });
}

#define ROIE_INSTANTIATE(T)                                                               \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                Tensor<T>&, Tensor<T>&, Mode, BatchNormOptions);          \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);

ROIE_INSTANTIATE(float)
ROIE_INSTANTIATE(double)

#undef ROIE_INSTANTIATE

}  // namespace roie
