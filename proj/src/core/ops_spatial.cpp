#include <algorithm>
#include <cmath>

#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/ops.hpp"

namespace roie {

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("max_pool2: spatial dims must be even, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const T* in = x.values().data();
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = in + nc * s.plane();
    for (int64_t oy = 0; oy < os.h; ++oy) {
      for (int64_t ox = 0; ox < os.w; ++ox) {
        int64_t best = (2 * oy) * s.w + 2 * ox;
        for (int64_t dy = 0; dy < 2; ++dy) {
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t idx = (2 * oy + dy) * s.w + 2 * ox + dx;
            if (p[idx] > p[best]) best = idx;  // strict: first maximum wins ties
          }
        }
        const int64_t o = nc * os.plane() + oy * os.w + ox;
        out[o] = p[best];
        (*argmax)[o] = nc * s.plane() + best;
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result<T>("max_pool2", os, std::move(out), {xi},
                                [xi, argmax](const TensorImpl<T>& res) {
                                  for (std::size_t i = 0; i < res.grad.size(); ++i) {
                                    xi->grad[(*argmax)[i]] += res.grad[i];
                                  }
                                });
}

namespace {

// Per output index along one axis: the two source taps and the weight of the
// upper tap.
struct Taps {
  std::vector<int64_t> lo;
  std::vector<int64_t> hi;
  std::vector<double> frac;
};

Taps half_pixel_taps(int64_t in_size) {
  const int64_t out_size = 2 * in_size;
  Taps t;
  t.lo.resize(out_size);
  t.hi.resize(out_size);
  t.frac.resize(out_size);
  for (int64_t i = 0; i < out_size; ++i) {
    double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const auto lo = static_cast<int64_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in_size - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  auto ty = std::make_shared<Taps>(half_pixel_taps(s.h));
  auto tx = std::make_shared<Taps>(half_pixel_taps(s.w));
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  const T* in = x.values().data();
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = in + nc * s.plane();
    T* o = out.data() + nc * os.plane();
    for (int64_t oy = 0; oy < os.h; ++oy) {
      const T fy = static_cast<T>(ty->frac[oy]);
      const T* r0 = p + ty->lo[oy] * s.w;
      const T* r1 = p + ty->hi[oy] * s.w;
      for (int64_t ox = 0; ox < os.w; ++ox) {
        const T fx = static_cast<T>(tx->frac[ox]);
        const int64_t x0 = tx->lo[ox], x1 = tx->hi[ox];
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        o[oy * os.w + ox] = top + fy * (bot - top);
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result<T>(
      "upsample_bilinear2", os, std::move(out), {xi}, [xi, s, os, ty, tx](const TensorImpl<T>& res) {
        for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
          T* gp = xi->grad.data() + nc * s.plane();
          const T* g = res.grad.data() + nc * os.plane();
          for (int64_t oy = 0; oy < os.h; ++oy) {
            const T fy = static_cast<T>(ty->frac[oy]);
            T* r0 = gp + ty->lo[oy] * s.w;
            T* r1 = gp + ty->hi[oy] * s.w;
            for (int64_t ox = 0; ox < os.w; ++ox) {
              const T fx = static_cast<T>(tx->frac[ox]);
              const int64_t x0 = tx->lo[ox], x1 = tx->hi[ox];
              const T v = g[oy * os.w + ox];
              r0[x0] += v * (1 - fy) * (1 - fx);
              r0[x1] += v * (1 - fy) * fx;
              r1[x0] += v * fy * (1 - fx);
              r1[x1] += v * fy * fx;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ConfigError("concat_channels: empty input list");
  const Shape first = inputs.front().shape();
  int64_t channels = 0;
  for (const auto& t : inputs) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + first.str() +
                       " outside the channel dimension");
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const int64_t HW = first.plane();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  std::vector<int64_t> offsets;
  int64_t offset = 0;
  for (const auto& t : inputs) {
    const int64_t c = t.shape().c;
    for (int64_t n = 0; n < os.n; ++n) {
      std::copy_n(t.values().data() + n * c * HW, c * HW,
                  out.data() + (n * channels + offset) * HW);
    }
    impls.push_back(t.impl());
    offsets.push_back(offset);
    offset += c;
  }
  auto parts = impls;
  return detail::make_result<T>(
      "concat_channels", os, std::move(out), std::move(impls),
      [parts = std::move(parts), offsets = std::move(offsets), os](const TensorImpl<T>& res) {
        const auto& k = kernels::active<T>();
        const int64_t HW = os.plane();
        for (std::size_t i = 0; i < parts.size(); ++i) {
          auto& p = *parts[i];
          if (!p.requires_grad) continue;
          const int64_t c = p.shape.c;
          for (int64_t n = 0; n < os.n; ++n) {
            k.axpy(static_cast<std::size_t>(c * HW), T(1),
                   res.grad.data() + (n * os.c + offsets[i]) * HW, p.grad.data() + n * c * HW);
          }
        }
      });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t begin, int64_t count) {
  const Shape s = x.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const Shape os{s.n, count, s.h, s.w};
  const int64_t HW = s.plane();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int64_t n = 0; n < s.n; ++n) {
    std::copy_n(x.values().data() + (n * s.c + begin) * HW, count * HW,
                out.data() + n * count * HW);
  }
  auto xi = x.impl();
  return detail::make_result<T>(
      "slice_channels", os, std::move(out), {xi}, [xi, s, begin, count](const TensorImpl<T>& res) {
        const int64_t HW = s.plane();
        const auto& k = kernels::active<T>();
        for (int64_t n = 0; n < s.n; ++n) {
          k.axpy(static_cast<std::size_t>(count * HW), T(1), res.grad.data() + n * count * HW,
                 xi->grad.data() + (n * s.c + begin) * HW);
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 1, 1};
  const int64_t HW = s.plane();
  const auto& k = kernels::active<T>();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    out[nc] = k.sum(static_cast<std::size_t>(HW), x.values().data() + nc * HW) /
              static_cast<T>(HW);
  }
  auto xi = x.impl();
  return detail::make_result<T>("global_avg_pool", os, std::move(out), {xi},
                                [xi, s](const TensorImpl<T>& res) {
                                  const int64_t HW = s.plane();
                                  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
                                    const T g = res.grad[nc] / static_cast<T>(HW);
                                    T* gx = xi->grad.data() + nc * HW;
                                    for (int64_t i = 0; i < HW; ++i) gx[i] += g;
                                  }
                                });
}

#define ROIE_INSTANTIATE(T)                                                   \
  template Tensor<T> max_pool2(const Tensor<T>&);                             \
  template Tensor<T> upsample_bilinear2(const Tensor<T>&);                    \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);          \
  template Tensor<T> slice_channels(const Tensor<T>&, int64_t, int64_t);      \
  template Tensor<T> global_avg_pool(const Tensor<T>&);

ROIE_INSTANTIATE(float)
ROIE_INSTANTIATE(double)

#undef ROIE_INSTANTIATE

}  // namespace roie
