#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/ops.hpp"
#include "roie/parallel.hpp"

using namespace roie;
using roie::testing::random_tensor;

namespace {

double at(const Tensor<double>& t, int64_t n, int64_t c, int64_t h, int64_t w) {
  return t.at(n, c, h, w);
}

void check_close(const Tensor<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(static_cast<std::size_t>(a.numel()) == b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    INFO("index " << i);
    CHECK(std::abs(a.values()[i] - b[i]) <= tol);
  }
}

// Restores the ISA selected when the guard was created.
struct IsaGuard {
  kernels::Isa saved = kernels::active_isa();
  ~IsaGuard() { kernels::set_active_isa(saved); }
};

}  // namespace

TEST_CASE("shape and construction errors") {
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 1, 1, 1}), ShapeError);
  Tensor<float> t(Shape{1, 2, 1, 1});
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK(Shape{2, 3, 4, 5}.str() == "2x3x4x5");
}

TEST_CASE("depthwise conv matches brute-force correlation") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>({2, 3, 5, 6}, rng);
  auto w = random_tensor<double>({3, 1, 3, 3}, rng);
  auto b = random_tensor<double>({1, 3, 1, 1}, rng);
  std::vector<double> want;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) {
          double acc = b.values()[c];
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= 5 || jj < 0 || jj >= 6) continue;
              acc += at(x, n, c, ii, jj) * at(w, c, 0, di + 1, dj + 1);
            }
          want.push_back(acc);
        }
  check_close(conv2d_depthwise(x, w, b), want, 1e-12);
  CHECK_THROWS_AS(conv2d_depthwise(x, random_tensor<double>({2, 1, 3, 3}, rng)), ShapeError);
}

TEST_CASE("pointwise conv matches per-pixel matmul") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>({2, 4, 3, 3}, rng);
  auto w = random_tensor<double>({5, 4, 1, 1}, rng);
  std::vector<double> want;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 5; ++o)
      for (int p = 0; p < 9; ++p) {
        double acc = 0;
        for (int c = 0; c < 4; ++c) acc += w.values()[o * 4 + c] * at(x, n, c, p / 3, p % 3);
        want.push_back(acc);
      }
  check_close(conv2d_pointwise(x, w), want, 1e-12);
  CHECK_THROWS_AS(conv2d_pointwise(x, random_tensor<double>({5, 3, 1, 1}, rng)), ShapeError);
}

TEST_CASE("batch norm train mode normalizes and tracks two-pass statistics") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng, -2.0, 5.0);
  Tensor<double> gamma({1, 3, 1, 1}, 1.0), beta({1, 3, 1, 1}, 0.0);
  Tensor<double> rm({1, 3, 1, 1}, 0.0), rv({1, 3, 1, 1}, 1.0);
  auto y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
  const double m = 32;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0, ymean = 0, yvar = 0;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 16; ++p) mean += at(x, n, c, p / 4, p % 4);
    mean /= m;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 16; ++p) var += std::pow(at(x, n, c, p / 4, p % 4) - mean, 2);
    var /= m;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 16; ++p) {
        const double expect = (at(x, n, c, p / 4, p % 4) - mean) / std::sqrt(var + 1e-5);
        CHECK(std::abs(at(y, n, c, p / 4, p % 4) - expect) <= 1e-6);
        ymean += at(y, n, c, p / 4, p % 4);
      }
    ymean /= m;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 16; ++p) yvar += std::pow(at(y, n, c, p / 4, p % 4) - ymean, 2);
    yvar /= m;
    CHECK(std::abs(ymean) <= 1e-5);
    CHECK(std::abs(yvar - var / (var + 1e-5)) <= 1e-5);
    CHECK(std::abs(yvar - 1.0) <= 1e-4);
    CHECK(rm.values()[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rv.values()[c] == doctest::Approx(0.9 + 0.1 * var * m / (m - 1)).epsilon(1e-12));
  }
}

TEST_CASE("batch norm eval mode uses running statistics and leaves them alone") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<double>({1, 2, 2, 2}, rng);
  Tensor<double> gamma({1, 2, 1, 1}, std::vector<double>{2.0, 0.5});
  Tensor<double> beta({1, 2, 1, 1}, std::vector<double>{0.1, -0.3});
  Tensor<double> rm({1, 2, 1, 1}, std::vector<double>{0.2, -0.4});
  Tensor<double> rv({1, 2, 1, 1}, std::vector<double>{1.5, 0.25});
  auto y = batch_norm(x, gamma, beta, rm, rv, Mode::eval);
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 4; ++p) {
      const double expect = gamma.values()[c] * (at(x, 0, c, p / 2, p % 2) - rm.values()[c]) /
                                std::sqrt(rv.values()[c] + 1e-5) +
                            beta.values()[c];
      CHECK(at(y, 0, c, p / 2, p % 2) == doctest::Approx(expect).epsilon(1e-12));
    }
  CHECK(rm.values() == std::vector<double>{0.2, -0.4});
  CHECK(rv.values() == std::vector<double>{1.5, 0.25});
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, rm, rv, Mode::eval, {0.1, 0.0}), ConfigError);
}

TEST_CASE("relu and sigmoid") {
  Tensor<double> x({1, 1, 1, 4}, std::vector<double>{-2.0, -0.0, 0.5, 40.0});
  CHECK(relu(x).values() == std::vector<double>{0.0, 0.0, 0.5, 40.0});
  auto s = sigmoid(x);
  CHECK(s.values()[2] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-15));
  Tensor<double> big({1, 1, 1, 2}, std::vector<double>{-800.0, 800.0});
  auto sb = sigmoid(big);
  CHECK(sb.values()[0] > 0.0);
  CHECK(sb.values()[1] < 1.0);
}

TEST_CASE("max pool matches windowed max; first maximum takes the gradient") {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({2, 2, 4, 6}, rng);
  std::vector<double> want;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
          double m = -1e300;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) m = std::max(m, at(x, n, c, 2 * i + a, 2 * j + b));
          want.push_back(m);
        }
  check_close(max_pool2(x), want, 0.0);

  Tensor<double> tie({1, 1, 2, 2}, std::vector<double>{3.0, 3.0, 1.0, 3.0});
  tie.set_requires_grad(true);
  backward(sum_all(max_pool2(tie)));
  CHECK(std::vector<double>(tie.grad().begin(), tie.grad().end()) ==
        std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(max_pool2(Tensor<double>({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("bilinear upsampling matches half-pixel interpolation") {
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({1, 2, 3, 4}, rng);
  std::vector<double> want;
  auto src = [](int i, int size) {
    return std::clamp((i + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(size - 1));
  };
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 8; ++j) {
        const double sy = src(i, 3), sx = src(j, 4);
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 3);
        const double fy = sy - y0, fx = sx - x0;
        want.push_back((1 - fy) * ((1 - fx) * at(x, 0, c, y0, x0) + fx * at(x, 0, c, y0, x1)) +
                       fy * ((1 - fx) * at(x, 0, c, y1, x0) + fx * at(x, 0, c, y1, x1)));
      }
  check_close(upsample_bilinear2(x), want, 1e-12);

  Tensor<double> constant({1, 1, 3, 3}, 0.75);
  const auto up = upsample_bilinear2(constant);
  for (double v : up.values()) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("concat and slice round-trip") {
  std::mt19937_64 rng(7);
  auto a = random_tensor<double>({2, 1, 3, 3}, rng);
  auto b = random_tensor<double>({2, 3, 3, 3}, rng);
  auto cat = concat_channels<double>({a, b});
  CHECK(cat.shape() == Shape{2, 4, 3, 3});
  CHECK(slice_channels(cat, 0, 1).values() == a.values());
  CHECK(slice_channels(cat, 1, 3).values() == b.values());
  CHECK_THROWS_AS(concat_channels<double>({}), ConfigError);
  CHECK_THROWS_AS(concat_channels<double>({a, random_tensor<double>({2, 1, 2, 3}, rng)}), ShapeError);
  CHECK_THROWS_AS(slice_channels(cat, 3, 2), ShapeError);
}

TEST_CASE("global average pooling, dense, sum") {
  std::mt19937_64 rng(8);
  auto x = random_tensor<double>({2, 3, 2, 2}, rng);
  auto g = global_avg_pool(x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int p = 0; p < 4; ++p) s += at(x, n, c, p / 2, p % 2);
      CHECK(at(g, n, c, 0, 0) == doctest::Approx(s / 4).epsilon(1e-14));
    }

  auto w = random_tensor<double>({4, 12, 1, 1}, rng);
  auto b = random_tensor<double>({1, 4, 1, 1}, rng);
  auto y = dense(x, w, b);
  CHECK(y.shape() == Shape{2, 4, 1, 1});
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 4; ++k) {
      double acc = b.values()[k];
      for (int f = 0; f < 12; ++f) acc += w.values()[k * 12 + f] * x.values()[n * 12 + f];
      CHECK(at(y, n, k, 0, 0) == doctest::Approx(acc).epsilon(1e-13));
    }

  double total = 0;
  for (double v : x.values()) total += v;
  CHECK(sum_all(x).item() == doctest::Approx(total).epsilon(1e-14));
}

TEST_CASE("elementwise ops broadcast a single channel") {
  std::mt19937_64 rng(9);
  auto a = random_tensor<double>({2, 3, 2, 2}, rng);
  auto m = random_tensor<double>({2, 1, 2, 2}, rng);
  auto p = ew_mul(a, m), q = ew_mul(m, a), s = ew_add(a, m);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i) {
        CHECK(at(p, n, c, i / 2, i % 2) == at(a, n, c, i / 2, i % 2) * at(m, n, 0, i / 2, i % 2));
        CHECK(at(q, n, c, i / 2, i % 2) == at(p, n, c, i / 2, i % 2));
        CHECK(at(s, n, c, i / 2, i % 2) == at(a, n, c, i / 2, i % 2) + at(m, n, 0, i / 2, i % 2));
      }
  CHECK_THROWS_AS(ew_mul(a, random_tensor<double>({2, 2, 2, 2}, rng)), ShapeError);
  auto cs = channel_scale(a, random_tensor<double>({2, 3, 1, 1}, rng));
  CHECK(cs.shape() == a.shape());
}

TEST_CASE("bce loss matches the direct formula with clamping") {
  Tensor<double> x({1, 1, 1, 4}, std::vector<double>{0.9, 0.2, 0.0, 1.0});
  Tensor<double> y({1, 1, 1, 4}, std::vector<double>{1.0, 0.0, 1.0, 0.0});
  const double c = kBceClamp;
  const double want = -(std::log(0.9) + std::log(0.8) + std::log(c) + std::log(1 - (1 - c))) / 4;
  CHECK(bce_loss(x, y).item() == doctest::Approx(want).epsilon(1e-12));

  x.set_requires_grad(true);
  backward(bce_loss(x, y));
  CHECK(x.grad()[0] == doctest::Approx(-1.0 / (0.9 * 4)).epsilon(1e-12));
  CHECK(x.grad()[2] == 0.0);  // clamped region carries no gradient
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("backward is replayable and guarded") {
  std::mt19937_64 rng(10);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  x.set_requires_grad(true);
  auto loss = sum_all(relu(ew_mul(x, x)));
  backward(loss);
  const std::vector<double> first(x.grad().begin(), x.grad().end());
  backward(loss);
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == first);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == doctest::Approx(2 * x.values()[i]));

  CHECK_THROWS_AS(backward(relu(x)), ContractError);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(sum_all(x).requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("gradient suite passes in double precision") {
  for (const auto& r : roie::testing::run_gradient_suite(123)) {
    INFO(r.op << ": " << r.report.summary());
    CHECK(r.report.passed());
    CHECK(r.report.max_rel_error() <= 1e-4);
  }
}

TEST_CASE("gradient check flags a corrupted analytic gradient") {
  GradCheckOptions opts;
  opts.analytic_hook = [](const std::string&, std::vector<double>& g) { g[0] *= 1.01; };
  bool any_failed = false;
  for (const auto& r : roie::testing::run_gradient_suite(5, opts)) any_failed |= !r.report.passed();
  CHECK(any_failed);
  CHECK(gradient_error(1.0, 1.0 + 1e-9, 1e-7) == 0.0);
  CHECK(gradient_error(1.0, 2.0, 1e-7) == doctest::Approx(0.5));
}

TEST_CASE("kernel tables agree across ISAs") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  const auto& s = kernels::table<double>(kernels::Isa::scalar);
  const auto& v = kernels::table<double>(kernels::Isa::avx2);
  const auto& sf = kernels::table<float>(kernels::Isa::scalar);
  const auto& vf = kernels::table<float>(kernels::Isa::avx2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-1, 1);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 33u, 100u, 1023u}) {
    CAPTURE(n);
    std::vector<double> a(n), b(n), y1(n), y2(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = d(rng), b[i] = d(rng), y1[i] = y2[i] = d(rng);
    std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end());

    CHECK(v.dot(n, a.data(), b.data()) == doctest::Approx(s.dot(n, a.data(), b.data())).epsilon(1e-12));
    CHECK(v.sum(n, a.data()) == doctest::Approx(s.sum(n, a.data())).epsilon(1e-12));
    CHECK(vf.dot(n, af.data(), bf.data()) ==
          doctest::Approx(sf.dot(n, af.data(), bf.data())).epsilon(1e-4));

    s.axpy(n, 0.3, a.data(), y1.data());
    v.axpy(n, 0.3, a.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));
    s.mul_acc(n, a.data(), b.data(), y1.data());
    v.mul_acc(n, a.data(), b.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

    std::vector<double> o1(n), o2(n);
    s.mul(n, a.data(), b.data(), o1.data());
    v.mul(n, a.data(), b.data(), o2.data());
    CHECK(o1 == o2);
    s.add(n, a.data(), b.data(), o1.data());
    v.add(n, a.data(), b.data(), o2.data());
    CHECK(o1 == o2);
    s.scale(n, -1.7, a.data(), o1.data());
    v.scale(n, -1.7, a.data(), o2.data());
    CHECK(o1 == o2);
  }
}

TEST_CASE("operations agree between scalar and vector kernels") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  IsaGuard guard;
  std::mt19937_64 rng(12);
  auto x = random_tensor<float>({2, 8, 16, 16}, rng);
  auto dw = random_tensor<float>({8, 1, 3, 3}, rng);
  auto pw = random_tensor<float>({12, 8, 1, 1}, rng);
  auto run = [&] {
    Tensor<float> g({1, 12, 1, 1}, 1.0f), b({1, 12, 1, 1}, 0.0f);
    Tensor<float> rm({1, 12, 1, 1}, 0.0f), rv({1, 12, 1, 1}, 1.0f);
    auto y = conv2d_pointwise(conv2d_depthwise(x, dw), pw);
    y = batch_norm(y, g, b, rm, rv, Mode::train);
    return upsample_bilinear2(max_pool2(relu(y)));
  };
  kernels::set_active_isa(kernels::Isa::scalar);
  const auto ref = run();
  kernels::set_active_isa(kernels::Isa::avx2);
  const auto vec = run();
  for (int64_t i = 0; i < ref.numel(); ++i) {
    CHECK(vec.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("parallel_for covers every index once for any thread count") {
  const int saved = thread_count();
  for (int t : {1, 2, 3, 8}) {
    set_thread_count(t);
    std::vector<int> hits(101, 0);
    parallel_for(0, 101, [&](int64_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
  set_thread_count(saved);
  CHECK_THROWS_AS(set_thread_count(0), ConfigError);
}
