#include "roie/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "roie/error.hpp"
#include "roie/kernels.hpp"
#include "roie/parallel.hpp"

namespace roie {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

namespace {

template <typename V>
ConfusionCounts tally(std::span<const V> pred, std::span<const V> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion: prediction has " + std::to_string(pred.size()) +
                     " pixels, ground truth " + std::to_string(gt.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const V p = pred[i], g = gt[i];
    if ((p != V(0) && p != V(1)) || (g != V(0) && g != V(1))) {
      throw ContractError("confusion: mask values must be 0 or 1 (pixel " + std::to_string(i) + ")");
    }
    if (p == V(1)) {
      g == V(1) ? ++c.tp : ++c.fp;
    } else {
      g == V(1) ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

double ratio_or_one(double num, double den) { return den == 0 ? 1.0 : num / den; }

}  // namespace

ConfusionCounts confusion(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  return tally(pred, gt);
}

ConfusionCounts confusion(std::span<const float> pred, std::span<const float> gt) {
  return tally(pred, gt);
}

double dice(const ConfusionCounts& c) {
  return ratio_or_one(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
}

double foreground_iou(const ConfusionCounts& c) {
  return ratio_or_one(c.tp, static_cast<double>(c.tp + c.fp + c.fn));
}

double miou(const ConfusionCounts& c) {
  const double bg = ratio_or_one(c.tn, static_cast<double>(c.tn + c.fn + c.fp));
  return 0.5 * (foreground_iou(c) + bg);
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("accuracy of an empty confusion table");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

ImageMetrics ImageMetrics::from_counts(std::string id, const ConfusionCounts& counts) {
  return {std::move(id), counts, roie::dice(counts), roie::miou(counts), roie::accuracy(counts),
          foreground_iou(counts)};
}

std::optional<AggregateMetrics> MetricsReport::mean() const {
  if (images.empty()) return std::nullopt;
  AggregateMetrics a;
  for (const auto& m : images) {
    a.dice += m.dice;
    a.miou += m.miou;
    a.accuracy += m.accuracy;
    a.fg_iou += m.fg_iou;
  }
  const double n = static_cast<double>(images.size());
  a.dice /= n;
  a.miou /= n;
  a.accuracy /= n;
  a.fg_iou /= n;
  return a;
}

ConfusionCounts MetricsReport::pooled_counts() const {
  ConfusionCounts c;
  for (const auto& m : images) c += m.counts;
  return c;
}

std::optional<AggregateMetrics> MetricsReport::pooled() const {
  if (images.empty()) return std::nullopt;
  const ConfusionCounts c = pooled_counts();
  return AggregateMetrics{dice(c), miou(c), accuracy(c), foreground_iou(c)};
}

nlohmann::json to_json(const AggregateMetrics& a) {
  return {{"dice", a.dice}, {"miou", a.miou}, {"accuracy", a.accuracy}, {"fg_iou", a.fg_iou}};
}

std::string hardware_description() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return cpu + "; kernels " + std::string(kernels::isa_name(kernels::active_isa())) +
         "; threads " + std::to_string(thread_count());
}

FpsResult fps_benchmark(MultiUNet<float>& model, Shape input, int warmup, int iters) {
  if (iters < 1) throw ContractError("fps_benchmark needs iters >= 1");
  input.n = 1;
  Tensor<float> u(input);
  auto d = u.data();
  uint32_t state = 0x12345u;
  for (float& v : d) {
    state = state * 1664525u + 1013904223u;
    v = static_cast<float>(state >> 8) / static_cast<float>(1u << 24);
  }

  NoGradGuard no_grad;
  for (int i = 0; i < warmup; ++i) model.forward(u, Mode::eval);
  std::vector<double> seconds;
  seconds.reserve(iters);
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(u, Mode::eval);
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(seconds.begin(), seconds.end());
  const std::size_t mid = seconds.size() / 2;
  const double median =
      seconds.size() % 2 ? seconds[mid] : 0.5 * (seconds[mid - 1] + seconds[mid]);
  FpsResult r;
  r.median_seconds = median;
  r.fps = median > 0 ? 1.0 / median : 0.0;
  r.iters = iters;
  r.hardware = hardware_description();
  return r;
}

}  // namespace roie
