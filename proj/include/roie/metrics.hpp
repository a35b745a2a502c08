#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "roie/composer.hpp"
#include "roie/data.hpp"

namespace roie {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;

  int64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

// Per-pixel tally. Values must be exactly 0 or 1; ContractError otherwise,
// ShapeError on a length mismatch.
ConfusionCounts confusion(std::span<const uint8_t> pred, std::span<const uint8_t> gt);
ConfusionCounts confusion(std::span<const float> pred, std::span<const float> gt);

// Ratios whose numerator and denominator are both 0 (a class absent from
// prediction and ground truth alike) evaluate to 1.
double dice(const ConfusionCounts& c);
double miou(const ConfusionCounts& c);  // mean of foreground and background IoU
double accuracy(const ConfusionCounts& c);  // ContractError when total is 0
double foreground_iou(const ConfusionCounts& c);

struct ImageMetrics {
  std::string id;
  ConfusionCounts counts;
  double dice = 0;
  double miou = 0;
  double accuracy = 0;
  double fg_iou = 0;

  static ImageMetrics from_counts(std::string id, const ConfusionCounts& counts);
};

struct AggregateMetrics {
  double dice = 0;
  double miou = 0;
  double accuracy = 0;
  double fg_iou = 0;
};

struct ComplexitySummary {
  int64_t params = 0;
  int64_t flops = 0;
  std::optional<double> fps;
  std::string hardware;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  std::optional<double> loss;  // BCE of the final score map, when computed
  std::optional<ComplexitySummary> complexity;
  nlohmann::json config = nlohmann::json::object();

  // Mean of per-image values; nullopt with no images.
  std::optional<AggregateMetrics> mean() const;
  // Metrics of the summed confusion counts.
  std::optional<AggregateMetrics> pooled() const;
  ConfusionCounts pooled_counts() const;
};

struct FpsResult {
  double fps = 0;
  double median_seconds = 0;
  int iters = 0;
  std::string hardware;
};

// Median single-image (batch 1) forward latency in eval mode, excluding data
// preparation. Input values are a fixed pseudo-random pattern.
FpsResult fps_benchmark(MultiUNet<float>& model, Shape input, int warmup, int iters);

// CPU model, kernel ISA and thread count.
std::string hardware_description();

// Image | ground truth | prediction, side by side.
struct PanelInput {
  const SamplePair* sample = nullptr;
  std::vector<uint8_t> prediction;  // H×W, {0,1}
};

// metrics.csv (schema below), summary.json, and panels/<id>.png when panels
// are given. Throws IoError.
//
// metrics.csv, schema 1:
//   id,dice,miou,accuracy,fg_iou,pooled_dice,pooled_miou,pooled_accuracy,tp,fp,tn,fn
// One row per image (pooled columns equal the per-image ones), then an
// "aggregate" row: per-image means, metrics of the summed counts, and the
// summed counts. With no images the aggregate metric fields are empty.
void emit_report(const MetricsReport& report, const std::filesystem::path& out_dir,
                 const std::vector<PanelInput>& panels = {});

inline constexpr int kMetricsCsvSchema = 1;

nlohmann::json to_json(const AggregateMetrics& a);

}  // namespace roie
