#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "roie/error.hpp"
#include "roie/image_io.hpp"
#include "roie/metrics.hpp"

namespace roie {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

std::string counts_csv(const ConfusionCounts& c) {
  return std::to_string(c.tp) + "," + std::to_string(c.fp) + "," + std::to_string(c.tn) + "," +
         std::to_string(c.fn);
}

Image8 panel(const PanelInput& p) {
  const SamplePair& s = *p.sample;
  const int H = s.height, W = s.width;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  if (p.prediction.size() != hw) throw ShapeError("panel prediction size does not match " + s.id);
  Image8 img{3 * W, H, 3, std::vector<uint8_t>(static_cast<std::size_t>(3 * W) * H * 3)};
  auto to8 = [](float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255)); };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * 3 * W * 3;
      for (int c = 0; c < 3; ++c) {
        row[x * 3 + c] = to8(s.image[c * hw + i]);
        row[(W + x) * 3 + c] = s.mask[i] >= 0.5f ? 255 : 0;
        row[(2 * W + x) * 3 + c] = p.prediction[i] ? 255 : 0;
      }
    }
  }
  return img;
}

}  // namespace

void emit_report(const MetricsReport& report, const fs::path& out_dir,
                 const std::vector<PanelInput>& panels) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const fs::path csv_path = out_dir / "metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "id,dice,miou,accuracy,fg_iou,pooled_dice,pooled_miou,pooled_accuracy,tp,fp,tn,fn\n";
  for (const auto& m : report.images) {
    const std::string per = fmt(m.dice) + "," + fmt(m.miou) + "," + fmt(m.accuracy);
    csv << m.id << "," << per << "," << fmt(m.fg_iou) << "," << per << ","
        << counts_csv(m.counts) << "\n";
  }
  const auto mean = report.mean();
  const auto pooled = report.pooled();
  csv << "aggregate,";
  if (mean && pooled) {
    csv << fmt(mean->dice) << "," << fmt(mean->miou) << "," << fmt(mean->accuracy) << ","
        << fmt(mean->fg_iou) << "," << fmt(pooled->dice) << "," << fmt(pooled->miou) << ","
        << fmt(pooled->accuracy) << ",";
  } else {
    csv << ",,,,,,,";
  }
  csv << counts_csv(report.pooled_counts()) << "\n";
  csv.close();
  if (!csv) throw IoError("failed writing " + csv_path.string());

  nlohmann::json summary = {{"csv_schema", kMetricsCsvSchema},
                            {"images", report.images.size()},
                            {"aggregate", "mean of per-image values"},
                            {"config", report.config}};
  if (mean) summary["mean"] = to_json(*mean);
  if (pooled) summary["pooled"] = to_json(*pooled);
  const ConfusionCounts pc = report.pooled_counts();
  summary["pooled_counts"] = {{"tp", pc.tp}, {"fp", pc.fp}, {"tn", pc.tn}, {"fn", pc.fn}};
  if (report.loss) summary["loss"] = *report.loss;
  if (report.complexity) {
    summary["complexity"] = {{"params", report.complexity->params},
                             {"flops", report.complexity->flops},
                             {"hardware", report.complexity->hardware}};
    if (report.complexity->fps) summary["complexity"]["fps"] = *report.complexity->fps;
  }
  const fs::path summary_path = out_dir / "summary.json";
  std::ofstream js(summary_path);
  if (!js) throw IoError("cannot write " + summary_path.string());
  js << summary.dump(2) << "\n";
  js.close();
  if (!js) throw IoError("failed writing " + summary_path.string());

  if (!panels.empty()) {
    const fs::path dir = out_dir / "panels";
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& p : panels) write_png(dir / (p.sample->id + ".png"), panel(p));
  }
}

}  // namespace roie
