#include "roie/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "roie/complexity.hpp"
#include "roie/error.hpp"
#include "roie/parallel.hpp"
#include "roie/train.hpp"

namespace roie {
namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : sep) + i;
  return s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string gflops(int64_t flops) { return fixed(static_cast<double>(flops) / 1e9, 3) + "G"; }
std::string mparams(int64_t params) { return fixed(static_cast<double>(params) / 1e6, 3) + "M"; }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  f.close();
  if (!f) throw IoError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Flags shared by every subcommand. Optional values stay unset unless given
// so that they only override the config file when present.
struct Common {
  std::string config;
  std::string preset;
  std::optional<uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::optional<double> threshold;
  std::vector<int64_t> widths;
  std::optional<int> input_size;
};

void add_common(CLI::App& app, Common& c) {
  app.add_option("--config", c.config, "Run config JSON");
  app.add_option("--preset", c.preset, "Model preset (" + join(preset_names(), ", ") + ")");
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--out", c.out, "Output directory");
  app.add_option("--threads", c.threads, "Worker threads (1 = deterministic); falls back to ROIE_NET_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_option("--threshold", c.threshold, "Binarization threshold (default 0.5)")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--widths", c.widths, "Filter widths, comma separated")->delimiter(',');
  app.add_option("--input-size", c.input_size, "Square input size");
}

ModelConfig checked_preset(const std::string& name) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw UsageError("unknown preset '" + name + "'; valid presets: " + join(names, ", "));
  }
  return preset_config(name);
}

// defaults <- --config file <- --preset <- individual flags.
RunConfig merged_config(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) rc = read_run_config(c.config);
  if (!c.preset.empty()) rc.model = checked_preset(c.preset);
  if (!c.widths.empty()) rc.model.filter_widths = c.widths;
  if (c.seed) rc.seed = *c.seed;
  if (!c.out.empty()) rc.out_dir = c.out;
  if (c.threads) {
    rc.threads = *c.threads;
  } else if (c.config.empty()) {
    rc.threads = thread_count();
  }
  if (c.threshold) rc.threshold = *c.threshold;
  if (c.input_size) rc.data.input_size = *c.input_size;
  rc.model.binarize_threshold = rc.threshold;
  return rc;
}

void apply_threads(const RunConfig& rc) { set_thread_count(rc.threads); }

// ---- inspect ---------------------------------------------------------------

int cmd_inspect(const Common& c, bool bench, std::ostream& out) {
  RunConfig rc = merged_config(c);
  if (c.preset.empty() && c.config.empty()) rc.model = preset_config("triple");
  if (!c.input_size && c.config.empty()) rc.data.input_size = 256;
  rc.validate();
  apply_threads(rc);

  const int64_t s = rc.data.input_size;
  const ComplexityReport report =
      analyze_complexity(rc.model, Shape{1, rc.model.input_channels, s, s});
  const std::string label = rc.model.preset.empty() ? "custom" : method_label(rc.model.preset);

  std::optional<FpsResult> fps;
  if (bench) {
    auto model = build_model<float>(rc.model, rc.seed);
    fps = fps_benchmark(*model, Shape{1, rc.model.input_channels, s, s}, 2, 10);
  }

  out << "method,connection_structure,input,params,flops" << (fps ? ",fps" : "") << "\n";
  out << label << "," << connection_structure(rc.model.connections) << "," << s << "x" << s << ","
      << report.params() << "," << report.flops();
  if (fps) out << "," << fixed(fps->fps, 3);
  out << "\n";
  out << "# params " << mparams(report.params()) << ", FLOPs " << gflops(report.flops());
  if (fps) out << ", " << fixed(fps->fps, 2) << " FPS on " << fps->hardware;
  out << "\n\n" << report.breakdown_csv();

  if (!c.out.empty()) {
    make_dirs(c.out);
    write_file(fs::path(c.out) / "breakdown.csv", report.breakdown_csv());
    nlohmann::json j = {{"model", to_json(rc.model)},
                        {"input_size", s},
                        {"params", report.params()},
                        {"flops", report.flops()}};
    if (fps) {
      j["fps"] = fps->fps;
      j["hardware"] = fps->hardware;
    }
    write_file(fs::path(c.out) / "complexity.json", j.dump(2) + "\n");
  }
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string data;
  std::optional<int64_t> epochs;
  std::optional<double> lr;
  std::optional<int64_t> batch_size;
  std::string resume;
  std::vector<double> split;
  bool no_augment = false;
  bool augment_validation = false;
  bool decoupled = false;
};

int cmd_train(const Common& c, const TrainFlags& t, std::ostream& out) {
  RunConfig rc = merged_config(c);
  if (!t.data.empty()) rc.data.root = t.data;
  if (t.epochs) rc.optim.epochs = *t.epochs;
  if (t.lr) rc.optim.learning_rate = *t.lr;
  if (t.batch_size) rc.optim.batch_size = *t.batch_size;
  if (t.decoupled) rc.optim.decoupled_weight_decay = true;
  if (!t.split.empty()) {
    if (t.split.size() != 3) throw UsageError("--split takes three ratios: train,val,test");
    rc.data.split.train = t.split[0];
    rc.data.split.val = t.split[1];
    rc.data.split.test = t.split[2];
  }
  if (t.no_augment) rc.data.augment_training = false;
  if (t.augment_validation) rc.data.augment_validation = true;
  if (rc.data.root.empty()) throw UsageError("train needs --data DIR (or data.root in --config)");
  rc.validate();
  apply_threads(rc);

  TrainOptions opts;
  if (!t.resume.empty()) opts.resume = t.resume;
  opts.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " lr " << r.lr << " train_loss " << fixed(r.train_loss, 6);
    if (r.val_dice) out << " val_loss " << fixed(*r.val_loss, 6) << " val_dice " << fixed(*r.val_dice, 4);
    out << "\n";
  };
  const RunManifest m = train_run(rc, opts);
  out << "run directory: " << rc.out_dir.string() << "\n";
  out << "final checkpoint: " << m.final_checkpoint << "\n";
  if (!m.best_checkpoint.empty()) out << "best checkpoint: " << m.best_checkpoint << "\n";
  return 0;
}

// ---- eval / predict --------------------------------------------------------

struct LoadedModel {
  std::unique_ptr<MultiUNet<float>> model;
  RunConfig rc;
};

// The run config is taken from --config, else from the run directory that
// holds the checkpoint, else defaults. An explicit --config or --preset is
// checked against the checkpoint's model config.
LoadedModel load_for_inference(const Common& c, const std::string& checkpoint) {
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  const Checkpoint ck = read_checkpoint(checkpoint);
  std::optional<ModelConfig> expected;
  Common merged = c;
  if (merged.config.empty()) {
    const fs::path candidate = fs::path(checkpoint).parent_path().parent_path() / "run_config.json";
    if (fs::exists(candidate)) merged.config = candidate.string();
  }
  RunConfig rc = merged_config(merged);
  if (!c.config.empty() || !c.preset.empty() || !c.widths.empty()) expected = rc.model;
  else rc.model = ck.config;
  if (!c.threshold && c.config.empty() && merged.config.empty()) rc.threshold = 0.5;
  LoadedModel lm{load_model(ck, expected), rc};
  lm.rc.model = lm.model->config();
  apply_threads(lm.rc);
  return lm;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data,
             const std::string& subset, bool panels, std::ostream& out) {
  LoadedModel lm = load_for_inference(c, checkpoint);
  RunConfig& rc = lm.rc;
  if (!data.empty()) rc.data.root = data;
  if (rc.data.root.empty()) throw UsageError("eval needs --data DIR");
  rc.validate();

  DatasetSplit split = prepare_data(rc.data);
  std::vector<SamplePair> pairs;
  if (subset == "train") pairs = std::move(split.train);
  else if (subset == "val") pairs = std::move(split.val);
  else if (subset == "test") pairs = std::move(split.test);
  else {
    pairs = std::move(split.train);
    for (auto* part : {&split.val, &split.test}) {
      std::move(part->begin(), part->end(), std::back_inserter(pairs));
    }
  }
  if (pairs.empty()) throw IngestionError("the " + subset + " subset is empty");

  std::vector<std::vector<uint8_t>> preds;
  MetricsReport report = evaluate(*lm.model, pairs, rc.threshold, panels ? &preds : nullptr);
  const int64_t s = rc.data.input_size;
  const ComplexityReport cx = analyze_complexity(rc.model, Shape{1, rc.model.input_channels, s, s});
  report.complexity = ComplexitySummary{cx.params(), cx.flops(), std::nullopt, hardware_description()};
  report.config = to_json(rc);
  report.config["checkpoint"] = checkpoint;
  report.config["subset"] = subset;

  std::vector<PanelInput> panel_inputs;
  for (std::size_t i = 0; i < preds.size(); ++i) panel_inputs.push_back({&pairs[i], preds[i]});
  const fs::path dir = c.out.empty() ? fs::path("eval") : fs::path(c.out);
  emit_report(report, dir, panel_inputs);

  const auto mean = report.mean();
  out << "images " << report.images.size() << " dice " << fixed(mean->dice, 4) << " miou "
      << fixed(mean->miou, 4) << " accuracy " << fixed(mean->accuracy, 4) << "\n";
  out << "report: " << (dir / "metrics.csv").string() << "\n";
  return 0;
}

// Nearest-neighbour resize of a {0,1} mask to 0/255 at (w, h).
Image8 mask_to_png(const std::vector<uint8_t>& mask, int side, int w, int h) {
  Image8 img{w, h, 1, std::vector<uint8_t>(static_cast<std::size_t>(w) * h)};
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(side - 1, static_cast<int>((y + 0.5) * side / h));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(side - 1, static_cast<int>((x + 0.5) * side / w));
      img.pixels[static_cast<std::size_t>(y) * w + x] = mask[sy * side + sx] ? 255 : 0;
    }
  }
  return img;
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& images,
                bool panels, std::ostream& out, std::ostream& err) {
  if (images.empty()) throw UsageError("predict needs --images DIR");
  LoadedModel lm = load_for_inference(c, checkpoint);
  RunConfig& rc = lm.rc;
  rc.validate();
  const int side = rc.data.input_size;
  const fs::path dir = c.out.empty() ? fs::path("predictions") : fs::path(c.out);
  make_dirs(dir);
  if (panels) make_dirs(dir / "panels");

  std::string log;
  int written = 0, skipped = 0;
  for (const auto& path : list_images(images)) {
    Image8 img;
    try {
      img = read_image(path, 3);
    } catch (const IngestionError& e) {
      err << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      log += "skipped " + path.string() + ": " + e.what() + "\n";
      ++skipped;
      continue;
    }
    Image8 blank{img.width, img.height, 1, std::vector<uint8_t>(img.pixels.size() / 3, 0)};
    const SamplePair sample = resize(make_sample(path.stem().string(), img, blank), side);
    Tensor<float> u(Shape{1, 3, side, side}, sample.image);
    const Tensor<float> mask = predict_mask(*lm.model, u, rc.threshold);
    std::vector<uint8_t> m(mask.values().size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.values()[i] >= 0.5f ? 1 : 0;

    write_png(dir / (sample.id + ".png"), mask_to_png(m, side, img.width, img.height));
    if (panels) {
      // No ground truth here: the middle tile repeats the prediction.
      SamplePair shown = sample;
      for (std::size_t i = 0; i < m.size(); ++i) shown.mask[i] = m[i];
      MetricsReport none;
      emit_report(none, dir / "panels" / sample.id, {{&shown, m}});
    }
    log += "wrote " + (dir / (sample.id + ".png")).string() + "\n";
    ++written;
  }
  write_file(dir / "predict.log", log);
  out << "wrote " << written << " mask(s) to " << dir.string();
  if (skipped) out << ", skipped " << skipped << " (see predict.log)";
  out << "\n";
  return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblationRow {
  std::string preset;
  std::string method;
  std::string structure;
  std::optional<AggregateMetrics> metrics;
  int64_t params = 0;
  int64_t flops = 0;
  std::optional<double> fps;
  std::string status = "ok";
};

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

AblationRow run_preset(const std::string& preset, const RunConfig& base, const AblationProfile& p,
                       const DatasetSplit& data, const fs::path& out_dir) {
  AblationRow row;
  row.preset = preset;
  row.method = method_label(preset);
  RunConfig rc = base;
  rc.model = preset_config(preset);
  rc.model.binarize_threshold = base.threshold;
  rc.model.filter_widths = p.filter_widths;
  row.structure = connection_structure(rc.model.connections);
  const int64_t s = p.input_size;
  const ComplexityReport cx = analyze_complexity(rc.model, Shape{1, rc.model.input_channels, s, s});
  row.params = cx.params();
  row.flops = cx.flops();
  try {
    rc.out_dir = out_dir / preset;
    const RunManifest m = train_run(rc, data);
    auto model = load_model(read_checkpoint(m.best_checkpoint.empty() ? m.final_checkpoint
                                                                      : m.best_checkpoint));
    const auto& eval_set = !data.test.empty() ? data.test : (!data.val.empty() ? data.val : data.train);
    row.metrics = evaluate(*model, eval_set, rc.threshold).mean();
    row.fps = fps_benchmark(*model, Shape{1, rc.model.input_channels, s, s}, p.fps_warmup, p.fps_iters).fps;
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
  }
  return row;
}

struct AblateFlags {
  std::string data;
  std::string scale = "desk";
  std::optional<int64_t> epochs;
  bool parallel = false;
};

int cmd_ablate(const Common& c, const AblateFlags& a, std::ostream& out, std::ostream& err) {
  const AblationProfile profile = ablation_profile(a.scale);
  RunConfig base = merged_config(c);
  if (!a.data.empty()) base.data.root = a.data;
  if (base.data.root.empty()) throw UsageError("ablate needs --data DIR");
  base.data.input_size = profile.input_size;
  base.optim.epochs = a.epochs.value_or(profile.epochs);
  base.optim.learning_rate = profile.learning_rate;
  base.optim.batch_size = profile.batch_size;
  base.model.filter_widths = profile.filter_widths;
  if (c.out.empty()) base.out_dir = "ablation";
  base.validate();
  apply_threads(base);

  const fs::path dir = base.out_dir;
  make_dirs(dir);
  const DatasetSplit data = prepare_data(base.data);
  const auto& presets = preset_names();
  std::vector<AblationRow> rows(presets.size());

  if (a.parallel) {
    // One worker per preset; kernels run single-threaded inside each.
    set_thread_count(1);
    std::vector<std::jthread> workers;
    for (std::size_t i = 0; i < presets.size(); ++i) {
      workers.emplace_back([&, i] { rows[i] = run_preset(presets[i], base, profile, data, dir); });
    }
  } else {
    for (std::size_t i = 0; i < presets.size(); ++i) {
      out << "[" << (i + 1) << "/" << presets.size() << "] " << presets[i] << "\n" << std::flush;
      rows[i] = run_preset(presets[i], base, profile, data, dir);
    }
  }

  std::string csv = "method,connection_structure,dice,miou,accuracy,params,flops,fps,status\n";
  for (const auto& r : rows) {
    if (r.status != "ok") err << "warning: " << r.preset << " " << r.status << "\n";
    csv += csv_field(r.method) + "," + csv_field(r.structure) + ",";
    csv += r.metrics ? fixed(r.metrics->dice, 6) + "," + fixed(r.metrics->miou, 6) + "," +
                           fixed(r.metrics->accuracy, 6)
                     : std::string(",,");
    csv += "," + std::to_string(r.params) + "," + std::to_string(r.flops) + ",";
    csv += r.fps ? fixed(*r.fps, 3) : std::string();
    csv += "," + csv_field(r.status) + "\n";
  }
  write_file(dir / "ablation.csv", csv);
  nlohmann::json meta = {{"profile", profile.name},
                         {"filter_widths", profile.filter_widths},
                         {"input_size", profile.input_size},
                         {"epochs", base.optim.epochs},
                         {"learning_rate", profile.learning_rate},
                         {"seed", base.seed},
                         {"parallel", a.parallel},
                         {"hardware", hardware_description()}};
  write_file(dir / "ablation.json", meta.dump(2) + "\n");
  out << csv;
  return 0;
}

}  // namespace

AblationProfile ablation_profile(const std::string& scale) {
  if (scale == "desk") return {"desk", {8, 16, 32, 64}, 64, 10, 1e-3, 16, 2, 10};
  if (scale == "full") return {"full", {32, 64, 128, 256, 512}, 256, 100, 1e-5, 16, 5, 20};
  throw ConfigError("unknown ablation scale '" + scale + "' (expected desk or full)");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-subnet U-Net lesion segmentation", "roie_net"};
  app.require_subcommand(1);

  Common common;
  bool bench = false;
  TrainFlags tf;
  std::string checkpoint, data, subset = "test", images;
  bool panels = false;
  AblateFlags af;

  auto* inspect = app.add_subcommand("inspect", "Parameter count, FLOPs and per-layer breakdown");
  add_common(*inspect, common);
  inspect->add_flag("--bench", bench, "Also measure FPS");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(*train, common);
  train->add_option("--data", tf.data, "Dataset root holding images/ and masks/");
  train->add_option("--epochs", tf.epochs)->check(CLI::PositiveNumber);
  train->add_option("--lr", tf.lr);
  train->add_option("--batch-size", tf.batch_size)->check(CLI::PositiveNumber);
  train->add_option("--resume", tf.resume, "Checkpoint to resume from");
  train->add_option("--split", tf.split, "train,val,test ratios")->delimiter(',');
  train->add_flag("--no-augment", tf.no_augment, "Disable training augmentation");
  train->add_flag("--augment-validation", tf.augment_validation, "Augment the validation split too");
  train->add_flag("--decoupled-weight-decay", tf.decoupled);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(*eval, common);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data, "Dataset root holding images/ and masks/");
  eval->add_option("--subset", subset, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_flag("--panels", panels, "Write image | ground truth | prediction panels");

  auto* predict = app.add_subcommand("predict", "Write binary masks for a directory of images");
  add_common(*predict, common);
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--images", images)->required();
  predict->add_flag("--panels", panels);

  auto* ablate = app.add_subcommand("ablate", "Train and compare all presets");
  add_common(*ablate, common);
  ablate->add_option("--data", af.data, "Dataset root holding images/ and masks/");
  ablate->add_option("--scale", af.scale, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  ablate->add_option("--epochs", af.epochs)->check(CLI::PositiveNumber);
  ablate->add_flag("--parallel", af.parallel,
                   "Train presets concurrently (results are no longer bitwise reproducible)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << app.help();
    err << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (inspect->parsed()) return cmd_inspect(common, bench, out);
    if (train->parsed()) return cmd_train(common, tf, out);
    if (eval->parsed()) return cmd_eval(common, checkpoint, data, subset, panels, out);
    if (predict->parsed()) return cmd_predict(common, checkpoint, images, panels, out, err);
    if (ablate->parsed()) return cmd_ablate(common, af, out, err);
  } catch (const UsageError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << e.kind() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: internal: " << msg << "\n";
    return 1;
  }
  return 2;
}

}  // namespace roie
