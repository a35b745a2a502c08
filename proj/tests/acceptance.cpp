// Acceptance gate: one PASS/FAIL line per criterion.
//   roie_acceptance [c1..c9 ...] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "gradient_suite.hpp"
#include "metric_oracle.hpp"
#include "roie/cli.hpp"
#include "roie/complexity.hpp"
#include "roie/image_io.hpp"
#include "roie/metrics.hpp"
#include "roie/train.hpp"
#include "synthetic.hpp"

using namespace roie;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kRatioTol = 1e-12;
constexpr double kReferenceParams = 87e6;
constexpr double kReferenceFlops = 40.22e9;
constexpr double kComplexityTol = 0.30;
constexpr double kIncrementLo = 25e6;
constexpr double kIncrementHi = 37e6;
constexpr double kReferenceFlopsRatio = 54.45 / 40.22;
constexpr double kFlopsRatioTol = 0.10;
constexpr double kOverfitDice = 0.95;
constexpr int kOverfitEpochs = 300;
constexpr int kLossWindow = 20;
constexpr int kLossWindowFrom = 50;
constexpr double kOverfitSeconds = 30 * 60.0;
constexpr double kLrRelTol = 1e-12;

struct Result {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
      if (ch == '"') {
        quoted = !quoted;
      } else if (ch == ',' && !quoted) {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += ch;
      }
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << err.str();
  return code;
}

Result c1_gradients(const fs::path&) {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opts;
  opts.step = 1e-5;
  opts.tolerance = kGradRelTol;
  const auto results = roie::testing::run_gradient_suite(2024, opts);
  const double elapsed = seconds_since(t0);
  double worst = 0, worst_abs = 0;
  std::string worst_op;
  for (const auto& op : results) {
    r.require(op.report.passed(), op.op + " " + op.report.summary());
    for (const auto& e : op.report.entries) worst_abs = std::max(worst_abs, e.max_abs_error);
    if (op.report.max_rel_error() >= worst) {
      worst = op.report.max_rel_error();
      worst_op = op.op;
    }
  }
  r.require(worst <= kGradRelTol, "max rel error " + fmt("%.3g", worst));
  r.require(elapsed < kGradSuiteSeconds, "runtime " + fmt("%.1f s", elapsed));
  r.note(std::to_string(results.size()) + " ops, max rel error " + fmt("%.3g", worst) + " (" +
         worst_op + "), max abs error " + fmt("%.3g", worst_abs) + ", " +
         fmt("%.1f s", elapsed));
  return r;
}

template <typename T>
int algebra_trials(std::mt19937_64& rng, int trials) {
  int bad = 0;
  for (int t = 0; t < trials; ++t) {
    const int64_t n = 1 + rng() % 2, c = 1 + rng() % 4, h = 1 + rng() % 8, w = 1 + rng() % 8;
    const auto u = roie::testing::random_tensor<T>({n, c, h, w}, rng, -2.0, 2.0);
    const auto x = roie::testing::random_tensor<T>({n, 1, h, w}, rng, 0.0, 1.0);
    const Tensor<T> zeros({n, 1, h, w}, T(0));
    const Tensor<T> ones({n, 1, h, w}, T(1));
    std::vector<T> twice = u.values();
    for (auto& v : twice) v = v + v;
    bad += roie::roie(u, x, 1.0, 0.0).values() != multiply_connect(u, x).values();
    bad += roie::roie(u, zeros, 1.0, 1.0).values() != u.values();
    bad += roie::roie(u, ones, 1.0, 1.0).values() != twice;
    bad += multiply_connect(u, ones).values() != u.values();
  }
  return bad;
}

Result c2_algebra(const fs::path&) {
  Result r;
  std::mt19937_64 rng(77);
  const int bad = algebra_trials<double>(rng, 100) + algebra_trials<float>(rng, 100);
  r.require(bad == 0, std::to_string(bad) + " identity mismatches");
  r.note("100 random tensors each in double and float, 4 identities, exact equality");
  return r;
}

Result c3_metrics(const fs::path&) {
  Result r;
  std::mt19937_64 rng(31);
  std::vector<std::pair<std::vector<uint8_t>, std::vector<uint8_t>>> cases;
  for (int t = 0; t < 1000; ++t) {
    const double pp = (rng() % 11) / 10.0, pg = (rng() % 11) / 10.0;
    std::bernoulli_distribution dp(pp), dg(pg);
    std::vector<uint8_t> pred(64), gt(64);
    for (int i = 0; i < 64; ++i) {
      pred[i] = dp(rng);
      gt[i] = dg(rng);
    }
    cases.emplace_back(pred, gt);
  }
  const std::vector<uint8_t> zero(64, 0), one(64, 1);
  cases.emplace_back(zero, zero);
  cases.emplace_back(one, one);
  cases.emplace_back(zero, one);
  cases.emplace_back(one, zero);

  int count_bad = 0, ratio_bad = 0;
  double worst = 0;
  const auto close = [&](double a, double b) {
    const double e = std::abs(a - b) / std::max(1.0, std::abs(b));
    worst = std::max(worst, e);
    return e <= kRatioTol;
  };
  for (const auto& [pred, gt] : cases) {
    const auto o = roie::testing::oracle_counts(pred, gt);
    const ConfusionCounts c = confusion(pred, gt);
    count_bad += !(c == ConfusionCounts{o.tp, o.fp, o.tn, o.fn});
    const ImageMetrics m = ImageMetrics::from_counts("x", c);
    ratio_bad += !close(m.dice, roie::testing::oracle_dice(o));
    ratio_bad += !close(m.miou, roie::testing::oracle_miou(o));
    ratio_bad += !close(m.accuracy, roie::testing::oracle_accuracy(o));
  }
  const ImageMetrics both_empty = ImageMetrics::from_counts("e", confusion(zero, zero));
  r.require(both_empty.dice == 1.0 && both_empty.miou == 1.0, "empty/empty convention");
  const ImageMetrics missed = ImageMetrics::from_counts("m", confusion(zero, one));
  r.require(missed.dice == 0.0 && missed.miou == 0.0, "all-miss case");
  r.require(count_bad == 0, std::to_string(count_bad) + " count mismatches");
  r.require(ratio_bad == 0, std::to_string(ratio_bad) + " ratio mismatches");
  r.note(std::to_string(cases.size()) + " pairs, max ratio error " + fmt("%.3g", worst));
  return r;
}

Result c4_complexity(const fs::path& work) {
  Result r;
  const Shape input{1, 3, 256, 256};
  std::map<std::string, ComplexityReport> reports;
  for (const auto& p : preset_names()) reports[p] = analyze_complexity(preset_config(p), input);
  const auto params = [&](const char* p) { return static_cast<double>(reports.at(p).params()); };
  const auto flops = [&](const char* p) { return static_cast<double>(reports.at(p).flops()); };

  fs::create_directories(work);
  std::ofstream(work / "breakdown_triple.csv") << reports.at("triple").breakdown_csv();
  std::ofstream summary(work / "complexity_presets.csv");
  summary << "preset,params,flops\n";
  for (const auto& [name, rep] : reports) summary << name << "," << rep.params() << "," << rep.flops() << "\n";

  const double pt = params("triple"), ft = flops("triple");
  r.require(std::abs(pt / kReferenceParams - 1) <= kComplexityTol,
            "triple params " + fmt("%.3fM", pt / 1e6) + " vs 87M +-30%");
  r.require(std::abs(ft / kReferenceFlops - 1) <= kComplexityTol,
            "triple FLOPs " + fmt("%.2fG", ft / 1e9) + " vs 40.22G +-30%");
  r.require(pt < params("4unet") && params("4unet") < params("5unet"), "param ordering");
  const double inc1 = params("4unet") - pt, inc2 = params("5unet") - params("4unet");
  r.require(inc1 >= kIncrementLo && inc1 <= kIncrementHi,
            "4unet increment " + fmt("%.3fM", inc1 / 1e6) + " outside 25M-37M");
  r.require(inc2 >= kIncrementLo && inc2 <= kIncrementHi,
            "5unet increment " + fmt("%.3fM", inc2 / 1e6) + " outside 25M-37M");
  for (const char* p : {"triple-a", "triple-b", "triple-c"}) {
    r.require(params(p) == pt && flops(p) == ft, std::string(p) + " differs from triple");
  }
  const double ratio = flops("4unet") / ft;
  r.require(std::abs(ratio / kReferenceFlopsRatio - 1) <= kFlopsRatioTol,
            "FLOPs ratio 4unet/triple " + fmt("%.4f", ratio));
  r.note("triple " + fmt("%.3fM", pt / 1e6) + " params " + fmt("%.2fG", ft / 1e9) +
         " FLOPs; ratio 4unet/triple " + fmt("%.4f", ratio) + "; breakdown " +
         (work / "breakdown_triple.csv").string());
  return r;
}

Result c5_overfit(const fs::path&) {
  Result r;
  const auto data = roie::testing::circle_dataset(8, 64, 7);
  ModelConfig mc = preset_config("triple");
  mc.filter_widths = {8, 16, 32};
  auto model = build_model<float>(mc, 1);
  OptimConfig oc;
  oc.learning_rate = 1e-3;
  oc.lr_gamma = 1.0;
  oc.epochs = kOverfitEpochs;
  Trainer trainer(*model, oc, 1);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> losses;
  double best_dice = 0;
  int reached = 0;
  for (int e = 1; e <= kOverfitEpochs; ++e) {
    losses.push_back(trainer.run_epoch(data, {}, 0.5).train_loss);
    if (e % 10 == 0 || e == kOverfitEpochs) {
      const double d = evaluate(*model, data, 0.5).mean()->dice;
      best_dice = std::max(best_dice, d);
      if (!reached && d >= kOverfitDice) reached = e;
    }
  }
  const double elapsed = seconds_since(t0);

  int window_violations = 0;
  for (int e = kLossWindowFrom; e + kLossWindow <= kOverfitEpochs; ++e) {
    window_violations += losses[e + kLossWindow - 1] > losses[e - 1];
  }
  r.require(best_dice >= kOverfitDice, "train Dice " + fmt("%.4f", best_dice));
  r.require(window_violations == 0, std::to_string(window_violations) + " 20-epoch windows rose");
  r.require(elapsed < kOverfitSeconds, "runtime " + fmt("%.0f s", elapsed));
  r.note("train Dice " + fmt("%.4f", best_dice) + (reached ? " (>= 0.95 by epoch " +
         std::to_string(reached) + ")" : std::string()) + ", loss " + fmt("%.4f", losses.front()) +
         " -> " + fmt("%.4f", losses.back()) + ", " + fmt("%.0f s", elapsed));
  return r;
}

Result c6_ablation(const fs::path& work) {
  Result r;
  const fs::path data = work / "data";
  fs::remove_all(work);
  roie::testing::write_dataset(data, roie::testing::circle_dataset(20, 64, 13));
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli({"ablate", "--data", data.string(), "--scale", "desk", "--seed", "0",
                        "--out", (work / "ablation").string()});
  r.require(code == 0, "ablate exit code " + std::to_string(code));
  if (code != 0) return r;

  const std::map<std::string, std::string> table = {
      {"DoubleUNet", "Multiply"},
      {"DoubleUNet*", "ROIE"},
      {"Triple-UNet-a", "Multiply + Multiply"},
      {"Triple-UNet-b", "ROIE + ROIE"},
      {"Triple-UNet-c", "Multiply + ROIE"},
      {"4-UNet", "2*Multiply + ROIE"},
      {"5-UNet", "3*Multiply + ROIE"},
      {"Triple-UNet", "ROIE + Multiply"}};
  const auto rows = read_csv(work / "ablation" / "ablation.csv");
  r.require(rows.size() == 9, std::to_string(rows.size()) + " csv lines");
  std::map<std::string, std::vector<std::string>> by_method;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    r.require(rows[i].size() == 9, "row width");
    if (rows[i].size() != 9) return r;
    by_method[rows[i][0]] = rows[i];
    r.require(rows[i][8] == "ok", rows[i][0] + " " + rows[i][8]);
  }
  for (const auto& [method, structure] : table) {
    const auto it = by_method.find(method);
    r.require(it != by_method.end(), "missing " + method);
    if (it != by_method.end()) r.require(it->second[1] == structure, method + " structure " + it->second[1]);
  }
  if (r.pass) {
    const auto& ref = by_method.at("Triple-UNet");
    for (const char* m : {"Triple-UNet-a", "Triple-UNet-b", "Triple-UNet-c"}) {
      r.require(by_method.at(m)[5] == ref[5] && by_method.at(m)[6] == ref[6],
                std::string(m) + " params/FLOPs differ");
    }
    std::string dice;
    for (const auto& [method, row] : by_method) dice += " " + method + "=" + row[2];
    r.note("8 presets in " + fmt("%.0f s", seconds_since(t0)) + "; Dice (not gated):" + dice);
  }
  return r;
}

Result c7_determinism(const fs::path& work) {
  Result r;
  const fs::path data = work / "data";
  fs::remove_all(work);
  roie::testing::write_dataset(data, roie::testing::circle_dataset(24, 32, 17));
  const auto run = [&](const std::string& name) {
    return cli({"train", "--data", data.string(), "--out", (work / name).string(), "--preset",
                "triple", "--widths", "8,16,32", "--input-size", "32", "--epochs", "1", "--lr",
                "1e-3", "--batch-size", "2", "--seed", "42", "--threads", "1"});
  };
  r.require(run("a") == 0 && run("b") == 0, "train failed");
  if (!r.pass) return r;

  const auto a = read_csv(work / "a" / "steps.csv"), b = read_csv(work / "b" / "steps.csv");
  r.require(a.size() >= 11, "fewer than 10 steps recorded");
  for (std::size_t i = 1; i < std::min<std::size_t>(11, a.size()); ++i) {
    r.require(i < b.size() && a[i] == b[i], "step " + std::to_string(i) + " loss differs");
  }
  const fs::path ck = fs::path("checkpoints") / "epoch_0001.bin";
  const std::string bin_a = slurp(work / "a" / ck);
  r.require(!bin_a.empty() && bin_a == slurp(work / "b" / ck), "epoch-1 checkpoints differ");
  r.note("10 step losses bitwise equal, epoch-1 checkpoint " + std::to_string(bin_a.size()) +
         " bytes identical");
  return r;
}

Result c8_pipeline(const fs::path& work) {
  Result r;
  const auto sizes = split_sizes(2694, SplitSpec{});
  r.require(sizes == std::array<std::size_t, 3>{2155, 269, 270},
            "split " + std::to_string(sizes[0]) + "/" + std::to_string(sizes[1]) + "/" +
                std::to_string(sizes[2]));

  int flip_bad = 0, binary_bad = 0;
  AugmentConfig all;
  all.hflip_p = all.vflip_p = all.noise_p = all.blur_p = all.brightness_contrast_p = 1.0;
  std::mt19937_64 rng(8);
  const auto binary = [](const SamplePair& s) {
    for (float v : s.mask) {
      if (v != 0.0f && v != 1.0f) return false;
    }
    return true;
  };
  for (int i = 0; i < 50; ++i) {
    const SamplePair s = roie::testing::circle_sample(17 + i, 3, i);
    SamplePair h = s, v = s;
    hflip(h);
    hflip(h);
    vflip(v);
    vflip(v);
    flip_bad += h.image != s.image || h.mask != s.mask || v.image != s.image || v.mask != s.mask;
    const SamplePair resized = resize(s, 8 + i % 40);
    binary_bad += !binary(resized);
    binary_bad += !binary(augment(resized, all, rng));
    binary_bad += !binary(augment(s, AugmentConfig{}, rng));
  }
  r.require(flip_bad == 0, std::to_string(flip_bad) + " flip involution failures");
  r.require(binary_bad == 0, std::to_string(binary_bad) + " non-binary masks");

  const fs::path data = work / "data";
  fs::remove_all(work);
  roie::testing::write_dataset(data, roie::testing::circle_dataset(6, 16, 19));
  const fs::path images = work / "odd";
  fs::create_directories(images);
  for (int i = 0; i < 3; ++i) {
    const int w = 13 + 7 * i, h = 29 - 5 * i;
    Image8 img{w, h, 3, std::vector<uint8_t>(static_cast<std::size_t>(w * h * 3))};
    for (std::size_t k = 0; k < img.pixels.size(); ++k) img.pixels[k] = rng() & 0xFF;
    write_png(images / ("img" + std::to_string(i) + ".png"), img);
  }
  const bool trained = cli({"train", "--data", data.string(), "--out", (work / "run").string(),
                            "--widths", "4,8", "--input-size", "16", "--epochs", "1"}) == 0;
  r.require(trained, "train failed");
  if (trained) {
    const int code = cli({"predict", "--checkpoint",
                          (work / "run" / "checkpoints" / "epoch_0001").string(), "--images",
                          images.string(), "--out", (work / "pred").string(), "--threshold", "0.5"});
    r.require(code == 0, "predict failed");
    int pngs = 0, non_binary = 0;
    for (const auto& p : list_images(work / "pred")) {
      ++pngs;
      for (uint8_t v : read_image(p, 1).pixels) non_binary += v != 0 && v != 255;
    }
    r.require(pngs == 3, std::to_string(pngs) + " predicted masks");
    r.require(non_binary == 0, std::to_string(non_binary) + " predicted pixels outside {0,255}");
  }
  r.note("split 2155/269/270, 50 flip/resize/augment samples, predict masks in {0,255}");
  return r;
}

Result c9_schedule(const fs::path&) {
  Result r;
  OptimConfig o;
  const auto check = [&](int epoch, double expected) {
    const double got = lr_at(o, epoch);
    r.require(std::abs(got - expected) <= kLrRelTol * expected,
              "lr_at(" + std::to_string(epoch) + ") = " + fmt("%.17g", got));
  };
  check(0, 1e-5);
  check(1, 9.8e-6);
  check(100, 1e-5 * std::pow(0.98, 100));
  r.note("lr_at(100) = " + fmt("%.12g", lr_at(o, 100)));
  return r;
}

struct Criterion {
  const char* id;
  const char* title;
  std::function<Result(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"c1", "gradient suite", c1_gradients},
      {"c2", "ROIE/Multiply algebra", c2_algebra},
      {"c3", "metric oracle equivalence", c3_metrics},
      {"c4", "complexity regression", c4_complexity},
      {"c5", "overfit sanity", c5_overfit},
      {"c6", "desk ablation sweep", c6_ablation},
      {"c7", "determinism", c7_determinism},
      {"c8", "pipeline invariants", c8_pipeline},
      {"c9", "learning-rate schedule", c9_schedule},
  };
  fs::path work = fs::temp_directory_path() / "roie_acceptance";
  std::vector<std::string> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      wanted.push_back(a);
    }
  }
  for (const auto& w : wanted) {
    bool known = false;
    for (const auto& c : criteria) known |= w == c.id;
    if (!known) {
      std::cerr << "unknown criterion " << w << " (expected c1..c9)\n";
      return 2;
    }
  }

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Result r;
    try {
      r = c.run(work / c.id);
    } catch (const std::exception& e) {
      r.require(false, std::string("exception: ") + e.what());
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << c.id << " " << c.title << ": " << r.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
