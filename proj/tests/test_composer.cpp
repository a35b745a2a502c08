#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "roie/checkpoint.hpp"
#include "roie/complexity.hpp"
#include "roie/composer.hpp"
#include "roie/error.hpp"
#include "synthetic.hpp"

using namespace roie;
using roie::testing::random_tensor;

namespace {

ModelConfig tiny(const std::string& preset, std::vector<int64_t> widths = {4, 8}) {
  ModelConfig c = preset_config(preset);
  c.filter_widths = std::move(widths);
  return c;
}

}  // namespace

TEST_CASE("roie and multiply examples") {
  Tensor<double> u({1, 3, 1, 1}, 0.5);
  Tensor<double> x({1, 1, 1, 1}, 0.8);
  const auto enhanced = roie::roie(u, x);
  for (double v : enhanced.values()) CHECK(v == doctest::Approx(0.9));
  Tensor<double> zero({1, 1, 1, 1}, 0.0), one({1, 1, 1, 1}, 1.0);
  CHECK(roie::roie(u, zero).values() == u.values());
  const auto doubled = roie::roie(u, one);
  for (double v : doubled.values()) CHECK(v == 1.0);
  CHECK(multiply_connect(u, one).values() == u.values());
  const auto erased = multiply_connect(u, zero);
  for (double v : erased.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(roie::roie(u, x, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(roie::roie(u, x, 1.0, -1.0), ConfigError);
  CHECK_THROWS_AS(roie::roie(u, Tensor<double>({1, 2, 1, 1}), 1.0, 1.0), ShapeError);
  CHECK_THROWS_AS(multiply_connect(u, Tensor<double>({1, 1, 2, 1})), ShapeError);
}

TEST_CASE("connection bounds and formula consistency") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto u = random_tensor<double>({2, 3, 4, 4}, rng, 0.0, 1.0);
    auto x = random_tensor<double>({2, 1, 4, 4}, rng, 1e-3, 1.0 - 1e-3);
    auto r = roie::roie(u, x);
    auto m = multiply_connect(u, x);
    for (int64_t i = 0; i < u.numel(); ++i) {
      CHECK(r.values()[i] >= u.values()[i]);
      CHECK(r.values()[i] <= 2 * u.values()[i]);
      CHECK(m.values()[i] <= u.values()[i]);
    }
    CHECK(roie::roie(u, x, 1.0, 0.0).values() == m.values());
  }
}

TEST_CASE("roie is differentiable through both operands") {
  std::mt19937_64 rng(2);
  auto u = random_tensor<double>({1, 3, 4, 4}, rng).set_requires_grad(true);
  auto x = random_tensor<double>({1, 1, 4, 4}, rng, 0.1, 0.9).set_requires_grad(true);
  auto w = random_tensor<double>({1, 3, 4, 4}, rng);
  auto report = grad_check<double>([&] { return sum_all(ew_mul(roie::roie(u, x, 0.7, 1.3), w)); },
                                   {{"u", u}, {"x", x}});
  INFO(report.summary());
  CHECK(report.passed());
}

TEST_CASE("presets match the ablation table") {
  using K = Connection::Kind;
  struct Row {
    const char* name;
    const char* label;
    const char* structure;
    std::vector<K> kinds;
  };
  const std::vector<Row> rows = {
      {"double", "DoubleUNet", "Multiply", {K::multiply}},
      {"double-star", "DoubleUNet*", "ROIE", {K::roie}},
      {"triple-a", "Triple-UNet-a", "Multiply + Multiply", {K::multiply, K::multiply}},
      {"triple-b", "Triple-UNet-b", "ROIE + ROIE", {K::roie, K::roie}},
      {"triple-c", "Triple-UNet-c", "Multiply + ROIE", {K::multiply, K::roie}},
      {"4unet", "4-UNet", "2*Multiply + ROIE", {K::multiply, K::multiply, K::roie}},
      {"5unet", "5-UNet", "3*Multiply + ROIE", {K::multiply, K::multiply, K::multiply, K::roie}},
      {"triple", "Triple-UNet", "ROIE + Multiply", {K::roie, K::multiply}},
  };
  REQUIRE(preset_names().size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CAPTURE(rows[i].name);
    CHECK(preset_names()[i] == rows[i].name);
    const ModelConfig c = preset_config(rows[i].name);
    CHECK(c.subnet_count == static_cast<int64_t>(rows[i].kinds.size()) + 1);
    REQUIRE(c.connections.size() == rows[i].kinds.size());
    for (std::size_t k = 0; k < rows[i].kinds.size(); ++k) {
      CHECK(c.connections[k].kind == rows[i].kinds[k]);
      CHECK(c.connections[k].alpha == 1.0);
      CHECK(c.connections[k].beta == 1.0);
    }
    CHECK(method_label(rows[i].name) == rows[i].label);
    CHECK(connection_structure(c.connections) == rows[i].structure);
    CHECK(c.filter_widths == std::vector<int64_t>{32, 64, 128, 256, 512});
  }
  CHECK_THROWS_AS(preset_config("unet"), ConfigError);
}

TEST_CASE("config validation") {
  ModelConfig c = preset_config("triple");
  c.connections.pop_back();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("triple");
  c.connections[0].beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("triple");
  c.filter_widths = {};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("triple");
  c.binarize_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ModelConfig a = preset_config("triple");
  ModelConfig b = model_config_from_json(to_json(a));
  CHECK(a == b);
  b.filter_widths = {8, 16};
  CHECK(config_differences(a, b).size() == 1);
}

TEST_CASE("model forward emits one score map per sub-network") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    auto model = build_model<double>(tiny(name), 3);
    std::mt19937_64 rng(4);
    auto u = random_tensor<double>({2, 3, 8, 8}, rng, 0.0, 1.0);
    auto maps = model->forward(u, Mode::train);
    REQUIRE(static_cast<int64_t>(maps.size()) == model->config().subnet_count);
    for (const auto& m : maps) {
      CHECK(m.shape() == Shape{2, 1, 8, 8});
      for (double v : m.values()) CHECK((v > 0.0 && v < 1.0));
    }
    CHECK(maps[1].values() != maps[0].values());
  }
  ModelConfig single = tiny("double");
  single.subnet_count = 1;
  single.connections.clear();
  auto model = build_model<double>(single, 1);
  CHECK(model->forward(Tensor<double>({1, 3, 4, 4}, 0.5), Mode::eval).size() == 1);
}

TEST_CASE("same seed gives identical parameters") {
  auto a = build_model<float>(tiny("triple"), 42);
  auto b = build_model<float>(tiny("triple"), 42);
  auto c = build_model<float>(tiny("triple"), 43);
  REQUIRE(a->parameters().size() == b->parameters().size());
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    all_same &= a->parameters()[i].tensor.values() == b->parameters()[i].tensor.values();
    any_diff |= a->parameters()[i].tensor.values() != c->parameters()[i].tensor.values();
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("a loss on the final map reaches the first sub-network") {
  auto model = build_model<double>(tiny("triple"), 5);
  std::mt19937_64 rng(6);
  auto u = random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
  backward(sum_all(model->forward(u, Mode::train).back()));
  int first_net_with_grad = 0;
  for (const auto& p : model->parameters()) {
    if (p.name.rfind("net1.", 0) != 0) continue;
    const auto g = p.tensor.grad();
    first_net_with_grad += std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
  }
  CHECK(first_net_with_grad > 0);
}

TEST_CASE("whole model gradient spot check") {
  ModelConfig c = tiny("triple", {2, 4});
  c.attention_ratio = 2;
  auto model = build_model<double>(c, 7);
  std::mt19937_64 rng(8);
  auto u = random_tensor<double>({2, 3, 4, 4}, rng, 0.0, 1.0);
  Tensor<double> y({2, 1, 4, 4});
  for (auto& v : y.data()) v = rng() % 2 ? 1.0 : 0.0;
  std::vector<NamedTensor<double>> wrt;
  for (const auto& p : model->parameters()) {
    if (p.name.find("head") != std::string::npos || p.name.find("net1.enc1.block1") != std::string::npos) {
      wrt.push_back({p.name, p.tensor});
    }
  }
  auto loss = [&] {
    Tensor<double> total;
    for (const auto& m : model->forward(u, Mode::train)) {
      total = total.defined() ? ew_add(total, bce_loss(m, y)) : bce_loss(m, y);
    }
    return total;
  };
  auto report = grad_check<double>(loss, wrt);
  INFO(report.summary());
  CHECK(report.passed());
}

TEST_CASE("binarize and predict_mask use the >= convention") {
  Tensor<float> s({1, 1, 1, 3}, std::vector<float>{0.5f, 0.49f, 0.9f});
  CHECK(binarize(s, 0.5).values() == std::vector<float>{1.0f, 0.0f, 1.0f});
  auto model = build_model<float>(tiny("triple"), 9);
  auto mask = predict_mask(*model, Tensor<float>({1, 3, 8, 8}, 0.3f), 0.5);
  CHECK(mask.shape() == Shape{1, 1, 8, 8});
  for (float v : mask.values()) CHECK((v == 0.0f || v == 1.0f));
  const auto all_fg = predict_mask(*model, Tensor<float>({1, 3, 8, 8}, 0.3f), 0.0);
  for (float v : all_fg.values()) CHECK(v == 1.0f);
}

TEST_CASE("parameter count equals a layer-by-layer tally") {
  // widths [4, 8], 3 input channels, ratio 8 (hidden units clamp to 4):
  //   enc:        dw 27 + pw 12 + bn 8, dw 36 + pw 16 + bn 8, attention 16 + 16  = 139
  //   bottleneck: dw 36 + pw 32 + bn 16, dw 72 + pw 64 + bn 16, attention 32 + 32 = 300
  //   dec (12 in): dw 108 + pw 48 + bn 8, attention 16 + 16                     = 196
  //   head: 4 + 1                                                              = 5
  //   second net's decoder sees 4 more channels: dw 144 + pw 64 + bn 8 + 32     = 248
  ModelConfig c = tiny("double");
  auto model = build_model<float>(c, 1);
  const int64_t first = 139 + 300 + 196 + 5;
  const int64_t second = 139 + 300 + 248 + 5;
  CHECK(param_count(*model) == first + second);
  CHECK(analyze_complexity(c, {1, 3, 8, 8}).params() == first + second);
}

TEST_CASE("analytic complexity follows the documented convention") {
  ModelConfig c = tiny("double");
  const auto report = analyze_complexity(c, {1, 3, 8, 8});
  auto find = [&](const std::string& name) -> const LayerCost& {
    for (const auto& l : report.layers)
      if (l.name == name) return l;
    FAIL("missing layer " << name);
    return report.layers.front();
  };
  CHECK(find("net1.enc1.block1.pointwise").flops == 2 * 8 * 8 * 3 * 4);
  CHECK(find("net1.enc1.block1.depthwise").flops == 2 * 8 * 8 * 3 * 9);
  CHECK(find("net1.enc1.block1.bn").flops == 2 * 8 * 8 * 4);
  CHECK(find("net1.enc1.pool").flops == 3 * 4 * 4 * 4);
  CHECK(find("net1.dec1.upsample").flops == 8 * 8 * 8 * 8);
  CHECK(find("net1.head").flops == 2 * 8 * 8 * 4 + 8 * 8);
  CHECK(find("net2.input_multiply").flops == 0);

  int64_t sum = 0;
  for (const auto& l : report.layers) sum += l.flops;
  CHECK(sum == report.flops());
  CHECK(report.breakdown_csv().rfind("name,kind,output_shape,params,flops\n", 0) == 0);

  const int64_t f64 = flops_count(c, {1, 3, 64, 64});
  const int64_t f128 = flops_count(c, {1, 3, 128, 128});
  CHECK(static_cast<double>(f128) / f64 == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("complexity depends only on the config") {
  auto a = build_model<float>(tiny("triple"), 1);
  auto b = build_model<float>(tiny("triple"), 2);
  CHECK(param_count(*a) == param_count(*b));
  CHECK(flops_count(*a, {1, 3, 16, 16}) == flops_count(*b, {1, 3, 16, 16}));
  for (const auto& name : {"triple-a", "triple-b", "triple-c"}) {
    CHECK(analyze_complexity(preset_config(name), {1, 3, 256, 256}).params() ==
          analyze_complexity(preset_config("triple"), {1, 3, 256, 256}).params());
    CHECK(flops_count(preset_config(name), {1, 3, 256, 256}) ==
          flops_count(preset_config("triple"), {1, 3, 256, 256}));
  }
  const auto p3 = analyze_complexity(preset_config("triple"), {1, 3, 32, 32}).params();
  const auto p4 = analyze_complexity(preset_config("4unet"), {1, 3, 32, 32}).params();
  const auto p5 = analyze_complexity(preset_config("5unet"), {1, 3, 32, 32}).params();
  CHECK(p3 < p4);
  CHECK(p4 < p5);
  CHECK(build_model<float>(preset_config("triple"), 1)->parameter_count() == p3);
}

TEST_CASE("checkpoint round trip restores values exactly") {
  const auto dir = roie::testing::temp_dir("ckpt");
  auto model = build_model<float>(tiny("triple"), 11);
  {
    // Move BN running stats away from their initial values.
    auto maps = model->forward(Tensor<float>({2, 3, 8, 8}, 0.25f), Mode::train);
  }
  Checkpoint ck = capture_model(*model, 3);
  ck.extra["note"] = "x";
  const auto manifest = write_checkpoint(dir / "c", ck);
  CHECK(std::filesystem::exists(manifest));
  CHECK(std::filesystem::exists(dir / "c.bin"));

  const Checkpoint back = read_checkpoint(dir / "c");
  CHECK(back.epoch == 3);
  CHECK(back.seed == 11);
  CHECK(back.config == model->config());
  CHECK(back.extra.at("note") == "x");

  auto restored = load_model(back);
  for (std::size_t i = 0; i < model->parameters().size(); ++i) {
    CHECK(model->parameters()[i].tensor.values() == restored->parameters()[i].tensor.values());
  }
  for (std::size_t i = 0; i < model->buffers().size(); ++i) {
    CHECK(model->buffers()[i].tensor.values() == restored->buffers()[i].tensor.values());
  }
  const Tensor<float> u({1, 3, 8, 8}, 0.4f);
  CHECK(model->forward(u, Mode::eval).back().values() ==
        restored->forward(u, Mode::eval).back().values());
}

TEST_CASE("checkpoint mismatches are reported") {
  const auto dir = roie::testing::temp_dir("ckpt_bad");
  auto model = build_model<float>(tiny("triple"), 1);
  write_checkpoint(dir / "c", capture_model(*model, 1));
  const Checkpoint ck = read_checkpoint(dir / "c.json");

  try {
    load_model(ck, tiny("triple", {4, 16}));
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("filter_widths") != std::string::npos);
  }
  auto other = build_model<float>(tiny("triple", {4, 16}), 1);
  CHECK_THROWS_AS(restore_model(*other, ck), LoadError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing"), LoadError);

  std::ofstream(dir / "c.bin", std::ios::trunc) << "short";
  CHECK_THROWS_AS(read_checkpoint(dir / "c"), LoadError);
}
