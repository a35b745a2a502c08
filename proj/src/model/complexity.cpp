#include "roie/complexity.hpp"

#include <sstream>

#include "roie/error.hpp"

namespace roie {

int64_t ComplexityReport::params() const {
  int64_t total = 0;
  for (const auto& l : layers) total += l.params;
  return total;
}

int64_t ComplexityReport::flops() const {
  int64_t total = 0;
  for (const auto& l : layers) total += l.flops;
  return total;
}

std::string ComplexityReport::breakdown_csv() const {
  std::ostringstream os;
  os << "name,kind,output_shape,params,flops\n";
  for (const auto& l : layers) {
    os << l.name << "," << l.kind << "," << l.output.str() << "," << l.params << "," << l.flops
       << "\n";
  }
  return os.str();
}

namespace {

class Walker {
 public:
  explicit Walker(ComplexityReport& r) : r_(r) {}

  void add(std::string name, std::string kind, Shape out, int64_t params, int64_t flops) {
    r_.layers.push_back({std::move(name), std::move(kind), out, params, flops});
  }

  Shape conv_block(const std::string& p, Shape in, int64_t cout) {
    const int64_t hw = in.n * in.plane();
    add(p + ".depthwise", "depthwise_conv", in, in.c * 9, 2 * 9 * in.c * hw);
    const Shape out{in.n, cout, in.h, in.w};
    add(p + ".pointwise", "pointwise_conv", out, in.c * cout, 2 * in.c * cout * hw);
    add(p + ".bn", "batch_norm", out, 2 * cout, 2 * out.numel());
    add(p + ".relu", "relu", out, 0, out.numel());
    return out;
  }

  Shape attention(const std::string& p, Shape in, int64_t ratio) {
    const int64_t hidden = attention_hidden_units(in.c, ratio);
    add(p + ".gap", "global_avg_pool", {in.n, in.c, 1, 1}, 0, in.numel());
    add(p + ".squeeze", "dense", {in.n, hidden, 1, 1}, hidden * in.c, 2 * in.n * hidden * in.c);
    add(p + ".squeeze_relu", "relu", {in.n, hidden, 1, 1}, 0, in.n * hidden);
    add(p + ".excite", "dense", {in.n, in.c, 1, 1}, hidden * in.c, 2 * in.n * hidden * in.c);
    add(p + ".excite_sigmoid", "sigmoid", {in.n, in.c, 1, 1}, 0, in.n * in.c);
    add(p + ".scale", "channel_scale", in, 0, in.numel());
    return in;
  }

 private:
  ComplexityReport& r_;
};

}  // namespace

ComplexityReport analyze_complexity(const ModelConfig& config, Shape input) {
  config.validate();
  const auto& widths = config.filter_widths;
  const auto L = static_cast<int64_t>(widths.size());
  const int64_t factor = int64_t{1} << (L - 1);
  if (input.h % factor != 0 || input.w % factor != 0) {
    throw ShapeError("input " + input.str() + " not divisible by " + std::to_string(factor));
  }
  if (input.c != config.input_channels) {
    throw ShapeError("input " + input.str() + " has wrong channel count");
  }

  ComplexityReport report;
  Walker w(report);
  for (int64_t k = 0; k < config.subnet_count; ++k) {
    const std::string net = "net" + std::to_string(k + 1);
    if (k > 0) {
      const auto& c = config.connections[static_cast<std::size_t>(k - 1)];
      w.add(net + ".input_" + (c.kind == Connection::Kind::roie ? "roie" : "multiply"),
            "connection", input, 0, 0);
    }
    Shape s = input;
    std::vector<Shape> skips;
    for (int64_t l = 0; l < L; ++l) {
      const bool bottleneck = l == L - 1;
      const std::string p = bottleneck ? net + ".bottleneck" : net + ".enc" + std::to_string(l + 1);
      s = w.conv_block(p + ".block1", s, widths[l]);
      s = w.conv_block(p + ".block2", s, widths[l]);
      s = w.attention(p + ".attention", s, config.attention_ratio);
      if (!bottleneck) {
        skips.push_back(s);
        s = Shape{s.n, s.c, s.h / 2, s.w / 2};
        w.add(p + ".pool", "max_pool2", s, 0, 3 * s.numel());
      }
    }
    for (int64_t l = L - 2; l >= 0; --l) {
      const std::string p = net + ".dec" + std::to_string(l + 1);
      s = Shape{s.n, s.c, s.h * 2, s.w * 2};
      w.add(p + ".upsample", "upsample_bilinear2", s, 0, 8 * s.numel());
      // Own skip plus one per earlier sub-network, all widths[l] channels.
      s.c += widths[l] * (k + 1);
      w.add(p + ".concat", "concat", s, 0, 0);
      s = w.conv_block(p + ".block", s, widths[l]);
      s = w.attention(p + ".attention", s, config.attention_ratio);
    }
    const Shape out{s.n, 1, s.h, s.w};
    w.add(net + ".head", "pointwise_conv", out, s.c + 1, 2 * s.c * out.numel() + out.numel());
    w.add(net + ".head_sigmoid", "sigmoid", out, 0, out.numel());
  }
  return report;
}

}  // namespace roie
