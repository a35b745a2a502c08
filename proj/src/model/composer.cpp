#include "roie/composer.hpp"

#include <algorithm>
#include <sstream>

#include "roie/error.hpp"

namespace roie {

std::string connection_name(const Connection& c) {
  return c.kind == Connection::Kind::roie ? "ROIE" : "Multiply";
}

void ModelConfig::validate() const {
  if (subnet_count < 1) throw ConfigError("subnet_count must be >= 1");
  if (static_cast<int64_t>(connections.size()) != subnet_count - 1) {
    throw ConfigError("connections has " + std::to_string(connections.size()) +
                      " entries, expected subnet_count - 1 = " + std::to_string(subnet_count - 1));
  }
  for (const auto& c : connections) {
    if (c.kind == Connection::Kind::roie && !(c.alpha > 0 && c.beta > 0)) {
      throw ConfigError("ROIE alpha and beta must be positive");
    }
  }
  if (filter_widths.empty()) throw ConfigError("filter_widths must not be empty");
  for (int64_t w : filter_widths) {
    if (w <= 0) throw ConfigError("filter widths must be positive");
    attention_hidden_units(w, attention_ratio);
  }
  if (input_channels <= 0) throw ConfigError("input_channels must be positive");
  if (!(binarize_threshold > 0 && binarize_threshold < 1)) {
    throw ConfigError("binarize_threshold must be in (0, 1)");
  }
}

namespace {

struct PresetRow {
  const char* name;
  const char* label;
  std::vector<Connection::Kind> kinds;
};

const std::vector<PresetRow>& preset_rows() {
  using K = Connection::Kind;
  static const std::vector<PresetRow> rows{
      {"double", "DoubleUNet", {K::multiply}},
      {"double-star", "DoubleUNet*", {K::roie}},
      {"triple-a", "Triple-UNet-a", {K::multiply, K::multiply}},
      {"triple-b", "Triple-UNet-b", {K::roie, K::roie}},
      {"triple-c", "Triple-UNet-c", {K::multiply, K::roie}},
      {"4unet", "4-UNet", {K::multiply, K::multiply, K::roie}},
      {"5unet", "5-UNet", {K::multiply, K::multiply, K::multiply, K::roie}},
      {"triple", "Triple-UNet", {K::roie, K::multiply}},
  };
  return rows;
}

const PresetRow& find_preset(const std::string& name) {
  for (const auto& row : preset_rows()) {
    if (name == row.name) return row;
  }
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (valid: " + valid + ")");
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& row : preset_rows()) out.emplace_back(row.name);
    return out;
  }();
  return names;
}

ModelConfig preset_config(const std::string& name) {
  const PresetRow& row = find_preset(name);
  ModelConfig cfg;
  cfg.preset = name;
  cfg.subnet_count = static_cast<int64_t>(row.kinds.size()) + 1;
  cfg.connections.clear();
  for (auto kind : row.kinds) {
    cfg.connections.push_back(kind == Connection::Kind::roie ? Connection::roie_connection()
                                                             : Connection::multiply());
  }
  return cfg;
}

std::string method_label(const std::string& preset) { return find_preset(preset).label; }

std::string connection_structure(const std::vector<Connection>& connections) {
  if (connections.empty()) return "None";
  std::vector<std::string> parts;
  if (connections.size() <= 2) {
    for (const auto& c : connections) parts.push_back(connection_name(c));
  } else {
    // Runs of the same kind are folded to "k*Kind" in longer sequences.
    std::size_t i = 0;
    while (i < connections.size()) {
      std::size_t j = i;
      while (j < connections.size() && connections[j].kind == connections[i].kind) ++j;
      const std::size_t run = j - i;
      const std::string name = connection_name(connections[i]);
      parts.push_back(run > 1 ? std::to_string(run) + "*" + name : name);
      i = j;
    }
  }
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : " + ") + p;
  return out;
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json conns = nlohmann::json::array();
  for (const auto& c : config.connections) {
    nlohmann::json jc{{"kind", c.kind == Connection::Kind::roie ? "roie" : "multiply"}};
    if (c.kind == Connection::Kind::roie) {
      jc["alpha"] = c.alpha;
      jc["beta"] = c.beta;
    }
    conns.push_back(jc);
  }
  return {{"preset", config.preset},
          {"subnet_count", config.subnet_count},
          {"connections", conns},
          {"filter_widths", config.filter_widths},
          {"attention_ratio", config.attention_ratio},
          {"input_channels", config.input_channels},
          {"binarize_threshold", config.binarize_threshold}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    if (j.contains("preset") && !j.at("preset").get<std::string>().empty()) {
      cfg = preset_config(j.at("preset").get<std::string>());
    }
    if (j.contains("subnet_count")) cfg.subnet_count = j.at("subnet_count").get<int64_t>();
    if (j.contains("connections")) {
      cfg.connections.clear();
      for (const auto& jc : j.at("connections")) {
        const auto kind = jc.at("kind").get<std::string>();
        if (kind == "roie") {
          cfg.connections.push_back(Connection::roie_connection(jc.value("alpha", 1.0),
                                                                jc.value("beta", 1.0)));
        } else if (kind == "multiply") {
          cfg.connections.push_back(Connection::multiply());
        } else {
          throw ConfigError("unknown connection kind '" + kind + "'");
        }
      }
    }
    if (j.contains("filter_widths")) {
      cfg.filter_widths = j.at("filter_widths").get<std::vector<int64_t>>();
    }
    if (j.contains("attention_ratio")) cfg.attention_ratio = j.at("attention_ratio").get<int64_t>();
    if (j.contains("input_channels")) cfg.input_channels = j.at("input_channels").get<int64_t>();
    if (j.contains("binarize_threshold")) {
      cfg.binarize_threshold = j.at("binarize_threshold").get<double>();
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

std::vector<std::string> config_differences(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> diffs;
  const auto ja = to_json(a);
  const auto jb = to_json(b);
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (it.key() == "binarize_threshold") continue;  // inference-time setting
    if (!jb.contains(it.key()) || jb.at(it.key()) != it.value()) {
      diffs.push_back(it.key() + ": " + it.value().dump() + " vs " +
                      (jb.contains(it.key()) ? jb.at(it.key()).dump() : "<missing>"));
    }
  }
  return diffs;
}

template <typename T>
Tensor<T> roie(const Tensor<T>& u, const Tensor<T>& x, double alpha, double beta) {
  if (!(alpha > 0) || !(beta >= 0)) {
    throw ConfigError("roie: alpha must be positive and beta non-negative");
  }
  if (x.shape().c != 1) {
    throw ShapeError("roie: score map must have one channel, got " + x.shape().str());
  }
  Tensor<T> enhanced = ew_mul(x, u);
  if (alpha != 1.0) enhanced = scale(enhanced, static_cast<T>(alpha));
  if (beta == 0.0) return enhanced;
  return ew_add(enhanced, beta == 1.0 ? u : scale(u, static_cast<T>(beta)));
}

template <typename T>
Tensor<T> multiply_connect(const Tensor<T>& u, const Tensor<T>& x) {
  if (x.shape().c != 1) {
    throw ShapeError("multiply_connect: score map must have one channel, got " + x.shape().str());
  }
  return ew_mul(x, u);
}

template <typename T>
Tensor<T> apply_connection(const Connection& c, const Tensor<T>& u, const Tensor<T>& x) {
  if (c.kind == Connection::Kind::roie) return roie(u, x, c.alpha, c.beta);
  return multiply_connect(u, x);
}

template <typename T>
MultiUNet<T>::MultiUNet(const ModelConfig& config, uint64_t seed)
    : config_(config), seed_(seed), store_(seed) {
  config_.validate();
  const auto levels = config_.filter_widths.size();
  subnets_.reserve(static_cast<std::size_t>(config_.subnet_count));
  for (int64_t k = 0; k < config_.subnet_count; ++k) {
    std::vector<int64_t> extra(levels > 0 ? levels - 1 : 0);
    for (std::size_t l = 0; l < extra.size(); ++l) extra[l] = k * config_.filter_widths[l];
    subnets_.emplace_back(store_, "net" + std::to_string(k + 1), config_.input_channels,
                          config_.filter_widths, config_.attention_ratio, extra);
  }
}

template <typename T>
std::vector<Tensor<T>> MultiUNet<T>::forward(const Tensor<T>& u, Mode mode) {
  if (u.shape().c != config_.input_channels) {
    throw ShapeError("model input has " + std::to_string(u.shape().c) + " channels, expected " +
                     std::to_string(config_.input_channels));
  }
  std::vector<Tensor<T>> scores;
  // history[k][l]: sub-network k's level-l encoder features.
  std::vector<std::vector<Tensor<T>>> history;
  for (std::size_t k = 0; k < subnets_.size(); ++k) {
    const Tensor<T> input = k == 0 ? u : apply_connection(config_.connections[k - 1], u, scores.back());
    std::vector<std::vector<Tensor<T>>> extra;
    if (k > 0) {
      extra.resize(history.front().size());
      for (std::size_t l = 0; l < extra.size(); ++l) {
        for (std::size_t j = k; j-- > 0;) extra[l].push_back(history[j][l]);
      }
    }
    auto out = subnets_[k].forward(input, extra, mode);
    scores.push_back(out.score);
    history.push_back(std::move(out.skips));
  }
  return scores;
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& score, double threshold) {
  std::vector<T> mask(score.values().size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = static_cast<double>(score.values()[i]) >= threshold ? T(1) : T(0);
  }
  return Tensor<T>(score.shape(), std::move(mask));
}

template <typename T>
Tensor<T> predict_mask(MultiUNet<T>& model, const Tensor<T>& u, double threshold) {
  NoGradGuard guard;
  return binarize(model.forward(u, Mode::eval).back(), threshold);
}

#define ROIE_INSTANTIATE(T)                                                                  \
  template Tensor<T> roie(const Tensor<T>&, const Tensor<T>&, double, double);               \
  template Tensor<T> multiply_connect(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> apply_connection(const Connection&, const Tensor<T>&, const Tensor<T>&); \
  template class MultiUNet<T>;                                                               \
  template Tensor<T> binarize(const Tensor<T>&, double);                                     \
  template Tensor<T> predict_mask(MultiUNet<T>&, const Tensor<T>&, double);

ROIE_INSTANTIATE(float)
ROIE_INSTANTIATE(double)

#undef ROIE_INSTANTIATE

}  // namespace roie
