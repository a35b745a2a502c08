#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "roie/blocks.hpp"

namespace roie {

// How the original image u is conditioned on the previous score map x before
// entering the next sub-network.
struct Connection {
  enum class Kind { roie, multiply };
  Kind kind = Kind::roie;
  double alpha = 1.0;  // ROIE only
  double beta = 1.0;   // ROIE only

  static Connection roie_connection(double alpha = 1.0, double beta = 1.0) {
    return {Kind::roie, alpha, beta};
  }
  static Connection multiply() { return {Kind::multiply, 1.0, 1.0}; }
  bool operator==(const Connection&) const = default;
};

std::string connection_name(const Connection& c);  // "ROIE" / "Multiply"

struct ModelConfig {
  std::string preset;  // empty for custom configs
  int64_t subnet_count = 3;
  std::vector<Connection> connections{Connection::roie_connection(), Connection::multiply()};
  std::vector<int64_t> filter_widths{32, 64, 128, 256, 512};
  int64_t attention_ratio = 8;
  int64_t input_channels = 3;
  double binarize_threshold = 0.5;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Preset names in ablation-table order.
const std::vector<std::string>& preset_names();
// Throws ConfigError listing valid names on an unknown preset.
ModelConfig preset_config(const std::string& name);
// Table label ("Triple-UNet") and connection-structure label
// ("ROIE + Multiply", "2*Multiply + ROIE").
std::string method_label(const std::string& preset);
std::string connection_structure(const std::vector<Connection>& connections);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
// Human-readable list of fields that differ; empty when equal.
std::vector<std::string> config_differences(const ModelConfig& expected, const ModelConfig& actual);

// alpha · (x ⊙ u) + beta · u, x broadcast over u's channels. alpha must be
// positive and beta non-negative (beta = 0 reduces to the Multiply form).
template <typename T>
Tensor<T> roie(const Tensor<T>& u, const Tensor<T>& x, double alpha = 1.0, double beta = 1.0);

template <typename T>
Tensor<T> multiply_connect(const Tensor<T>& u, const Tensor<T>& x);

template <typename T>
Tensor<T> apply_connection(const Connection& c, const Tensor<T>& u, const Tensor<T>& x);

template <typename T>
class MultiUNet {
 public:
  MultiUNet(const ModelConfig& config, uint64_t seed);

  // Score maps x(1)..x(K), each N×1×H×W.
  std::vector<Tensor<T>> forward(const Tensor<T>& u, Mode mode);

  const ModelConfig& config() const { return config_; }
  uint64_t seed() const { return seed_; }
  const std::vector<Parameter<T>>& parameters() const { return store_.parameters(); }
  const std::vector<Parameter<T>>& buffers() const { return store_.buffers(); }
  int64_t parameter_count() const { return store_.parameter_count(); }
  std::vector<SubNetwork<T>>& subnets() { return subnets_; }

 private:
  ModelConfig config_;
  uint64_t seed_;
  ParameterStore<T> store_;
  std::vector<SubNetwork<T>> subnets_;
};

template <typename T>
std::unique_ptr<MultiUNet<T>> build_model(const ModelConfig& config, uint64_t seed) {
  return std::make_unique<MultiUNet<T>>(config, seed);
}

// Binarizes the final score map: 1 where x >= threshold, else 0.
template <typename T>
Tensor<T> binarize(const Tensor<T>& score, double threshold);

template <typename T>
Tensor<T> predict_mask(MultiUNet<T>& model, const Tensor<T>& u, double threshold);

}  // namespace roie
