#pragma once

// Analytic parameter and FLOP accounting for a model configuration.
//
// Cost convention (per forward pass):
//   depthwise / pointwise conv, dense   2 · MACs, plus 1 per output element for a bias
//   batch norm (inference form)         2 per element
//   ReLU, sigmoid, channel scaling      1 per element
//   global average pooling              1 per input element
//   2×2 max pooling                     3 per output element (comparisons)
//   bilinear ×2 upsampling              8 per output element
//   concatenation                       0
//   ROIE / Multiply connections         0 (listed in the breakdown, not
//                                       counted: they are parameter-free
//                                       tensor arithmetic, not layers)

#include <cstdint>
#include <string>
#include <vector>

#include "roie/composer.hpp"

namespace roie {

struct LayerCost {
  std::string name;
  std::string kind;
  Shape output;
  int64_t params = 0;
  int64_t flops = 0;
};

struct ComplexityReport {
  std::vector<LayerCost> layers;
  int64_t params() const;
  int64_t flops() const;
  // name,kind,output_shape,params,flops
  std::string breakdown_csv() const;
};

ComplexityReport analyze_complexity(const ModelConfig& config, Shape input);

template <typename T>
int64_t param_count(const MultiUNet<T>& model) {
  return model.parameter_count();
}

inline int64_t flops_count(const ModelConfig& config, Shape input) {
  return analyze_complexity(config, input).flops();
}

template <typename T>
int64_t flops_count(const MultiUNet<T>& model, Shape input) {
  return flops_count(model.config(), input);
}

}  // namespace roie
