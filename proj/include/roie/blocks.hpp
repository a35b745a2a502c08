#pragma once

// Composite layers of the U-shaped sub-network: depthwise-separable conv
// blocks, squeeze-and-excitation channel attention, encoder/decoder stages.

#include <random>
#include <string>
#include <vector>

#include "roie/ops.hpp"

namespace roie {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

// Owns the registry of named learnable parameters and non-learnable buffers
// (batch-norm running statistics). Layers keep handles to the same storage.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed) : rng_(seed) {}

  // Kaiming fan-in normal initialization: N(0, 2 / fan_in).
  Tensor<T> add_kaiming(const std::string& name, Shape shape, int64_t fan_in);
  Tensor<T> add_constant(const std::string& name, Shape shape, T value);
  Tensor<T> add_buffer(const std::string& name, Shape shape, T value);

  const std::vector<Parameter<T>>& parameters() const { return params_; }
  const std::vector<Parameter<T>>& buffers() const { return buffers_; }
  int64_t parameter_count() const;

 private:
  void check_unique(const std::string& name) const;

  std::mt19937_64 rng_;
  std::vector<Parameter<T>> params_;
  std::vector<Parameter<T>> buffers_;
};

// depthwise 3×3 -> pointwise 1×1 -> batch norm -> ReLU. No conv biases (the
// batch-norm shift subsumes them).
template <typename T>
class ConvBlock {
 public:
  ConvBlock(ParameterStore<T>& store, const std::string& prefix, int64_t in_channels,
            int64_t out_channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  int64_t in_channels() const { return in_; }
  int64_t out_channels() const { return out_; }

  Tensor<T> depthwise;
  Tensor<T> pointwise;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  int64_t in_;
  int64_t out_;
};

// Bottleneck width for channel attention: channels / ratio, raised to
// min(4, channels) when that quotient falls below 4. Throws ConfigError when
// the ratio is not positive or does not divide a channel count large enough
// to use it.
int64_t attention_hidden_units(int64_t channels, int64_t ratio);

// s = sigmoid(W2 · relu(W1 · GAP(x))); output channel c = x_c · s_c.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention(ParameterStore<T>& store, const std::string& prefix, int64_t channels,
                   int64_t ratio);
  Tensor<T> forward(const Tensor<T>& x) const;

  Tensor<T> squeeze;  // hidden × C
  Tensor<T> excite;   // C × hidden
};

template <typename T>
struct EncoderOutput {
  Tensor<T> features;  // pre-pool, used as skip
  Tensor<T> pooled;    // undefined for the bottleneck
};

// Two conv blocks and channel attention; followed by 2×2 max pooling unless
// this is the bottleneck.
template <typename T>
class EncoderStage {
 public:
  EncoderStage(ParameterStore<T>& store, const std::string& prefix, int64_t in_channels,
               int64_t width, int64_t attention_ratio, bool pool);
  EncoderOutput<T> forward(const Tensor<T>& x, Mode mode);

  ConvBlock<T> block1;
  ConvBlock<T> block2;
  ChannelAttention<T> attention;
  bool pool;
};

// upsample(below) ++ skips -> conv block -> channel attention.
// skips order: own encoder first, then earlier sub-networks newest first.
template <typename T>
class DecoderStage {
 public:
  DecoderStage(ParameterStore<T>& store, const std::string& prefix, int64_t below_channels,
               int64_t skip_channels, int64_t width, int64_t attention_ratio);
  Tensor<T> forward(const Tensor<T>& below, const std::vector<Tensor<T>>& skips, Mode mode);

  ConvBlock<T> block;
  ChannelAttention<T> attention;
};

template <typename T>
struct SubnetOutput {
  Tensor<T> score;                 // N×1×H×W in (0, 1)
  std::vector<Tensor<T>> skips;    // pre-pool encoder features, finest first
};

// One U-shaped network over widths w_0..w_{L-1}: L-1 pooled encoder stages,
// a bottleneck at w_{L-1}, L-1 decoder stages and a 1×1 conv + sigmoid head.
template <typename T>
class SubNetwork {
 public:
  // extra_skip_channels[l]: channels contributed at level l by earlier
  // sub-networks (0 for the first sub-network).
  SubNetwork(ParameterStore<T>& store, const std::string& prefix, int64_t in_channels,
             const std::vector<int64_t>& widths, int64_t attention_ratio,
             const std::vector<int64_t>& extra_skip_channels);

  // extra_skips[l]: earlier sub-networks' level-l features, newest first.
  SubnetOutput<T> forward(const Tensor<T>& input,
                          const std::vector<std::vector<Tensor<T>>>& extra_skips, Mode mode);

  int64_t levels() const { return static_cast<int64_t>(widths_.size()); }

  std::vector<EncoderStage<T>> encoders;
  std::vector<DecoderStage<T>> decoders;  // decoders[l] produces level l
  Tensor<T> head_weight;
  Tensor<T> head_bias;

 private:
  std::vector<int64_t> widths_;
};

}  // namespace roie
