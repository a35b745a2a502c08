#include "roie/blocks.hpp"

#include <cmath>

#include "roie/error.hpp"

namespace roie {

template <typename T>
void ParameterStore<T>::check_unique(const std::string& name) const {
  for (const auto* list : {&params_, &buffers_}) {
    for (const auto& p : *list) {
      if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
  }
}

template <typename T>
Tensor<T> ParameterStore<T>::add_kaiming(const std::string& name, Shape shape, int64_t fan_in) {
  check_unique(name);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> values(static_cast<std::size_t>(shape.numel()));
  for (T& v : values) v = static_cast<T>(dist(rng_));
  Tensor<T> t(shape, std::move(values));
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value) {
  check_unique(name);
  Tensor<T> t(shape, value);
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::add_buffer(const std::string& name, Shape shape, T value) {
  check_unique(name);
  Tensor<T> t(shape, value);
  buffers_.push_back({name, t});
  return t;
}

template <typename T>
int64_t ParameterStore<T>::parameter_count() const {
  int64_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

template <typename T>
ConvBlock<T>::ConvBlock(ParameterStore<T>& store, const std::string& prefix, int64_t in_channels,
                        int64_t out_channels)
    : in_(in_channels), out_(out_channels) {
  depthwise = store.add_kaiming(prefix + ".depthwise.weight", {in_channels, 1, 3, 3}, 9);
  pointwise =
      store.add_kaiming(prefix + ".pointwise.weight", {out_channels, in_channels, 1, 1}, in_channels);
  gamma = store.add_constant(prefix + ".bn.gamma", {1, out_channels, 1, 1}, T(1));
  beta = store.add_constant(prefix + ".bn.beta", {1, out_channels, 1, 1}, T(0));
  running_mean = store.add_buffer(prefix + ".bn.running_mean", {1, out_channels, 1, 1}, T(0));
  running_var = store.add_buffer(prefix + ".bn.running_var", {1, out_channels, 1, 1}, T(1));
}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.shape().c != in_) {
    throw ShapeError("conv_block: input has " + std::to_string(x.shape().c) +
                     " channels, block expects " + std::to_string(in_));
  }
  auto h = conv2d_depthwise(x, depthwise);
  h = conv2d_pointwise(h, pointwise);
  h = batch_norm(h, gamma, beta, running_mean, running_var, mode);
  return relu(h);
}

int64_t attention_hidden_units(int64_t channels, int64_t ratio) {
  if (ratio <= 0) throw ConfigError("attention ratio must be positive");
  if (channels <= 0) throw ConfigError("attention channels must be positive");
  constexpr int64_t kMinHidden = 4;
  if (channels / ratio < kMinHidden) return std::min(kMinHidden, channels);
  if (channels % ratio != 0) {
    throw ConfigError("attention ratio " + std::to_string(ratio) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  return channels / ratio;
}

template <typename T>
ChannelAttention<T>::ChannelAttention(ParameterStore<T>& store, const std::string& prefix,
                                      int64_t channels, int64_t ratio) {
  const int64_t hidden = attention_hidden_units(channels, ratio);
  squeeze = store.add_kaiming(prefix + ".squeeze.weight", {hidden, channels, 1, 1}, channels);
  excite = store.add_kaiming(prefix + ".excite.weight", {channels, hidden, 1, 1}, hidden);
}

template <typename T>
Tensor<T> ChannelAttention<T>::forward(const Tensor<T>& x) const {
  if (x.shape().c != excite.shape().n) {
    throw ShapeError("channel_attention: input has " + std::to_string(x.shape().c) +
                     " channels, module expects " + std::to_string(excite.shape().n));
  }
  auto s = global_avg_pool(x);
  s = relu(dense(s, squeeze));
  s = sigmoid(dense(s, excite));
  return channel_scale(x, s);
}

template <typename T>
EncoderStage<T>::EncoderStage(ParameterStore<T>& store, const std::string& prefix,
                              int64_t in_channels, int64_t width, int64_t attention_ratio,
                              bool pool_output)
    : block1(store, prefix + ".block1", in_channels, width),
      block2(store, prefix + ".block2", width, width),
      attention(store, prefix + ".attention", width, attention_ratio),
      pool(pool_output) {}

template <typename T>
EncoderOutput<T> EncoderStage<T>::forward(const Tensor<T>& x, Mode mode) {
  if (pool && (x.shape().h % 2 != 0 || x.shape().w % 2 != 0)) {
    throw ShapeError("encoder_stage: spatial dims must be even, got " + x.shape().str());
  }
  EncoderOutput<T> out;
  out.features = attention.forward(block2.forward(block1.forward(x, mode), mode));
  if (pool) out.pooled = max_pool2(out.features);
  return out;
}

template <typename T>
DecoderStage<T>::DecoderStage(ParameterStore<T>& store, const std::string& prefix,
                              int64_t below_channels, int64_t skip_channels, int64_t width,
                              int64_t attention_ratio)
    : block(store, prefix + ".block", below_channels + skip_channels, width),
      attention(store, prefix + ".attention", width, attention_ratio) {}

template <typename T>
Tensor<T> DecoderStage<T>::forward(const Tensor<T>& below, const std::vector<Tensor<T>>& skips,
                                   Mode mode) {
  if (skips.empty()) {
    throw ConfigError("decoder_stage: every decoder stage needs at least its own encoder skip");
  }
  auto up = upsample_bilinear2(below);
  for (const auto& s : skips) {
    if (s.shape().h != up.shape().h || s.shape().w != up.shape().w || s.shape().n != up.shape().n) {
      throw ShapeError("decoder_stage: skip " + s.shape().str() +
                       " does not match upsampled input " + up.shape().str());
    }
  }
  std::vector<Tensor<T>> parts;
  parts.reserve(skips.size() + 1);
  parts.push_back(up);
  parts.insert(parts.end(), skips.begin(), skips.end());
  return attention.forward(block.forward(concat_channels(parts), mode));
}

template <typename T>
SubNetwork<T>::SubNetwork(ParameterStore<T>& store, const std::string& prefix,
                          int64_t in_channels, const std::vector<int64_t>& widths,
                          int64_t attention_ratio, const std::vector<int64_t>& extra_skip_channels)
    : widths_(widths) {
  const auto L = static_cast<int64_t>(widths.size());
  if (L < 1) throw ConfigError("sub-network needs at least one filter width");
  for (int64_t w : widths) {
    if (w <= 0) throw ConfigError("filter widths must be positive");
  }
  if (static_cast<int64_t>(extra_skip_channels.size()) != std::max<int64_t>(L - 1, 0)) {
    throw ConfigError("extra skip channel list must have one entry per decoder level");
  }
  encoders.reserve(L);
  int64_t channels = in_channels;
  for (int64_t l = 0; l < L; ++l) {
    const bool bottleneck = l == L - 1;
    const std::string name = bottleneck ? prefix + ".bottleneck"
                                        : prefix + ".enc" + std::to_string(l + 1);
    encoders.emplace_back(store, name, channels, widths[l], attention_ratio, !bottleneck);
    channels = widths[l];
  }
  decoders.reserve(L > 0 ? L - 1 : 0);
  for (int64_t l = 0; l + 1 < L; ++l) {
    decoders.emplace_back(store, prefix + ".dec" + std::to_string(l + 1), widths[l + 1],
                          widths[l] + extra_skip_channels[l], widths[l], attention_ratio);
  }
  head_weight = store.add_kaiming(prefix + ".head.weight", {1, widths[0], 1, 1}, widths[0]);
  head_bias = store.add_constant(prefix + ".head.bias", {1, 1, 1, 1}, T(0));
}

template <typename T>
SubnetOutput<T> SubNetwork<T>::forward(const Tensor<T>& input,
                                       const std::vector<std::vector<Tensor<T>>>& extra_skips,
                                       Mode mode) {
  const int64_t L = levels();
  const int64_t factor = int64_t{1} << (L - 1);
  const Shape s = input.shape();
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("sub-network: spatial size " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " not divisible by " + std::to_string(factor));
  }
  if (!extra_skips.empty() && static_cast<int64_t>(extra_skips.size()) != L - 1) {
    throw ConfigError("extra skips must be given per decoder level");
  }

  SubnetOutput<T> out;
  Tensor<T> h = input;
  for (int64_t l = 0; l < L; ++l) {
    auto enc = encoders[l].forward(h, mode);
    if (l + 1 < L) {
      out.skips.push_back(enc.features);
      h = enc.pooled;
    } else {
      h = enc.features;
    }
  }
  for (int64_t l = L - 2; l >= 0; --l) {
    std::vector<Tensor<T>> skips{out.skips[l]};
    if (!extra_skips.empty()) {
      skips.insert(skips.end(), extra_skips[l].begin(), extra_skips[l].end());
    }
    h = decoders[l].forward(h, skips, mode);
  }
  out.score = sigmoid(conv2d_pointwise(h, head_weight, head_bias));
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;
template class ChannelAttention<float>;
template class ChannelAttention<double>;
template class EncoderStage<float>;
template class EncoderStage<double>;
template class DecoderStage<float>;
template class DecoderStage<double>;
template class SubNetwork<float>;
template class SubNetwork<double>;

}  // namespace roie
