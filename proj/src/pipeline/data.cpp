#include "roie/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "roie/error.hpp"

namespace roie {
namespace fs = std::filesystem;

SamplePair make_sample(std::string id, const Image8& image, const Image8& mask) {
  if (image.width != mask.width || image.height != mask.height) {
    throw IngestionError("image/mask size mismatch for '" + id + "': " +
                         std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " vs " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  if (image.channels != 3 || mask.channels != 1) {
    throw ContractError("make_sample expects an RGB image and a gray mask");
  }
  SamplePair s;
  s.id = std::move(id);
  s.height = image.height;
  s.width = image.width;
  const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
  s.image.resize(3 * hw);
  s.mask.resize(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      s.image[c * hw + i] = static_cast<float>(image.pixels[i * 3 + c]) / 255.0f;
    }
    s.mask[i] = mask.pixels[i] >= kMaskThreshold ? 1.0f : 0.0f;
  }
  return s;
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void require_directory(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) {
    throw IngestionError(std::string(what) + " directory not found: " + dir.string());
  }
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  require_directory(dir, "image");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SamplePair> load_dataset(const fs::path& images_dir, const fs::path& masks_dir) {
  require_directory(images_dir, "images");
  require_directory(masks_dir, "masks");

  std::map<std::string, fs::path> masks;
  for (const auto& entry : fs::directory_iterator(masks_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    std::string stem = entry.path().stem().string();
    masks[stem] = entry.path();
  }

  std::map<std::string, fs::path> images;
  for (const auto& p : list_images(images_dir)) {
    const std::string stem = p.stem().string();
    if (images.count(stem)) {
      throw IngestionError("duplicate image stem '" + stem + "' in " + images_dir.string());
    }
    images[stem] = p;
  }

  std::vector<SamplePair> pairs;
  pairs.reserve(images.size());
  for (const auto& [stem, path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) it = masks.find(stem + "_segmentation");
    if (it == masks.end()) {
      throw IngestionError("no mask for image '" + stem + "' in " + masks_dir.string());
    }
    pairs.push_back(make_sample(stem, read_image(path, 3), read_image(it->second, 1)));
  }
  return pairs;
}

void SplitSpec::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  // The epsilon keeps exact products such as 0.8 * 10 from flooring to 7.
  const auto take = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  const std::size_t tr = std::min(n, take(spec.train));
  const std::size_t va = std::min(n - tr, take(spec.val));
  return {tr, va, n - tr - va};
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  auto splitmix = [](uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5u));
  for (std::size_t i = n; i > 1; --i) {
    // Multiply-shift bounded draw in [0, i).
    const auto j = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(rng()) * static_cast<unsigned __int128>(i)) >> 64);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

DatasetSplit split(std::vector<SamplePair> pairs, const SplitSpec& spec) {
  const auto sizes = split_sizes(pairs.size(), spec);
  const auto order = shuffled_indices(pairs.size(), spec.seed);
  DatasetSplit out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < sizes[0] ? out.train : (i < sizes[0] + sizes[1] ? out.val : out.test);
    dst.push_back(std::move(pairs[order[i]]));
  }
  return out;
}

namespace {

void bilinear_plane(const float* src, int sh, int sw, float* dst, int dh, int dw) {
  auto coord = [](int i, int in, int out) {
    double s = (i + 0.5) * static_cast<double>(in) / out - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (int y = 0; y < dh; ++y) {
    const double sy = coord(y, sh, dh);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double fy = sy - y0;
    for (int x = 0; x < dw; ++x) {
      const double sx = coord(x, sw, dw);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double fx = sx - x0;
      const double top = src[y0 * sw + x0] + fx * (src[y0 * sw + x1] - src[y0 * sw + x0]);
      const double bot = src[y1 * sw + x0] + fx * (src[y1 * sw + x1] - src[y1 * sw + x0]);
      dst[y * dw + x] = static_cast<float>(top + fy * (bot - top));
    }
  }
}

}  // namespace

SamplePair resize(const SamplePair& sample, int target) {
  if (target <= 0) throw ConfigError("resize target must be positive");
  if (sample.height == target && sample.width == target) return sample;
  SamplePair out;
  out.id = sample.id;
  out.height = target;
  out.width = target;
  const std::size_t src_hw = static_cast<std::size_t>(sample.height) * sample.width;
  const std::size_t dst_hw = static_cast<std::size_t>(target) * target;
  out.image.resize(3 * dst_hw);
  for (int c = 0; c < 3; ++c) {
    bilinear_plane(sample.image.data() + c * src_hw, sample.height, sample.width,
                   out.image.data() + c * dst_hw, target, target);
  }
  out.mask.resize(dst_hw);
  for (int y = 0; y < target; ++y) {
    const int sy = std::min(sample.height - 1, static_cast<int>((y + 0.5) * sample.height / target));
    for (int x = 0; x < target; ++x) {
      const int sx = std::min(sample.width - 1, static_cast<int>((x + 0.5) * sample.width / target));
      out.mask[y * target + x] = sample.mask[sy * sample.width + sx] >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig a;
  a.hflip_p = a.vflip_p = a.noise_p = a.blur_p = a.brightness_contrast_p = 0.0;
  return a;
}

void AugmentConfig::validate() const {
  for (double p : {hflip_p, vflip_p, noise_p, blur_p, brightness_contrast_p}) {
    if (!(p >= 0 && p <= 1)) throw ConfigError("augmentation probabilities must be in [0, 1]");
  }
  if (noise_sigma < 0) throw ConfigError("noise sigma must be non-negative");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur kernel must be odd and >= 1");
  if (brightness_delta < 0 || contrast_low <= 0 || contrast_high < contrast_low) {
    throw ConfigError("invalid brightness/contrast range");
  }
}

nlohmann::json to_json(const AugmentConfig& a) {
  return {{"hflip_p", a.hflip_p},
          {"vflip_p", a.vflip_p},
          {"noise_p", a.noise_p},
          {"noise_sigma", a.noise_sigma},
          {"blur_p", a.blur_p},
          {"blur_kernel", a.blur_kernel},
          {"brightness_contrast_p", a.brightness_contrast_p},
          {"brightness_delta", a.brightness_delta},
          {"contrast_low", a.contrast_low},
          {"contrast_high", a.contrast_high}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig a;
  a.hflip_p = j.value("hflip_p", a.hflip_p);
  a.vflip_p = j.value("vflip_p", a.vflip_p);
  a.noise_p = j.value("noise_p", a.noise_p);
  a.noise_sigma = j.value("noise_sigma", a.noise_sigma);
  a.blur_p = j.value("blur_p", a.blur_p);
  a.blur_kernel = j.value("blur_kernel", a.blur_kernel);
  a.brightness_contrast_p = j.value("brightness_contrast_p", a.brightness_contrast_p);
  a.brightness_delta = j.value("brightness_delta", a.brightness_delta);
  a.contrast_low = j.value("contrast_low", a.contrast_low);
  a.contrast_high = j.value("contrast_high", a.contrast_high);
  a.validate();
  return a;
}

namespace {

template <typename F>
void for_each_plane(SamplePair& s, F&& f) {
  const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
  for (int c = 0; c < 3; ++c) f(s.image.data() + c * hw);
  f(s.mask.data());
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller on the same generator.
double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void box_blur(SamplePair& s, int kernel) {
  const int r = kernel / 2;
  const int H = s.height, W = s.width;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<float> tmp(hw);
  for (int c = 0; c < 3; ++c) {
    float* p = s.image.data() + c * hw;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = std::clamp(y + dy, 0, H - 1);
          for (int dx = -r; dx <= r; ++dx) acc += p[yy * W + std::clamp(x + dx, 0, W - 1)];
        }
        tmp[y * W + x] = static_cast<float>(acc / (kernel * kernel));
      }
    }
    std::copy(tmp.begin(), tmp.end(), p);
  }
}

}  // namespace

void hflip(SamplePair& s) {
  for_each_plane(s, [&](float* p) {
    for (int y = 0; y < s.height; ++y) std::reverse(p + y * s.width, p + (y + 1) * s.width);
  });
}

void vflip(SamplePair& s) {
  for_each_plane(s, [&](float* p) {
    for (int y = 0; y < s.height / 2; ++y) {
      std::swap_ranges(p + y * s.width, p + (y + 1) * s.width, p + (s.height - 1 - y) * s.width);
    }
  });
}

SamplePair augment(const SamplePair& sample, const AugmentConfig& config, std::mt19937_64& rng) {
  SamplePair out = sample;
  if (uniform01(rng) < config.hflip_p) hflip(out);
  if (uniform01(rng) < config.vflip_p) vflip(out);
  if (uniform01(rng) < config.noise_p) {
    for (float& v : out.image) v += static_cast<float>(config.noise_sigma * standard_normal(rng));
  }
  if (uniform01(rng) < config.blur_p) box_blur(out, config.blur_kernel);
  if (uniform01(rng) < config.brightness_contrast_p) {
    const double contrast =
        config.contrast_low + (config.contrast_high - config.contrast_low) * uniform01(rng);
    const double shift = (2 * uniform01(rng) - 1) * config.brightness_delta;
    for (float& v : out.image) v = static_cast<float>(contrast * v + shift);
  }
  for (float& v : out.image) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Batch stack_samples(const std::vector<const SamplePair*>& samples) {
  if (samples.empty()) throw ContractError("cannot stack an empty batch");
  const int H = samples.front()->height, W = samples.front()->width;
  const auto B = static_cast<int64_t>(samples.size());
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Batch b;
  b.images = Tensor<float>(Shape{B, 3, H, W});
  b.masks = Tensor<float>(Shape{B, 1, H, W});
  auto img = b.images.data();
  auto msk = b.masks.data();
  for (int64_t i = 0; i < B; ++i) {
    const SamplePair& s = *samples[i];
    if (s.height != H || s.width != W) {
      throw ShapeError("batch samples differ in size ('" + s.id + "' is " +
                       std::to_string(s.height) + "x" + std::to_string(s.width) + ")");
    }
    std::copy(s.image.begin(), s.image.end(), img.begin() + i * 3 * hw);
    std::copy(s.mask.begin(), s.mask.end(), msk.begin() + i * hw);
    b.ids.push_back(s.id);
  }
  return b;
}

BatchSequence::BatchSequence(const std::vector<SamplePair>& pairs, std::size_t batch_size,
                             uint64_t seed, int64_t epoch, const AugmentConfig* augment,
                             bool shuffle)
    : pairs_(pairs), batch_size_(batch_size), seed_(seed), epoch_(epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (pairs.empty()) throw ContractError("cannot iterate batches over an empty dataset");
  if (augment) augment_ = *augment;
  if (shuffle) {
    order_ = shuffled_indices(pairs.size(), mix_seed(seed, static_cast<uint64_t>(epoch), 0xB47C4u));
  } else {
    order_.resize(pairs.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

Batch BatchSequence::get(std::size_t index) const {
  if (index >= size()) throw ContractError("batch index out of range");
  const std::size_t begin = index * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  std::vector<SamplePair> augmented;
  std::vector<const SamplePair*> ptrs;
  if (augment_) {
    augmented.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      std::mt19937_64 rng(mix_seed(seed_, static_cast<uint64_t>(epoch_), 0xA06u + i));
      augmented.push_back(augment(pairs_[order_[i]], *augment_, rng));
    }
    for (const auto& s : augmented) ptrs.push_back(&s);
  } else {
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&pairs_[order_[i]]);
  }
  return stack_samples(ptrs);
}

}  // namespace roie
