#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "roie/image_io.hpp"
#include "roie/tensor.hpp"

namespace roie {

// Image (3×H×W planar, values in [0,1]) with its binary mask (H×W, {0,1}).
struct SamplePair {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> image;
  std::vector<float> mask;
};

inline constexpr int kMaskThreshold = 128;

// Converts decoded 8-bit images. Throws IngestionError on size mismatch.
SamplePair make_sample(std::string id, const Image8& image, const Image8& mask);

// Pairs `<images_dir>/<stem>.{jpg,jpeg,png}` with `<masks_dir>/<stem>.png`
// (a `<stem>_segmentation.png` mask is also accepted). Sorted by id.
std::vector<SamplePair> load_dataset(const std::filesystem::path& images_dir,
                                     const std::filesystem::path& masks_dir);

// Image files in a directory, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplit {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  std::vector<SamplePair> test;
};

// train = floor(train·n), val = floor(val·n), test = remainder.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec);

// Seeded shuffle, then contiguous slices.
DatasetSplit split(std::vector<SamplePair> pairs, const SplitSpec& spec);

// Image bilinear (half-pixel centers), mask nearest-neighbour then
// re-binarized. Output is target×target.
SamplePair resize(const SamplePair& sample, int target);

struct AugmentConfig {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double noise_p = 0.2;
  double noise_sigma = 0.02;
  double blur_p = 0.2;
  int blur_kernel = 3;  // odd box-filter size
  double brightness_contrast_p = 0.2;
  double brightness_delta = 0.2;  // shift drawn from [-delta, delta]
  double contrast_low = 0.8;
  double contrast_high = 1.2;

  static AugmentConfig disabled();
  void validate() const;
};

nlohmann::json to_json(const AugmentConfig& a);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

void hflip(SamplePair& s);
void vflip(SamplePair& s);

// hflip, vflip, noise, blur, brightness/contrast in that order, each with its
// probability. Flips touch image and mask; the rest only the image, which is
// clamped back to [0, 1].
SamplePair augment(const SamplePair& sample, const AugmentConfig& config, std::mt19937_64& rng);

// Deterministic 64-bit key mixing for per-(seed, epoch, index) streams.
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c = 0);

// Fisher-Yates over [0, n) driven by a splitmix-seeded mt19937_64; identical
// on every platform.
std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed);

struct Batch {
  Tensor<float> images;  // B×3×H×W
  Tensor<float> masks;   // B×1×H×W
  std::vector<std::string> ids;
};

// Per-epoch batching: order is a shuffle keyed by (seed, epoch); the last
// partial batch is kept. With an augment config each sample gets its own
// stream keyed by (seed, epoch, position).
class BatchSequence {
 public:
  BatchSequence(const std::vector<SamplePair>& pairs, std::size_t batch_size, uint64_t seed,
                int64_t epoch, const AugmentConfig* augment = nullptr, bool shuffle = true);

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  Batch get(std::size_t index) const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const std::vector<SamplePair>& pairs_;
  std::size_t batch_size_;
  uint64_t seed_;
  int64_t epoch_;
  std::vector<std::size_t> order_;
  std::optional<AugmentConfig> augment_;
};

// Stacks samples (which must share dimensions) into batch tensors.
Batch stack_samples(const std::vector<const SamplePair*>& samples);

}  // namespace roie
