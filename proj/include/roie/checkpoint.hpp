#pragma once

// Checkpoint format: `<stem>.json` manifest plus `<stem>.bin`, a flat
// little-endian float32 array holding every tensor listed in the manifest,
// in manifest order. Manifest keys:
//   format ("roie-net-checkpoint"), version, config (model config), seed,
//   epoch (completed epochs), dtype, byte_order, data_file,
//   tensors: [{name, kind, shape [n,c,h,w], offset, count}]  (offset/count in elements)
//   extra: free-form run state (history, optimizer step, ...)

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roie/composer.hpp"

namespace roie {

struct CheckpointTensor {
  std::string name;
  std::string kind;  // "parameter", "buffer", or optimizer state kinds
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  uint64_t seed = 0;
  int64_t epoch = 0;
  std::vector<CheckpointTensor> tensors;
  nlohmann::json extra = nlohmann::json::object();

  const CheckpointTensor* find(const std::string& name, const std::string& kind) const;
};

// Writes `<stem>.json` and `<stem>.bin`; returns the manifest path.
std::filesystem::path write_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);

// Accepts either the manifest path or the stem.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameters and buffers of the model, in registration order.
Checkpoint capture_model(const MultiUNet<float>& model, int64_t epoch);

// Copies parameter and buffer values into the model. Throws LoadError naming
// every mismatching tensor (missing, extra, or shape change).
void restore_model(MultiUNet<float>& model, const Checkpoint& ckpt);

// Builds a model from the checkpoint's config and restores its values. When
// `expected` is given and differs, throws LoadError naming the differing
// fields.
std::unique_ptr<MultiUNet<float>> load_model(const Checkpoint& ckpt,
                                             const std::optional<ModelConfig>& expected = {});

}  // namespace roie
