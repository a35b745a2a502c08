#include "roie/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "roie/error.hpp"

namespace roie {
namespace {

constexpr const char* kFormat = "roie-net-checkpoint";
constexpr int kVersion = 1;

uint32_t to_little(uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
}

std::filesystem::path manifest_path_for(const std::filesystem::path& p) {
  if (p.extension() == ".json") return p;
  auto m = p;
  m += ".json";
  return m;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name, const std::string& kind) const {
  for (const auto& t : tensors) {
    if (t.name == name && t.kind == kind) return &t;
  }
  return nullptr;
}

std::filesystem::path write_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
  auto manifest_path = stem;
  manifest_path += ".json";
  auto data_path = stem;
  data_path += ".bin";
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream bin(data_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + data_path.string());
  int64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (static_cast<int64_t>(t.values.size()) != t.shape.numel()) {
      throw ContractError("checkpoint tensor " + t.name + " value count does not match shape");
    }
    tensors.push_back({{"name", t.name},
                       {"kind", t.kind},
                       {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}},
                       {"offset", offset},
                       {"count", t.values.size()}});
    for (float v : t.values) {
      const uint32_t le = to_little(std::bit_cast<uint32_t>(v));
      bin.write(reinterpret_cast<const char*>(&le), sizeof(le));
    }
    offset += static_cast<int64_t>(t.values.size());
  }
  bin.close();
  if (!bin) throw IoError("failed writing " + data_path.string());

  nlohmann::json manifest{{"format", kFormat},
                          {"version", kVersion},
                          {"config", to_json(ckpt.config)},
                          {"seed", ckpt.seed},
                          {"epoch", ckpt.epoch},
                          {"dtype", "float32"},
                          {"byte_order", "little"},
                          {"data_file", data_path.filename().string()},
                          {"tensors", tensors},
                          {"extra", ckpt.extra}};
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + manifest_path.string());
  return manifest_path;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto manifest_path = manifest_path_for(path);
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw LoadError(manifest_path.string() + " is not a version " + std::to_string(kVersion) +
                    " checkpoint");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(manifest.at("config"));
    ckpt.seed = manifest.at("seed").get<uint64_t>();
    ckpt.epoch = manifest.at("epoch").get<int64_t>();
    ckpt.extra = manifest.value("extra", nlohmann::json::object());

    const auto data_path = manifest_path.parent_path() / manifest.at("data_file").get<std::string>();
    std::ifstream bin(data_path, std::ios::binary);
    if (!bin) throw LoadError("cannot open checkpoint data " + data_path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    for (const auto& jt : manifest.at("tensors")) {
      CheckpointTensor t;
      t.name = jt.at("name").get<std::string>();
      t.kind = jt.at("kind").get<std::string>();
      const auto dims = jt.at("shape").get<std::vector<int64_t>>();
      if (dims.size() != 4) throw LoadError("tensor " + t.name + " shape is not 4-D");
      t.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = jt.at("offset").get<int64_t>();
      const auto count = jt.at("count").get<int64_t>();
      if (count != t.shape.numel()) throw LoadError("tensor " + t.name + " count/shape mismatch");
      const auto end_byte = static_cast<std::size_t>((offset + count) * 4);
      if (offset < 0 || end_byte > raw.size()) {
        throw LoadError("tensor " + t.name + " extends past end of " + data_path.string());
      }
      t.values.resize(static_cast<std::size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        uint32_t le;
        std::memcpy(&le, raw.data() + (offset + i) * 4, 4);
        t.values[i] = std::bit_cast<float>(to_little(le));
      }
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint config invalid: " + std::string(e.what()));
  }
  return ckpt;
}

Checkpoint capture_model(const MultiUNet<float>& model, int64_t epoch) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.seed = model.seed();
  ckpt.epoch = epoch;
  for (const auto& p : model.parameters()) {
    ckpt.tensors.push_back({p.name, "parameter", p.tensor.shape(), p.tensor.values()});
  }
  for (const auto& b : model.buffers()) {
    ckpt.tensors.push_back({b.name, "buffer", b.tensor.shape(), b.tensor.values()});
  }
  return ckpt;
}

void restore_model(MultiUNet<float>& model, const Checkpoint& ckpt) {
  std::vector<std::string> problems;
  std::size_t matched = 0;
  auto restore_list = [&](const std::vector<Parameter<float>>& list, const std::string& kind) {
    for (const auto& p : list) {
      const CheckpointTensor* t = ckpt.find(p.name, kind);
      if (!t) {
        problems.push_back("missing " + kind + " " + p.name);
        continue;
      }
      if (!(t->shape == p.tensor.shape())) {
        problems.push_back(kind + " " + p.name + " shape " + t->shape.str() + " vs model " +
                           p.tensor.shape().str());
        continue;
      }
      Tensor<float> handle = p.tensor;
      std::copy(t->values.begin(), t->values.end(), handle.data().begin());
      ++matched;
    }
  };
  restore_list(model.parameters(), "parameter");
  restore_list(model.buffers(), "buffer");
  std::size_t stored = 0;
  for (const auto& t : ckpt.tensors) stored += (t.kind == "parameter" || t.kind == "buffer");
  if (stored != matched && problems.empty()) {
    problems.push_back("checkpoint has " + std::to_string(stored - matched) +
                       " tensors the model does not define");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw LoadError(msg);
  }
}

std::unique_ptr<MultiUNet<float>> load_model(const Checkpoint& ckpt,
                                             const std::optional<ModelConfig>& expected) {
  if (expected) {
    const auto diffs = config_differences(*expected, ckpt.config);
    if (!diffs.empty()) {
      std::string msg = "config/checkpoint mismatch:";
      for (const auto& d : diffs) msg += " " + d + ";";
      throw LoadError(msg);
    }
  }
  auto model = build_model<float>(ckpt.config, ckpt.seed);
  restore_model(*model, ckpt);
  return model;
}

}  // namespace roie
