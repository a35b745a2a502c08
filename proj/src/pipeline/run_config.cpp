#include <fstream>

#include "roie/error.hpp"
#include "roie/train.hpp"

namespace roie {

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  data.split.validate();
  data.augment.validate();
  const int64_t factor = int64_t{1} << (model.filter_widths.size() - 1);
  if (data.input_size < 1 || data.input_size % factor != 0) {
    throw ConfigError("input size " + std::to_string(data.input_size) + " must be a positive multiple of " +
                      std::to_string(factor));
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& d = c.data;
  return {{"schema_version", RunConfig::kSchemaVersion},
          {"model", to_json(c.model)},
          {"data",
           {{"root", d.root.string()},
            {"images_subdir", d.images_subdir},
            {"masks_subdir", d.masks_subdir},
            {"input_size", d.input_size},
            {"split",
             {{"train", d.split.train},
              {"val", d.split.val},
              {"test", d.split.test},
              {"seed", d.split.seed}}},
            {"augment", to_json(d.augment)},
            {"augment_training", d.augment_training},
            {"augment_validation", d.augment_validation}}},
          {"optim", to_json(c.optim)},
          {"seed", c.seed},
          {"threads", c.threads},
          {"threshold", c.threshold},
          {"out_dir", c.out_dir.string()}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    const int version = j.value("schema_version", RunConfig::kSchemaVersion);
    if (version != RunConfig::kSchemaVersion) {
      throw ConfigError("unsupported run config schema_version " + std::to_string(version));
    }
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.root = d.value("root", c.data.root.string());
      c.data.images_subdir = d.value("images_subdir", c.data.images_subdir);
      c.data.masks_subdir = d.value("masks_subdir", c.data.masks_subdir);
      c.data.input_size = d.value("input_size", c.data.input_size);
      if (d.contains("split")) {
        const auto& s = d.at("split");
        c.data.split.train = s.value("train", c.data.split.train);
        c.data.split.val = s.value("val", c.data.split.val);
        c.data.split.test = s.value("test", c.data.split.test);
        c.data.split.seed = s.value("seed", c.data.split.seed);
      }
      if (d.contains("augment")) c.data.augment = augment_config_from_json(d.at("augment"));
      c.data.augment_training = d.value("augment_training", c.data.augment_training);
      c.data.augment_validation = d.value("augment_validation", c.data.augment_validation);
    }
    if (j.contains("optim")) c.optim = optim_config_from_json(j.at("optim"));
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.threshold = j.value("threshold", c.threshold);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace roie
