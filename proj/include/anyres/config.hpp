#pragma once

#include <string>
#include <utility>

#include <json.hpp>

#include "anyres/backbone.hpp"
#include "anyres/data.hpp"
#include "anyres/training.hpp"

namespace anyres {

struct DataConfig {
  std::string source = "desk";  // desk | synthetic | image_folder
  std::string path;             // image_folder root
  int train_per_class = 200;
  int val_per_class = 100;
  int num_classes = 2;       // synthetic
  int samples_per_class = 32;  // synthetic
  int base_resolution = 48;
  std::uint64_t seed = 99;
};

struct RunConfig {
  BackboneSpec backbone;
  DataConfig data;
  TrainingConfig train;
  std::string checkpoint_path = "model.ckpt";
  std::string log_path = "train_log.csv";
};

// Structural (full) backbone serialization used by checkpoints.
nlohmann::json backbone_to_json(const BackboneSpec& spec);
BackboneSpec backbone_from_json(const nlohmann::json& j);

// Config-style backbone: {"name": "tiny_resnet"|"tiny_mobile"|"toy",
//   "widths": [...], "blocks_per_stage": n, "num_classes": n, "expansion": n}
BackboneSpec backbone_from_config(const nlohmann::json& j);

nlohmann::json training_to_json(const TrainingConfig& cfg);
TrainingConfig training_from_json(const nlohmann::json& j);

DataConfig data_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);

// Train and validation splits for a data config (image_folder yields the
// same set for both; callers normally pass a separate folder for eval).
std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg);

}  // namespace anyres
