#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "fsdag/graphnet.hpp"
#include "fsdag/trainer.hpp"
#include "json.hpp"

namespace fsdag {

/// Which architectural components and training strategies are on.
struct Components {
  TextPooling pooling = TextPooling::Mean;
  bool visual = true;
  bool positional = true;
  bool strategies = true;  // augmentation, label smoothing and instance norm
};

struct AblationPreset {
  std::string name;
  std::string row;  // row label in the ablation table
  Components components;
};

const std::vector<AblationPreset>& ablation_presets();
/// The five rows run by `fsdag ablate`, in table order.
std::vector<std::string> standard_ablation_rows();
/// Throws ConfigError for unknown names.
const AblationPreset& ablation_preset(std::string_view name);

void apply_components(const Components& c, ModelConfig& model, TrainConfig& train);

struct RunConfig {
  ModelConfig model;  // classes come from the corpus, not from the file
  TrainConfig train;
  std::string ablation = "full";

  void apply_ablation() { apply_components(ablation_preset(ablation).components, model, train); }
};

/// Dotted keys such as "model.text.pooling" and "train.epochs".
nlohmann::json to_flat_json(const RunConfig& cfg);
/// Overrides the given keys; unknown keys and bad values throw ConfigError.
void apply_flat(RunConfig& cfg, const nlohmann::json& flat);
/// "key=value"; value is read as JSON, falling back to a plain string.
void apply_setting(RunConfig& cfg, std::string_view assignment);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace fsdag
