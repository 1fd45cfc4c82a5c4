#include "fsdag/runconfig.hpp"

#include <fstream>

#include "fsdag/errors.hpp"

namespace fsdag {

using nlohmann::json;

namespace {

Components none() { return {TextPooling::Off, false, false, false}; }

Components with(Components c, auto&&... edits) {
  (edits(c), ...);
  return c;
}

const auto first_token = [](Components& c) { c.pooling = TextPooling::First; };
const auto pooled = [](Components& c) { c.pooling = TextPooling::Mean; };
const auto visual = [](Components& c) { c.visual = true; };
const auto positional = [](Components& c) { c.positional = true; };
const auto strategies = [](Components& c) { c.strategies = true; };

void flatten(const json& j, const std::string& prefix, json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      flatten(it.value(), key, out);
    else
      out[key] = it.value();
  }
}

json unflatten(const json& flat) {
  json out = json::object();
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    json* node = &out;
    std::string_view key = it.key();
    for (std::size_t dot; (dot = key.find('.')) != std::string_view::npos; key.remove_prefix(dot + 1))
      node = &(*node)[std::string(key.substr(0, dot))];
    (*node)[std::string(key)] = it.value();
  }
  return out;
}

}  // namespace

const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> presets{
      {"skeleton", "#1", none()},
      {"first-token", "#2a", with(none(), first_token)},
      {"pooling", "#2b", with(none(), pooled)},
      {"visual", "#2c", with(none(), visual)},
      {"positional", "#2d", with(none(), positional)},
      {"strategies", "#2e", with(none(), strategies)},
      {"pooling-visual", "#3", with(none(), pooled, visual)},
      {"pooling-visual-positional", "#4", with(none(), pooled, visual, positional)},
      {"full", "#5", Components{}},
      {"no-pooling", "", with(Components{}, [](Components& c) { c.pooling = TextPooling::Off; })},
      {"no-visual", "", with(Components{}, [](Components& c) { c.visual = false; })},
      {"no-positional", "", with(Components{}, [](Components& c) { c.positional = false; })},
      {"no-strategies", "", with(Components{}, [](Components& c) { c.strategies = false; })},
      {"text-only", "", with(Components{}, [](Components& c) { c.visual = c.positional = false; })},
  };
  return presets;
}

std::vector<std::string> standard_ablation_rows() { return {"skeleton", "pooling", "visual", "positional", "full"}; }

const AblationPreset& ablation_preset(std::string_view name) {
  for (const auto& p : ablation_presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : ablation_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown ablation \"" + std::string(name) + "\" (known: " + known + ")");
}

void apply_components(const Components& c, ModelConfig& model, TrainConfig& train) {
  model.text.pooling = c.pooling;
  model.use_visual = c.visual;
  model.use_positional = c.positional;
  model.use_instance_norm = c.strategies;
  train.augment = c.strategies;
  if (!c.strategies)
    model.label_smoothing = 0.0;
  else if (model.label_smoothing == 0.0)
    model.label_smoothing = ModelConfig{}.label_smoothing;
}

json to_flat_json(const RunConfig& cfg) {
  json model = to_json(cfg.model);
  model.erase("classes");
  json flat = json::object();
  flatten(json{{"model", model}, {"train", to_json(cfg.train)}}, "", flat);
  flat["ablation"] = cfg.ablation;
  return flat;
}

void apply_flat(RunConfig& cfg, const json& flat) {
  if (!flat.is_object()) throw ConfigError("run config must be a JSON object of dotted keys");
  json merged = to_flat_json(cfg);
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    if (!merged.contains(it.key())) throw ConfigError("unknown config key \"" + it.key() + "\"");
    merged[it.key()] = it.value();
  }
  const json nested = unflatten(merged);
  RunConfig out;
  json model = nested.at("model");
  model["classes"] = cfg.model.classes.size() >= 2 ? cfg.model.classes : std::vector<std::string>{"other", "key"};
  out.model = model_config_from_json(model);
  out.model.classes = cfg.model.classes;
  out.train = train_config_from_json(nested.at("train"));
  if (!nested.at("ablation").is_string()) throw ConfigError("ablation must be a string");
  out.ablation = nested.at("ablation").get<std::string>();
  ablation_preset(out.ablation);
  cfg = std::move(out);
}

void apply_setting(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("expected key=value, got \"" + std::string(assignment) + "\"");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  apply_flat(cfg, json{{key, value}});
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig cfg;
  apply_flat(cfg, j);
  return cfg;
}

}  // namespace fsdag
