#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/common.hpp"

namespace lesionseg {

using json = nlohmann::json;

// Canonical modality vocabulary; Algorithm routing keys on these names.
inline const std::vector<std::string>& canonical_modalities() {
  static const std::vector<std::string> names = {"T1w", "T1c", "T2w", "FLAIR", "DWI", "ADC"};
  return names;
}

inline bool is_canonical_modality(const std::string& m) {
  for (const auto& n : canonical_modalities())
    if (n == m) return true;
  return false;
}

struct ModelConfig {
  int num_streams = 2;
  std::vector<int> stage_channels = {16, 32, 64, 128, 256};
  int swin_layers = 1;
  int swin_heads = 4;
  int swin_window = 7;
  int cbam_reduction = 8;
  int num_classes = 1;
  int input_h = 208;
  int input_w = 208;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig desk_scale() { return ModelConfig{}; }
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.stage_channels = {32, 64, 128, 256, 512};
    return c;
  }
};

struct LossConfig {
  std::string mode = "vascular";  // "vascular" | "brats"
  double epsilon = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double tversky_alpha = 0.3;
  double tversky_beta = 0.7;
  double focal_weight = 0.5;
  double tversky_weight = 0.5;
  std::vector<double> aux_weights = {0.5, 0.25};
  double boundary_weight = 0.5;
  double lesion_weight = 0.25;

  bool operator==(const LossConfig&) const = default;
};

struct AugmentationConfig {
  double flip_prob = 0.0;
  double affine_prob = 0.0;
  double rotation_deg = 0.0;
  double scale_frac = 0.0;
  double elastic_prob = 0.0;
  double photometric_prob = 0.0;
  double channel_dropout_prob = 0.0;

  bool operator==(const AugmentationConfig&) const = default;

  static AugmentationConfig none() { return AugmentationConfig{}; }
  static AugmentationConfig wmh_tier() { return {0.5, 0.75, 20.0, 0.20, 0.5, 0.40, 0.5}; }
  static AugmentationConfig isles_tier() { return {0.5, 0.75, 15.0, 0.15, 0.3, 0.30, 0.25}; }
  static AugmentationConfig brats_tier() { return {0.5, 0.50, 10.0, 0.10, 0.0, 0.175, 0.0}; }
};

struct SamplerConfig {
  bool enabled = false;
  double size_percentile = 25.0;
  double oversample_factor = 3.0;

  bool operator==(const SamplerConfig&) const = default;
};

struct OptimizerConfig {
  double lr = 1e-4;
  int epochs = 150;
  int batch_size = 18;
  double weight_decay = 1.5e-4;
  int warmup_epochs = 15;
  uint64_t seed = 1234;
  double grad_clip = 1.0;  // global-norm clip; 0 disables

  bool operator==(const OptimizerConfig&) const = default;
};

struct TaskProfile {
  std::string name = "WMH";  // WMH | ISLES | BraTS | custom
  std::vector<std::string> modalities = {"FLAIR", "T1w"};
  std::vector<std::string> class_names = {"lesion"};
  LossConfig loss;
  AugmentationConfig augmentation;
  SamplerConfig sampler;
  OptimizerConfig optimizer;

  bool operator==(const TaskProfile&) const = default;
};

inline TaskProfile wmh_profile() {
  TaskProfile p;
  p.name = "WMH";
  p.modalities = {"FLAIR", "T1w"};
  p.class_names = {"lesion"};
  p.loss.mode = "vascular";
  p.augmentation = AugmentationConfig::wmh_tier();
  p.sampler = {true, 25.0, 3.0};
  p.optimizer = {1e-4, 150, 18, 1.5e-4, 15, 1234, 1.0};
  return p;
}

inline TaskProfile isles_profile() {
  TaskProfile p;
  p.name = "ISLES";
  p.modalities = {"DWI", "ADC"};
  p.class_names = {"lesion"};
  p.loss.mode = "vascular";
  p.augmentation = AugmentationConfig::isles_tier();
  p.sampler = {true, 25.0, 3.0};
  p.optimizer = {1e-4, 120, 18, 1.5e-4, 15, 1234, 1.0};
  return p;
}

inline TaskProfile brats_profile() {
  TaskProfile p;
  p.name = "BraTS";
  p.modalities = {"T1w", "T1c", "T2w", "FLAIR"};
  p.class_names = {"WT", "TC", "ET"};
  p.loss.mode = "brats";
  p.augmentation = AugmentationConfig::brats_tier();
  p.sampler = {false, 25.0, 3.0};
  p.optimizer = {5e-5, 300, 8, 1e-4, 15, 1234, 1.0};
  return p;
}

inline std::optional<TaskProfile> builtin_profile(const std::string& name) {
  if (name == "WMH") return wmh_profile();
  if (name == "ISLES") return isles_profile();
  if (name == "BraTS") return brats_profile();
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// JSON (strict: unknown keys are configuration errors)

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const ModelConfig& c) {
  return json{{"num_streams", c.num_streams},
              {"stage_channels", c.stage_channels},
              {"swin_layers", c.swin_layers},
              {"swin_heads", c.swin_heads},
              {"swin_window", c.swin_window},
              {"cbam_reduction", c.cbam_reduction},
              {"num_classes", c.num_classes},
              {"input_size", std::vector<int>{c.input_h, c.input_w}}};
}

inline ModelConfig model_from_json(const json& j) {
  detail::check_keys(j,
                     {"num_streams", "stage_channels", "swin_layers", "swin_heads", "swin_window",
                      "cbam_reduction", "num_classes", "input_size", "preset"},
                     "model");
  ModelConfig c;
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p == "desk")
      c = ModelConfig::desk_scale();
    else if (p == "paper")
      c = ModelConfig::paper_scale();
    else
      throw ConfigError("model.preset must be 'desk' or 'paper', got '" + p + "'");
  }
  detail::get_if(j, "num_streams", c.num_streams);
  detail::get_if(j, "stage_channels", c.stage_channels);
  detail::get_if(j, "swin_layers", c.swin_layers);
  detail::get_if(j, "swin_heads", c.swin_heads);
  detail::get_if(j, "swin_window", c.swin_window);
  detail::get_if(j, "cbam_reduction", c.cbam_reduction);
  detail::get_if(j, "num_classes", c.num_classes);
  if (j.contains("input_size")) {
    auto v = j.at("input_size").get<std::vector<int>>();
    if (v.size() != 2) throw ConfigError("model.input_size must be [H, W]");
    c.input_h = v[0];
    c.input_w = v[1];
  }
  return c;
}

inline json to_json(const LossConfig& c) {
  return json{{"mode", c.mode},
              {"epsilon", c.epsilon},
              {"focal_gamma", c.focal_gamma},
              {"focal_alpha", c.focal_alpha},
              {"tversky_alpha", c.tversky_alpha},
              {"tversky_beta", c.tversky_beta},
              {"focal_weight", c.focal_weight},
              {"tversky_weight", c.tversky_weight},
              {"aux_weights", c.aux_weights},
              {"boundary_weight", c.boundary_weight},
              {"lesion_weight", c.lesion_weight}};
}

inline LossConfig loss_from_json(const json& j, LossConfig c = {}) {
  detail::check_keys(j,
                     {"mode", "epsilon", "focal_gamma", "focal_alpha", "tversky_alpha",
                      "tversky_beta", "focal_weight", "tversky_weight", "aux_weights",
                      "boundary_weight", "lesion_weight"},
                     "loss");
  detail::get_if(j, "mode", c.mode);
  detail::get_if(j, "epsilon", c.epsilon);
  detail::get_if(j, "focal_gamma", c.focal_gamma);
  detail::get_if(j, "focal_alpha", c.focal_alpha);
  detail::get_if(j, "tversky_alpha", c.tversky_alpha);
  detail::get_if(j, "tversky_beta", c.tversky_beta);
  detail::get_if(j, "focal_weight", c.focal_weight);
  detail::get_if(j, "tversky_weight", c.tversky_weight);
  detail::get_if(j, "aux_weights", c.aux_weights);
  detail::get_if(j, "boundary_weight", c.boundary_weight);
  detail::get_if(j, "lesion_weight", c.lesion_weight);
  return c;
}

inline json to_json(const AugmentationConfig& c) {
  return json{{"flip_prob", c.flip_prob},
              {"affine_prob", c.affine_prob},
              {"rotation_deg", c.rotation_deg},
              {"scale_frac", c.scale_frac},
              {"elastic_prob", c.elastic_prob},
              {"photometric_prob", c.photometric_prob},
              {"channel_dropout_prob", c.channel_dropout_prob}};
}

inline AugmentationConfig augmentation_from_json(const json& j, AugmentationConfig c = {}) {
  detail::check_keys(j,
                     {"flip_prob", "affine_prob", "rotation_deg", "scale_frac", "elastic_prob",
                      "photometric_prob", "channel_dropout_prob"},
                     "augmentation");
  detail::get_if(j, "flip_prob", c.flip_prob);
  detail::get_if(j, "affine_prob", c.affine_prob);
  detail::get_if(j, "rotation_deg", c.rotation_deg);
  detail::get_if(j, "scale_frac", c.scale_frac);
  detail::get_if(j, "elastic_prob", c.elastic_prob);
  detail::get_if(j, "photometric_prob", c.photometric_prob);
  detail::get_if(j, "channel_dropout_prob", c.channel_dropout_prob);
  return c;
}

inline json to_json(const SamplerConfig& c) {
  return json{{"enabled", c.enabled},
              {"size_percentile", c.size_percentile},
              {"oversample_factor", c.oversample_factor}};
}

inline SamplerConfig sampler_from_json(const json& j, SamplerConfig c = {}) {
  detail::check_keys(j, {"enabled", "size_percentile", "oversample_factor"}, "sampler");
  detail::get_if(j, "enabled", c.enabled);
  detail::get_if(j, "size_percentile", c.size_percentile);
  detail::get_if(j, "oversample_factor", c.oversample_factor);
  return c;
}

inline json to_json(const OptimizerConfig& c) {
  return json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"warmup_epochs", c.warmup_epochs},
              {"seed", c.seed},
              {"grad_clip", c.grad_clip}};
}

inline OptimizerConfig optimizer_from_json(const json& j, OptimizerConfig c = {}) {
  detail::check_keys(
      j, {"lr", "epochs", "batch_size", "weight_decay", "warmup_epochs", "seed", "grad_clip"},
      "optimizer");
  detail::get_if(j, "lr", c.lr);
  detail::get_if(j, "epochs", c.epochs);
  detail::get_if(j, "batch_size", c.batch_size);
  detail::get_if(j, "weight_decay", c.weight_decay);
  detail::get_if(j, "warmup_epochs", c.warmup_epochs);
  detail::get_if(j, "seed", c.seed);
  detail::get_if(j, "grad_clip", c.grad_clip);
  return c;
}

inline json to_json(const TaskProfile& p) {
  return json{{"task", p.name},
              {"modalities", p.modalities},
              {"class_names", p.class_names},
              {"loss", to_json(p.loss)},
              {"augmentation", to_json(p.augmentation)},
              {"sampler", to_json(p.sampler)},
              {"optimizer", to_json(p.optimizer)}};
}

inline TaskProfile profile_from_json(const json& j) {
  detail::check_keys(
      j, {"task", "modalities", "class_names", "loss", "augmentation", "sampler", "optimizer"},
      "profile");
  TaskProfile p;
  if (j.contains("task")) {
    const std::string name = j.at("task").get<std::string>();
    if (auto preset = builtin_profile(name))
      p = *preset;
    else
      p.name = name;
  }
  detail::get_if(j, "modalities", p.modalities);
  detail::get_if(j, "class_names", p.class_names);
  if (j.contains("loss")) p.loss = loss_from_json(j.at("loss"), p.loss);
  if (j.contains("augmentation"))
    p.augmentation = augmentation_from_json(j.at("augmentation"), p.augmentation);
  if (j.contains("sampler")) p.sampler = sampler_from_json(j.at("sampler"), p.sampler);
  if (j.contains("optimizer")) p.optimizer = optimizer_from_json(j.at("optimizer"), p.optimizer);
  return p;
}

// Experiment file = profile + model in one document.
struct ExperimentConfig {
  TaskProfile profile;
  ModelConfig model;

  bool operator==(const ExperimentConfig&) const = default;
};

inline json to_json(const ExperimentConfig& c) {
  json j = to_json(c.profile);
  j["model"] = to_json(c.model);
  return j;
}

inline ExperimentConfig experiment_from_json(const json& j) {
  detail::check_keys(j,
                     {"task", "modalities", "class_names", "loss", "augmentation", "sampler",
                      "optimizer", "model"},
                     "config");
  ExperimentConfig c;
  json pj = j;
  pj.erase("model");
  c.profile = profile_from_json(pj);
  c.model.num_streams = static_cast<int>(c.profile.modalities.size());
  c.model.num_classes = static_cast<int>(c.profile.class_names.size());
  if (j.contains("model")) {
    ModelConfig base = c.model;
    c.model = model_from_json(j.at("model"));
    if (!j.at("model").contains("num_streams")) c.model.num_streams = base.num_streams;
    if (!j.at("model").contains("num_classes")) c.model.num_classes = base.num_classes;
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

inline std::string config_hash(const ExperimentConfig& c) {
  return hex64(fnv1a64(to_json(c).dump()));
}

// ---------------------------------------------------------------------------
// Validation

inline std::vector<std::string> validate_config(const ModelConfig& cfg, const TaskProfile& profile) {
  std::vector<std::string> v;
  if (cfg.stage_channels.size() != 5) v.push_back("stage_channels must list exactly 5 widths");
  for (size_t i = 0; i + 1 < cfg.stage_channels.size(); ++i)
    if (cfg.stage_channels[i] >= cfg.stage_channels[i + 1]) {
      v.push_back("stage_channels must be strictly increasing");
      break;
    }
  for (int c : cfg.stage_channels)
    if (c < 1) v.push_back("stage_channels must be positive");
  if (cfg.input_h % 16 || cfg.input_w % 16)
    v.push_back("input_size must be divisible by 16 (four downsamplings)");
  if (cfg.input_h < 16 || cfg.input_w < 16) v.push_back("input_size must be at least 16x16");
  if (cfg.num_streams < 1) v.push_back("num_streams must be >= 1");
  if (cfg.num_classes < 1) v.push_back("num_classes must be >= 1");
  if (cfg.swin_layers < 1) v.push_back("swin_layers must be >= 1");
  if (cfg.swin_window < 1) v.push_back("swin_window must be >= 1");
  if (cfg.swin_heads < 1)
    v.push_back("swin_heads must be >= 1");
  else if (!cfg.stage_channels.empty() && cfg.stage_channels.back() % cfg.swin_heads)
    v.push_back("bottleneck width must be divisible by swin_heads");
  if (cfg.cbam_reduction < 1) v.push_back("cbam_reduction must be >= 1");

  if (static_cast<int>(profile.modalities.size()) != cfg.num_streams)
    v.push_back("stream/modality mismatch: " + std::to_string(cfg.num_streams) + " streams vs " +
                std::to_string(profile.modalities.size()) + " modalities");
  {
    std::set<std::string> seen;
    for (const auto& m : profile.modalities) {
      if (!is_canonical_modality(m)) v.push_back("unknown modality '" + m + "'");
      if (!seen.insert(m).second) v.push_back("duplicate modality '" + m + "'");
    }
  }
  if (profile.class_names.empty()) v.push_back("class_names must be nonempty");
  if (static_cast<int>(profile.class_names.size()) != cfg.num_classes)
    v.push_back("class/num_classes mismatch");
  if (profile.loss.mode != "vascular" && profile.loss.mode != "brats")
    v.push_back("loss.mode must be 'vascular' or 'brats'");
  for (double w : profile.loss.aux_weights)
    if (w < 0) v.push_back("aux_weights must be nonnegative");
  if (profile.loss.boundary_weight < 0 || profile.loss.lesion_weight < 0 ||
      profile.loss.focal_weight < 0 || profile.loss.tversky_weight < 0)
    v.push_back("loss weights must be nonnegative");

  const auto& a = profile.augmentation;
  for (double pr : {a.flip_prob, a.affine_prob, a.elastic_prob, a.photometric_prob,
                    a.channel_dropout_prob})
    if (pr < 0 || pr > 1) {
      v.push_back("augmentation probabilities must lie in [0,1]");
      break;
    }
  if (profile.sampler.enabled) {
    if (profile.sampler.size_percentile <= 0 || profile.sampler.size_percentile >= 100)
      v.push_back("sampler.size_percentile must lie in (0,100)");
    if (profile.sampler.oversample_factor < 1) v.push_back("sampler.oversample_factor must be >= 1");
  }
  const auto& o = profile.optimizer;
  if (o.lr < 0 || o.epochs < 1 || o.batch_size < 1 || o.weight_decay < 0 || o.warmup_epochs < 0)
    v.push_back("optimizer values must be positive (lr/decay nonnegative)");
  return v;
}

}  // namespace lesionseg
