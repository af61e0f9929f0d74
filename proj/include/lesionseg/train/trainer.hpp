#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lesionseg/data/dataset.hpp"
#include "lesionseg/data/sampler.hpp"
#include "lesionseg/infer/postprocess.hpp"
#include "lesionseg/infer/sliding_window.hpp"
#include "lesionseg/losses.hpp"
#include "lesionseg/train/checkpoint.hpp"
#include "lesionseg/train/optimizer.hpp"
#include "lesionseg/train/schedule.hpp"

namespace lesionseg {

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double val_dsc = std::numeric_limits<double>::quiet_NaN();
  double lr = 0;
};

struct StepStats {
  int64_t step = 0;
  double loss = 0;
  LossBreakdown breakdown;
};

// Optimization loop: warmup+cosine schedule, AdamW with decoupled decay,
// difficulty-aware sampling with replacement, per-epoch validation DSC at
// (tau=0.5, S_min=0), best-checkpoint retention, and deterministic
// single-threaded replay from seeded RNG streams.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, const Dataset& data, std::string out_dir)
      : cfg_(std::move(cfg)),
        out_dir_(std::move(out_dir)),
        init_rng_(cfg_.profile.optimizer.seed),
        sampler_rng_(cfg_.profile.optimizer.seed + 0x9e3779b97f4a7c15ULL),
        augment_rng_(cfg_.profile.optimizer.seed + 0x6a09e667f3bcc909ULL) {
    auto violations = validate_config(cfg_.model, cfg_.profile);
    if (!violations.empty()) throw ConfigError("invalid configuration: " + violations[0]);
    std::filesystem::create_directories(out_dir_);
    net_ = std::make_unique<MultiStreamNet<float>>(cfg_.model, cfg_.profile.modalities, init_rng_);
    opt_ = std::make_unique<AdamW<float>>(net_->parameters());

    auto train_subjects = data.split("train");
    if (train_subjects.empty()) throw DataError("trainer: no subjects in the train split");
    slices_ = build_slice_dataset(train_subjects, cfg_.model.input_h, cfg_.model.input_w);
    std::vector<int64_t> areas;
    for (const auto& e : slices_.entries) areas.push_back(e.lesion_area);
    weights_ = difficulty_weights(areas, cfg_.profile.sampler);
    for (const auto* s : train_subjects) train_ids_.push_back(s->id);
    for (const auto* s : data.split("val")) val_subjects_.push_back(*s);

    steps_per_epoch_ =
        static_cast<int>((slices_.size() + cfg_.profile.optimizer.batch_size - 1) /
                         cfg_.profile.optimizer.batch_size);
    total_steps_ = static_cast<int64_t>(steps_per_epoch_) * cfg_.profile.optimizer.epochs;
    warmup_steps_ = static_cast<int64_t>(steps_per_epoch_) * cfg_.profile.optimizer.warmup_epochs;
  }

  MultiStreamNet<float>& net() { return *net_; }
  int steps_per_epoch() const { return steps_per_epoch_; }
  int64_t global_step() const { return global_step_; }
  const std::vector<EpochStats>& history() const { return history_; }
  double best_val_dsc() const { return best_val_; }
  const LossBreakdown& last_breakdown() const { return last_breakdown_; }

  double current_lr() const {
    return lr_at(std::min(global_step_, total_steps_), total_steps_, warmup_steps_,
                 cfg_.profile.optimizer.lr);
  }

  // One optimizer step; returns the training loss.
  StepStats step() {
    const int B = cfg_.profile.optimizer.batch_size;
    const int M = static_cast<int>(cfg_.profile.modalities.size());
    const int K = cfg_.model.num_classes;
    const int H = cfg_.model.input_h, W = cfg_.model.input_w;

    std::vector<size_t> picked(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) picked[static_cast<size_t>(b)] = sample_index(weights_, sampler_rng_.uniform());

    Tensor<float> images({B, M, H, W});
    Tensor<float> targets({B, K, H, W});
    const bool need_dist = cfg_.profile.loss.mode == "vascular" && cfg_.profile.loss.boundary_weight > 0;
    auto dist = need_dist ? std::make_shared<Tensor<float>>(Shape{B, 1, H, W}) : nullptr;
    last_batch_.clear();
    for (int b = 0; b < B; ++b) {
      Sample s = slices_.slices[picked[static_cast<size_t>(b)]];
      augment(s, cfg_.profile.augmentation, augment_rng_);
      std::copy_n(s.image.ptr(), s.image.numel(), images.ptr() + int64_t(b) * M * H * W);
      const int64_t n = int64_t(H) * W;
      for (int k = 0; k < K; ++k)
        for (int64_t i = 0; i < n; ++i)
          targets[((int64_t(b) * K + k) * n) + i] = s.mask[int64_t(k) * n + i] ? 1.0f : 0.0f;
      if (need_dist) {
        // Boundary loss distance maps reflect the augmented target.
        std::vector<uint8_t> cls0(s.mask.data.begin(), s.mask.data.begin() + n);
        auto dm = distance_map_2d(cls0, H, W, slices_.spacing[1], slices_.spacing[2]);
        std::copy_n(dm.values.ptr(), n, dist->ptr() + int64_t(b) * n);
      }
      const auto& e = slices_.entries[picked[static_cast<size_t>(b)]];
      last_batch_.push_back({train_ids_[static_cast<size_t>(e.subject)], e.z});
    }

    Tape<float> tape;
    auto x = tape.input(std::move(images));
    auto heads = net_->forward(tape, x);
    auto loss = ops::total_loss(tape, heads, targets, dist, cfg_.profile.loss, &last_breakdown_);
    const double loss_value = loss->value[0];
    if (!std::isfinite(loss_value)) {
      dump_nan_diagnostics(loss_value);
      throw NumericError("training aborted: non-finite loss at step " +
                         std::to_string(global_step_));
    }
    opt_->zero_grad();
    tape.backward(loss);
    if (cfg_.profile.optimizer.grad_clip > 0) opt_->clip_grad_norm(cfg_.profile.optimizer.grad_clip);
    opt_->step(current_lr(), cfg_.profile.optimizer.weight_decay);
    ++global_step_;
    return {global_step_, loss_value, last_breakdown_};
  }

  // Mean per-class DSC over a subject list with post-processing (tau, s_min).
  double mean_dsc_over(const std::vector<SubjectRecord>& subjects, double tau, int s_min) {
    if (subjects.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0;
    for (const auto& rec : subjects) {
      auto pv = sliding_window_predict(*net_, rec);
      Mask pred = binarize_and_filter(pv, {tau, s_min}, rec.mask.class_names);
      const int K = pred.classes();
      const int64_t n = pred.data.numel() / K;
      double case_dsc = 0;
      for (int k = 0; k < K; ++k) {
        Tensor<uint8_t> p({pred.depth(), pred.height(), pred.width()});
        Tensor<uint8_t> g({pred.depth(), pred.height(), pred.width()});
        std::copy_n(pred.data.ptr() + int64_t(k) * n, n, p.ptr());
        std::copy_n(rec.mask.data.ptr() + int64_t(k) * n, n, g.ptr());
        case_dsc += metrics::dsc(p, g);
      }
      acc += case_dsc / K;
    }
    return acc / static_cast<double>(subjects.size());
  }

  // Full training run with per-epoch validation and best-checkpoint retention.
  void run() {
    std::ofstream log(out_dir_ + "/train_log.jsonl", std::ios::app);
    for (int epoch = 0; epoch < cfg_.profile.optimizer.epochs; ++epoch) {
      double sum = 0;
      for (int s = 0; s < steps_per_epoch_; ++s) sum += step().loss;
      EpochStats es;
      es.epoch = epoch;
      es.mean_loss = sum / steps_per_epoch_;
      es.lr = current_lr();
      if (!val_subjects_.empty()) {
        es.val_dsc = mean_dsc_over(val_subjects_, 0.5, 0);
        if (es.val_dsc > best_val_) {
          best_val_ = es.val_dsc;
          save(out_dir_ + "/checkpoint_best");
        }
      }
      history_.push_back(es);
      nlohmann::json line{{"epoch", es.epoch}, {"mean_loss", es.mean_loss}, {"lr", es.lr}};
      if (!std::isnan(es.val_dsc)) line["val_dsc"] = es.val_dsc;
      log << line.dump() << "\n";
      log.flush();
    }
    save(out_dir_ + "/checkpoint_final");
    if (val_subjects_.empty()) save(out_dir_ + "/checkpoint_best");
  }

  // ---------------------------------------------------------------------
  // Checkpointing: <base>.weights.bin + <base>.manifest.json

  void save(const std::string& base) {
    std::vector<ckpt::NamedTensor> tensors;
    auto params = net_->parameters();
    for (auto* p : params) tensors.push_back({p->name, p->value.shape, p->value.data});
    for (size_t i = 0; i < params.size(); ++i) {
      tensors.push_back({"opt.m." + params[i]->name, params[i]->value.shape, opt_->moments1()[i].data});
      tensors.push_back({"opt.v." + params[i]->name, params[i]->value.shape, opt_->moments2()[i].data});
    }
    ckpt::write_blob(base + ".weights.bin", tensors);

    nlohmann::json manifest;
    manifest["format"] = "lesionseg-checkpoint-v1";
    manifest["config"] = to_json(cfg_);
    manifest["config_hash"] = config_hash(cfg_);
    manifest["global_step"] = global_step_;
    manifest["opt_step"] = opt_->step_count();
    manifest["rng_sampler"] = sampler_rng_.save_state();
    manifest["rng_augment"] = augment_rng_.save_state();
    manifest["best_val_dsc"] = best_val_;
    manifest["weights_hash"] = hex64(ckpt::file_hash(base + ".weights.bin"));
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : history_) {
      nlohmann::json h{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}};
      if (!std::isnan(e.val_dsc)) h["val_dsc"] = e.val_dsc;
      hist.push_back(h);
    }
    manifest["history"] = hist;
    std::ofstream out(base + ".manifest.json");
    if (!out) throw DataError("cannot write manifest: " + base + ".manifest.json");
    out << manifest.dump(2) << "\n";
  }

  void load(const std::string& base) {
    std::ifstream min(base + ".manifest.json");
    if (!min) throw DataError("cannot read manifest: " + base + ".manifest.json");
    nlohmann::json manifest;
    min >> manifest;
    if (manifest.value("config_hash", "") != config_hash(cfg_))
      throw ConfigError("checkpoint was produced with a different configuration");
    global_step_ = manifest.at("global_step").get<int64_t>();
    opt_->set_step_count(manifest.at("opt_step").get<int64_t>());
    sampler_rng_.load_state(manifest.at("rng_sampler").get<std::string>());
    augment_rng_.load_state(manifest.at("rng_augment").get<std::string>());
    best_val_ = manifest.value("best_val_dsc", -1.0);
    history_.clear();
    for (const auto& h : manifest.value("history", nlohmann::json::array())) {
      EpochStats e;
      e.epoch = h.at("epoch").get<int>();
      e.mean_loss = h.at("mean_loss").get<double>();
      e.lr = h.value("lr", 0.0);
      e.val_dsc = h.value("val_dsc", std::numeric_limits<double>::quiet_NaN());
      history_.push_back(e);
    }
    load_weights_into(*net_, *opt_, base + ".weights.bin");
  }

  static void load_weights_into(MultiStreamNet<float>& net, AdamW<float>* opt,
                                const std::string& blob_path) {
    auto tensors = ckpt::read_blob(blob_path);
    std::map<std::string, ckpt::NamedTensor*> by_name;
    for (auto& t : tensors) by_name[t.name] = &t;
    auto params = net.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = by_name.find(params[i]->name);
      if (it == by_name.end()) throw DataError("checkpoint missing tensor " + params[i]->name);
      if (it->second->shape != params[i]->value.shape)
        throw DataError("checkpoint tensor shape mismatch for " + params[i]->name);
      params[i]->value.data = it->second->data;
      if (opt) {
        auto im = by_name.find("opt.m." + params[i]->name);
        auto iv = by_name.find("opt.v." + params[i]->name);
        if (im != by_name.end()) opt->moments1()[i].data = im->second->data;
        if (iv != by_name.end()) opt->moments2()[i].data = iv->second->data;
      }
    }
  }

  static void load_weights_into(MultiStreamNet<float>& net, AdamW<float>& opt,
                                const std::string& blob_path) {
    load_weights_into(net, &opt, blob_path);
  }

 private:
  void dump_nan_diagnostics(double loss_value) {
    nlohmann::json dump;
    dump["step"] = global_step_;
    dump["loss"] = loss_value;
    dump["breakdown"] = {{"main", last_breakdown_.main},
                         {"aux", last_breakdown_.aux},
                         {"lesion", last_breakdown_.lesion}};
    nlohmann::json batch = nlohmann::json::array();
    for (const auto& [id, z] : last_batch_) batch.push_back({{"subject", id}, {"slice", z}});
    dump["batch"] = batch;
    std::ofstream out(out_dir_ + "/nan_dump.json");
    out << dump.dump(2) << "\n";
  }

  ExperimentConfig cfg_;
  std::string out_dir_;
  Rng init_rng_, sampler_rng_, augment_rng_;
  std::unique_ptr<MultiStreamNet<float>> net_;
  std::unique_ptr<AdamW<float>> opt_;
  SliceDataset slices_;
  std::vector<double> weights_;
  std::vector<std::string> train_ids_;
  std::vector<SubjectRecord> val_subjects_;
  std::vector<std::pair<std::string, int>> last_batch_;
  LossBreakdown last_breakdown_;
  std::vector<EpochStats> history_;
  int steps_per_epoch_ = 1;
  int64_t total_steps_ = 1;
  int64_t warmup_steps_ = 0;
  int64_t global_step_ = 0;
  double best_val_ = -1.0;
};

}  // namespace lesionseg
