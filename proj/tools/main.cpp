// lesionseg: multi-modal brain-lesion segmentation experiments on the
// command line. Subcommands wire the library into reproducible runs:
//
//   phantom   generate a synthetic dataset
//   train     fit a model on the train split
//   tune      grid-search (tau, S_min) on the validation split
//   predict   write post-processed masks for a split
//   evaluate  per-case and cohort metrics, optional baseline significance
//   overlay   color-coded error overlays as PNG slices
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lesionseg/config.hpp"
#include "lesionseg/data/dataset.hpp"
#include "lesionseg/infer/postprocess.hpp"
#include "lesionseg/infer/sliding_window.hpp"
#include "lesionseg/io/png.hpp"
#include "lesionseg/report.hpp"
#include "lesionseg/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace lesionseg;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One manifest per output directory; content hash covers the listed
// artifacts (timestamps deliberately excluded).
struct ManifestWriter {
  std::string out_dir;
  json doc;

  ManifestWriter(std::string dir, const std::string& command, json arguments)
      : out_dir(std::move(dir)) {
    fs::create_directories(out_dir);
    doc["command"] = command;
    doc["arguments"] = std::move(arguments);
    doc["tool_version"] = kVersion;
    doc["started_utc"] = utc_now();
  }

  void finish(const std::vector<std::string>& outputs) {
    doc["finished_utc"] = utc_now();
    doc["outputs"] = outputs;
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& rel : outputs) {
      std::ifstream in(out_dir + "/" + rel, std::ios::binary);
      char buf[1 << 16];
      while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
      }
    }
    doc["content_hash"] = hex64(h);
    std::ofstream out(out_dir + "/run_manifest.json");
    out << doc.dump(2) << "\n";
  }
};

struct LoadedModel {
  ExperimentConfig cfg;
  std::unique_ptr<MultiStreamNet<float>> net;
};

LoadedModel load_model(const std::string& checkpoint_base) {
  std::ifstream min(checkpoint_base + ".manifest.json");
  if (!min) throw DataError("cannot read checkpoint manifest: " + checkpoint_base + ".manifest.json");
  json manifest;
  min >> manifest;
  LoadedModel m;
  m.cfg = experiment_from_json(manifest.at("config"));
  Rng rng(m.cfg.profile.optimizer.seed);
  m.net = std::make_unique<MultiStreamNet<float>>(m.cfg.model, m.cfg.profile.modalities, rng);
  Trainer::load_weights_into(*m.net, nullptr, checkpoint_base + ".weights.bin");
  return m;
}

Volume load_volume_any(const std::string& path) {
  if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) {
    auto img = nifti::read(path);
    Volume v;
    v.data = Tensor<float>({1, img.data.dim(0), img.data.dim(1), img.data.dim(2)}, img.data.data);
    v.spacing = img.spacing;
    v.modality_names = {"FLAIR"};
    return v;
  }
  return load_volume_raw(path);
}

Mask load_mask_any(const std::string& path) {
  if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) {
    auto img = nifti::read(path);
    return mask_from_labelmap(img.data, {"lesion"});
  }
  return load_mask_raw(path);
}

void require_modalities_match(const Dataset& ds, const TaskProfile& profile) {
  if (ds.modalities != profile.modalities) {
    std::string want, got;
    for (const auto& m : profile.modalities) want += m + " ";
    for (const auto& m : ds.modalities) got += m + " ";
    throw DataError("dataset modalities [" + got + "] do not match profile [" + want + "]");
  }
}

// ---------------------------------------------------------------------------

int cmd_phantom(const std::string& spec_path, const std::string& out_dir) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot open phantom spec: " + spec_path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("phantom spec parse error: " + std::string(e.what()));
  }
  int n_train = 0, n_val = 0, n_test = 0;
  json spec_json = j;
  if (spec_json.contains("num_train")) {
    n_train = spec_json.at("num_train").get<int>();
    n_val = spec_json.value("num_val", 0);
    n_test = spec_json.value("num_test", 0);
    spec_json.erase("num_train");
    if (spec_json.contains("num_val")) spec_json.erase("num_val");
    if (spec_json.contains("num_test")) spec_json.erase("num_test");
    spec_json["num_subjects"] = n_train + n_val + n_test;
  }
  PhantomSpec spec = phantom_spec_from_json(spec_json);
  if (n_train == 0) n_train = spec.num_subjects;

  ManifestWriter manifest(out_dir, "phantom", {{"spec", spec_path}});
  auto subjects = generate_phantom(spec);
  std::vector<std::string> splits;
  for (int i = 0; i < spec.num_subjects; ++i)
    splits.push_back(i < n_train ? "train" : (i < n_train + n_val ? "val" : "test"));
  const std::vector<std::string> classes =
      spec.nested_classes ? std::vector<std::string>{"WT", "TC", "ET"}
                          : std::vector<std::string>{"lesion"};
  save_dataset(out_dir, subjects, classes, splits, &spec);
  manifest.finish({"dataset.json"});
  std::cout << "phantom: wrote " << subjects.size() << " subjects to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int64_t seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed_override >= 0) cfg.profile.optimizer.seed = static_cast<uint64_t>(seed_override);
  auto violations = validate_config(cfg.model, cfg.profile);
  if (!violations.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
  Dataset ds = load_dataset(data_dir);
  require_modalities_match(ds, cfg.profile);

  ManifestWriter manifest(out_dir, "train",
                          {{"config", config_path},
                           {"data", data_dir},
                           {"seed", cfg.profile.optimizer.seed},
                           {"config_hash", config_hash(cfg)}});
  Trainer trainer(cfg, ds, out_dir);
  trainer.run();
  manifest.finish({"checkpoint_best.weights.bin", "checkpoint_final.weights.bin", "train_log.jsonl"});
  std::cout << "train: " << trainer.global_step() << " steps, best val DSC "
            << trainer.best_val_dsc() << "\n";
  return 0;
}

int cmd_tune(const std::string& checkpoint, const std::string& val_data, const std::string& out_dir) {
  LoadedModel m = load_model(checkpoint);
  Dataset ds = load_dataset(val_data);
  require_modalities_match(ds, m.cfg.profile);
  auto val = ds.split("val");
  if (val.empty()) throw DataError("tune: dataset has no subjects in the 'val' split");

  ManifestWriter manifest(out_dir, "tune", {{"checkpoint", checkpoint}, {"val_data", val_data}});
  std::vector<ProbabilityVolume> probs;
  std::vector<Mask> gts;
  for (const auto* rec : val) {
    probs.push_back(sliding_window_predict(*m.net, *rec));
    gts.push_back(rec->mask);
  }
  TunedParams tuned = tune_params(probs, gts);
  std::ofstream out(out_dir + "/postprocess.json");
  out << to_json(tuned).dump(2) << "\n";
  out.close();
  manifest.finish({"postprocess.json"});
  std::cout << "tune: tau=" << tuned.params.tau << " s_min=" << tuned.params.s_min
            << " mean_dsc=" << tuned.mean_dsc << " over " << val.size() << " validation cases\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& params_path,
                const std::string& in_dir, const std::string& out_dir, const std::string& split) {
  LoadedModel m = load_model(checkpoint);
  std::ifstream pin(params_path);
  if (!pin) throw DataError("cannot open postprocess params: " + params_path);
  json pj;
  pin >> pj;
  TunedParams tuned = tuned_params_from_json(pj);

  Dataset ds = load_dataset(in_dir, /*require_masks=*/false);
  require_modalities_match(ds, m.cfg.profile);
  auto subjects = ds.split(split);
  if (subjects.empty()) throw DataError("predict: no subjects in split '" + split + "'");

  ManifestWriter manifest(out_dir, "predict",
                          {{"checkpoint", checkpoint},
                           {"params", params_path},
                           {"in", in_dir},
                           {"split", split}});
  json cases = json::array();
  std::vector<std::string> outputs;
  const auto classes = m.cfg.profile.class_names;
  for (const auto* rec : subjects) {
    auto pv = sliding_window_predict(*m.net, *rec);
    Mask pred = binarize_and_filter(pv, tuned.params, classes);
    const std::string base = rec->id + "_pred";
    save_mask_raw(pred, out_dir + "/" + base);
    json entry{{"id", rec->id}, {"mask_base", base}, {"spacing", pv.spacing}, {"split", rec->split}};
    if (rec->has_nifti_header) {
      // Mirror input geometry for per-class NIfTI masks.
      const int64_t n = pred.data.numel() / pred.classes();
      for (int k = 0; k < pred.classes(); ++k) {
        Tensor<uint8_t> ch({pred.depth(), pred.height(), pred.width()});
        std::copy_n(pred.data.ptr() + int64_t(k) * n, n, ch.ptr());
        const std::string nii = rec->id + "_pred_" + classes[static_cast<size_t>(k)] + ".nii.gz";
        nifti::write_mask(out_dir + "/" + nii, ch, pv.spacing, &rec->nifti_header);
        outputs.push_back(nii);
      }
    }
    cases.push_back(entry);
    outputs.push_back(base + ".bin");
    outputs.push_back(base + ".json");
  }
  json index{{"format", "lesionseg-predictions-v1"},
             {"classes", classes},
             {"split", split},
             {"params", to_json(tuned)},
             {"cases", cases}};
  std::ofstream out(out_dir + "/predictions.json");
  out << index.dump(2) << "\n";
  out.close();
  outputs.insert(outputs.begin(), "predictions.json");
  manifest.finish(outputs);
  std::cout << "predict: wrote " << cases.size() << " masks to " << out_dir << "\n";
  return 0;
}

CohortReport report_from_predictions(const std::string& pred_dir, const Dataset& gt,
                                     bool enforce_guard) {
  std::ifstream pin(pred_dir + "/predictions.json");
  if (!pin) throw DataError("cannot open " + pred_dir + "/predictions.json");
  json index;
  pin >> index;
  TunedParams tuned = tuned_params_from_json(index.at("params"));
  const auto classes = index.at("classes").get<std::vector<std::string>>();
  if (enforce_guard) {
    if (tuned.provenance != kValidationProvenance)
      throw DataError("evaluate: predictions lack validation-only parameter provenance; refusing to run");
    for (const auto& c : index.at("cases"))
      for (const auto& vid : tuned.val_subjects)
        if (c.at("id").get<std::string>() == vid)
          throw DataError("evaluate: case '" + vid + "' was used for tuning; refusing to run");
  }
  std::map<std::string, const SubjectRecord*> by_id;
  for (const auto& s : gt.subjects) by_id[s.id] = &s;
  std::vector<CaseMetrics> cases;
  for (const auto& c : index.at("cases")) {
    const std::string id = c.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("evaluate: ground truth for case '" + id + "' not found");
    Mask pred = load_mask_raw(pred_dir + "/" + c.at("mask_base").get<std::string>());
    if (pred.data.shape != it->second->mask.data.shape)
      throw DataError("evaluate: geometry mismatch for case '" + id + "': prediction " +
                      shape_str(pred.data.shape) + " vs ground truth " +
                      shape_str(it->second->mask.data.shape));
    cases.push_back(compute_case_metrics(id, pred, it->second->mask, it->second->volume.spacing));
  }
  return aggregate(std::move(cases), classes);
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_dir,
                 const std::string& baseline_dir) {
  Dataset gt = load_dataset(gt_dir);
  ManifestWriter manifest(out_dir, "evaluate",
                          {{"pred", pred_dir}, {"gt", gt_dir}, {"baseline", baseline_dir}});
  CohortReport report = report_from_predictions(pred_dir, gt, /*enforce_guard=*/true);
  if (!baseline_dir.empty()) {
    CohortReport base = report_from_predictions(baseline_dir, gt, /*enforce_guard=*/false);
    attach_significance(report, base);
  }
  write_report(report, out_dir);
  manifest.finish({"metrics.csv", "report.json"});
  for (const auto& [name, sums] : report.summaries) {
    std::cout << name << ":";
    for (size_t k = 0; k < sums.size(); ++k)
      std::cout << " " << report.class_names[k] << "=" << sums[k].mean << "±" << sums[k].sd;
    std::cout << "\n";
  }
  return 0;
}

int cmd_overlay(const std::string& image_path, const std::string& pred_path,
                const std::string& gt_path, const std::string& out_dir) {
  Volume vol = load_volume_any(image_path);
  Mask pred = load_mask_any(pred_path);
  Mask gt = load_mask_any(gt_path);
  if (pred.data.shape != gt.data.shape)
    throw DataError("overlay: prediction and ground-truth geometry differ");
  const int D = gt.depth(), H = gt.height(), W = gt.width();
  if (vol.depth() != D || vol.height() != H || vol.width() != W)
    throw DataError("overlay: image and mask geometry differ");

  ManifestWriter manifest(out_dir, "overlay",
                          {{"image", image_path}, {"pred", pred_path}, {"gt", gt_path}});
  std::vector<std::string> outputs;
  const int64_t n = int64_t(D) * H * W;
  for (int z = 0; z < D; ++z) {
    std::vector<uint8_t> rgb(static_cast<size_t>(H) * W * 3, 0);
    // Grayscale background from modality 0, normalized per slice, capped at
    // 200 so the pure overlay colors stay unambiguous.
    float lo = 1e30f, hi = -1e30f;
    for (int64_t i = 0; i < int64_t(H) * W; ++i) {
      const float v = vol.data[int64_t(z) * H * W + i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float range = hi > lo ? hi - lo : 1.0f;
    for (int64_t i = 0; i < int64_t(H) * W; ++i) {
      const float v = vol.data[int64_t(z) * H * W + i];
      const auto g = static_cast<uint8_t>(200.0f * (v - lo) / range);
      rgb[static_cast<size_t>(i) * 3] = g;
      rgb[static_cast<size_t>(i) * 3 + 1] = g;
      rgb[static_cast<size_t>(i) * 3 + 2] = g;
      const bool p = pred.data[int64_t(z) * H * W + i] != 0;     // class 0
      const bool t = gt.data[int64_t(z) * H * W + i] != 0;
      (void)n;
      if (p && t) {  // true positive: green
        rgb[static_cast<size_t>(i) * 3] = 0;
        rgb[static_cast<size_t>(i) * 3 + 1] = 255;
        rgb[static_cast<size_t>(i) * 3 + 2] = 0;
      } else if (!p && t) {  // false negative / missed lesion: red
        rgb[static_cast<size_t>(i) * 3] = 255;
        rgb[static_cast<size_t>(i) * 3 + 1] = 0;
        rgb[static_cast<size_t>(i) * 3 + 2] = 0;
      } else if (p && !t) {  // false positive: blue
        rgb[static_cast<size_t>(i) * 3] = 0;
        rgb[static_cast<size_t>(i) * 3 + 1] = 0;
        rgb[static_cast<size_t>(i) * 3 + 2] = 255;
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%03d.png", z);
    png::write_rgb(out_dir + "/" + name, rgb, W, H);
    outputs.push_back(name);
  }
  manifest.finish(outputs);
  std::cout << "overlay: wrote " << D << " slices to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-modal brain lesion segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, params_path, in_dir, split = "test";
  std::string pred_dir, gt_dir, baseline_dir, spec_path, image_path, pred_path, gt_path, val_data;
  int64_t seed = -1;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "override the config seed");

  auto* tune = app.add_subcommand("tune", "grid-search postprocessing parameters");
  tune->add_option("--checkpoint", checkpoint, "checkpoint base path")->required();
  tune->add_option("--val-data", val_data, "dataset directory with a 'val' split")->required();
  tune->add_option("--out", out_dir, "output directory")->required();

  auto* predict = app.add_subcommand("predict", "write post-processed masks");
  predict->add_option("--checkpoint", checkpoint, "checkpoint base path")->required();
  predict->add_option("--params", params_path, "postprocess.json from tune")->required();
  predict->add_option("--in", in_dir, "dataset directory")->required();
  predict->add_option("--out", out_dir, "output directory")->required();
  predict->add_option("--split", split, "split to predict (default: test)");

  auto* evaluate = app.add_subcommand("evaluate", "compute cohort metrics");
  evaluate->add_option("--pred", pred_dir, "prediction directory from predict")->required();
  evaluate->add_option("--gt", gt_dir, "dataset directory with ground truth")->required();
  evaluate->add_option("--out", out_dir, "output directory")->required();
  evaluate->add_option("--baseline", baseline_dir, "baseline prediction directory");

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
  phantom->add_option("--spec", spec_path, "phantom spec JSON")->required();
  phantom->add_option("--out", out_dir, "output directory")->required();

  auto* overlay = app.add_subcommand("overlay", "render error overlays");
  overlay->add_option("--image", image_path, "volume (raw base or .nii/.nii.gz)")->required();
  overlay->add_option("--pred", pred_path, "prediction mask")->required();
  overlay->add_option("--gt", gt_path, "ground-truth mask")->required();
  overlay->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(config_path, data_dir, out_dir, seed);
    if (*tune) return cmd_tune(checkpoint, val_data, out_dir);
    if (*predict) return cmd_predict(checkpoint, params_path, in_dir, out_dir, split);
    if (*evaluate) return cmd_evaluate(pred_dir, gt_dir, out_dir, baseline_dir);
    if (*phantom) return cmd_phantom(spec_path, out_dir);
    if (*overlay) return cmd_overlay(image_path, pred_path, gt_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
