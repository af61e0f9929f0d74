#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/components.hpp"
#include "lesionseg/infer/sliding_window.hpp"
#include "lesionseg/metrics.hpp"
#include "lesionseg/report.hpp"

namespace lesionseg {

inline constexpr const char* kValidationProvenance = "validation-only";

struct PostprocessParams {
  double tau = 0.5;
  int s_min = 0;
};

// Threshold at tau (inclusive) and drop 3-D connected components smaller than
// s_min voxels, per class.
inline Mask binarize_and_filter(const ProbabilityVolume& pv, const PostprocessParams& params,
                                const std::vector<std::string>& class_names, bool conn26 = true) {
  const int K = pv.probs.dim(0), D = pv.probs.dim(1), H = pv.probs.dim(2), W = pv.probs.dim(3);
  Mask out;
  out.class_names = class_names;
  out.data = Tensor<uint8_t>({K, D, H, W});
  const int64_t n = int64_t(D) * H * W;
  for (int k = 0; k < K; ++k) {
    const float* p = pv.probs.ptr() + int64_t(k) * n;
    uint8_t* m = out.data.ptr() + int64_t(k) * n;
    for (int64_t i = 0; i < n; ++i) m[i] = p[i] >= static_cast<float>(params.tau) ? 1 : 0;
    if (params.s_min > 1) {
      auto cc = label_components(D, H, W, [&](int64_t i) { return m[i] != 0; }, conn26);
      for (int64_t i = 0; i < n; ++i)
        if (m[i] && cc.sizes[static_cast<size_t>(cc.label[static_cast<size_t>(i)] - 1)] <
                        static_cast<int64_t>(params.s_min))
          m[i] = 0;
    }
  }
  return out;
}

struct GridCell {
  double tau = 0;
  int s_min = 0;
  double mean_dsc = 0;
};

struct TunedParams {
  PostprocessParams params;
  double mean_dsc = 0.0;
  std::vector<GridCell> grid;
  std::vector<std::string> val_subjects;
  std::string provenance = kValidationProvenance;
};

inline std::vector<double> default_tau_grid(double step = 0.05) {
  std::vector<double> g;
  for (int i = 0;; ++i) {
    const double tau = 0.10 + i * step;
    if (tau > 0.80 + 1e-9) break;
    g.push_back(tau);
  }
  return g;
}

inline std::vector<int> default_smin_grid() {
  std::vector<int> g;
  for (int s = 2; s <= 15; ++s) g.push_back(s);
  return g;
}

// Exhaustive grid search maximizing mean validation DSC (strict-improvement
// update: ties keep the first-visited cell). Only validation-tagged
// probability volumes are accepted.
inline TunedParams tune_params(const std::vector<ProbabilityVolume>& val_probs,
                               const std::vector<Mask>& val_gt,
                               const std::vector<double>& tau_grid = default_tau_grid(),
                               const std::vector<int>& smin_grid = default_smin_grid(),
                               bool conn26 = true) {
  if (val_probs.empty()) throw DataError("tune_params: need at least one validation case");
  if (val_probs.size() != val_gt.size()) throw DataError("tune_params: probs/gt size mismatch");
  if (tau_grid.empty() || smin_grid.empty()) throw ConfigError("tune_params: empty parameter grid");
  for (const auto& pv : val_probs)
    if (pv.split != "val")
      throw DataError("tune_params: leakage guard rejected case '" + pv.case_id +
                      "' tagged split='" + pv.split + "' (validation data only)");

  TunedParams result;
  result.params = {0.5, 0};
  double best = 0.0;
  const auto& classes = val_gt[0].class_names;
  for (double tau : tau_grid)
    for (int s_min : smin_grid) {
      double acc = 0;
      for (size_t i = 0; i < val_probs.size(); ++i) {
        Mask pred = binarize_and_filter(val_probs[i], {tau, s_min}, classes, conn26);
        const int K = pred.classes();
        const int64_t n = pred.data.numel() / K;
        double case_dsc = 0;
        for (int k = 0; k < K; ++k) {
          Tensor<uint8_t> p({pred.depth(), pred.height(), pred.width()});
          Tensor<uint8_t> g({pred.depth(), pred.height(), pred.width()});
          std::copy_n(pred.data.ptr() + int64_t(k) * n, n, p.ptr());
          std::copy_n(val_gt[i].data.ptr() + int64_t(k) * n, n, g.ptr());
          case_dsc += metrics::dsc(p, g);
        }
        acc += case_dsc / K;
      }
      const double mean = acc / static_cast<double>(val_probs.size());
      result.grid.push_back({tau, s_min, mean});
      if (mean > best) {
        best = mean;
        result.params = {tau, s_min};
      }
    }
  result.mean_dsc = best;
  for (const auto& pv : val_probs) result.val_subjects.push_back(pv.case_id);
  return result;
}

inline nlohmann::json to_json(const TunedParams& t) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& c : t.grid)
    grid.push_back({{"tau", c.tau}, {"s_min", c.s_min}, {"mean_dsc", c.mean_dsc}});
  return nlohmann::json{{"tau", t.params.tau},
                        {"s_min", t.params.s_min},
                        {"mean_dsc", t.mean_dsc},
                        {"grid_scores", grid},
                        {"val_subjects", t.val_subjects},
                        {"provenance", t.provenance}};
}

inline TunedParams tuned_params_from_json(const nlohmann::json& j) {
  TunedParams t;
  t.params.tau = j.at("tau").get<double>();
  t.params.s_min = j.at("s_min").get<int>();
  t.mean_dsc = j.value("mean_dsc", 0.0);
  if (j.contains("grid_scores"))
    for (const auto& c : j.at("grid_scores"))
      t.grid.push_back({c.at("tau").get<double>(), c.at("s_min").get<int>(),
                        c.at("mean_dsc").get<double>()});
  if (j.contains("val_subjects")) t.val_subjects = j.at("val_subjects").get<std::vector<std::string>>();
  t.provenance = j.value("provenance", "");
  return t;
}

// Stage-2 evaluation: refuses to run unless the parameters carry validation
// provenance and the test cases are disjoint from the tuning cohort.
inline CohortReport evaluate_cases(const std::vector<ProbabilityVolume>& test_probs,
                                   const std::vector<Mask>& test_gt, const TunedParams& tuned,
                                   const std::vector<std::string>& class_names,
                                   bool conn26 = true) {
  if (tuned.provenance != kValidationProvenance)
    throw DataError("evaluate: postprocess parameters lack validation-only provenance; refusing to run");
  for (const auto& pv : test_probs)
    for (const auto& vid : tuned.val_subjects)
      if (pv.case_id == vid)
        throw DataError("evaluate: case '" + pv.case_id + "' was used for tuning; refusing to run");
  if (test_probs.size() != test_gt.size()) throw DataError("evaluate: probs/gt size mismatch");
  std::vector<CaseMetrics> cases;
  for (size_t i = 0; i < test_probs.size(); ++i) {
    Mask pred = binarize_and_filter(test_probs[i], tuned.params, class_names, conn26);
    cases.push_back(compute_case_metrics(test_probs[i].case_id, pred, test_gt[i],
                                         test_probs[i].spacing));
  }
  return aggregate(std::move(cases), class_names);
}

}  // namespace lesionseg
