#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/metrics.hpp"
#include "lesionseg/volume.hpp"

namespace lesionseg {

inline constexpr const char* kReportSchemaVersion = "lesionseg-report-v1";

struct ClassMetrics {
  double dsc = 0;
  double hd95 = 0;
  bool hd95_sentinel = false;
  double avd_percent = 0;
  bool avd_sentinel = false;
  double lesion_recall = 0;
  double lesion_f1 = 0;
  metrics::LesionCounts counts;
};

struct CaseMetrics {
  std::string case_id;
  std::vector<ClassMetrics> per_class;
};

// Per-class metrics for one case; masks are [K,D,H,W] with matching classes.
inline CaseMetrics compute_case_metrics(const std::string& case_id, const Mask& pred,
                                        const Mask& gt, const std::array<double, 3>& spacing) {
  if (pred.data.shape != gt.data.shape) throw DataError("metrics: mask geometry mismatch");
  CaseMetrics cm;
  cm.case_id = case_id;
  const int K = gt.classes();
  const int64_t n = gt.data.numel() / K;
  for (int k = 0; k < K; ++k) {
    Tensor<uint8_t> p({gt.depth(), gt.height(), gt.width()});
    Tensor<uint8_t> g({gt.depth(), gt.height(), gt.width()});
    std::copy_n(pred.data.ptr() + int64_t(k) * n, n, p.ptr());
    std::copy_n(gt.data.ptr() + int64_t(k) * n, n, g.ptr());
    ClassMetrics m;
    m.dsc = metrics::dsc(p, g);
    m.hd95 = metrics::hd95(p, g, spacing, &m.hd95_sentinel);
    m.avd_percent = metrics::avd_percent(p, g, &m.avd_sentinel);
    m.counts = metrics::lesion_match(p, g);
    m.lesion_recall = metrics::lesion_recall(m.counts);
    m.lesion_f1 = metrics::lesion_f1(m.counts);
    cm.per_class.push_back(m);
  }
  return cm;
}

struct MetricSummary {
  double mean = 0;
  double sd = 0;  // unbiased (n-1); 0 when a single value is present
  int n = 0;
  int excluded = 0;  // sentinel-flagged cases left out of the mean
};

struct SignificanceEntry {
  std::string metric;
  int class_index = 0;
  metrics::TTestResult test;
  int pairs = 0;
};

struct CohortReport {
  std::vector<std::string> class_names;
  std::vector<CaseMetrics> cases;  // sorted by case id
  // metric name -> per-class summaries
  std::map<std::string, std::vector<MetricSummary>> summaries;
  std::vector<SignificanceEntry> significance;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& values, int excluded) {
  MetricSummary s;
  s.n = static_cast<int>(values.size());
  s.excluded = excluded;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace detail

inline CohortReport aggregate(std::vector<CaseMetrics> cases, std::vector<std::string> class_names) {
  if (cases.empty()) throw DataError("aggregate: no cases");
  std::sort(cases.begin(), cases.end(),
            [](const CaseMetrics& a, const CaseMetrics& b) { return a.case_id < b.case_id; });
  CohortReport r;
  r.class_names = std::move(class_names);
  r.cases = std::move(cases);
  const int K = static_cast<int>(r.class_names.size());
  auto collect = [&](const char* name, auto getter, auto excluded_flag) {
    std::vector<MetricSummary> per_class;
    for (int k = 0; k < K; ++k) {
      std::vector<double> vals;
      int excluded = 0;
      for (const auto& c : r.cases) {
        const auto& m = c.per_class[static_cast<size_t>(k)];
        if (excluded_flag(m))
          ++excluded;
        else
          vals.push_back(getter(m));
      }
      per_class.push_back(detail::summarize(vals, excluded));
    }
    r.summaries[name] = std::move(per_class);
  };
  auto never = [](const ClassMetrics&) { return false; };
  collect("dsc", [](const ClassMetrics& m) { return m.dsc; }, never);
  collect("hd95", [](const ClassMetrics& m) { return m.hd95; },
          [](const ClassMetrics& m) { return m.hd95_sentinel; });
  collect("avd_percent", [](const ClassMetrics& m) { return m.avd_percent; },
          [](const ClassMetrics& m) { return m.avd_sentinel; });
  collect("lesion_recall", [](const ClassMetrics& m) { return m.lesion_recall; }, never);
  collect("lesion_f1", [](const ClassMetrics& m) { return m.lesion_f1; }, never);
  return r;
}

// Paired significance tests against a baseline run over the shared case set.
inline void attach_significance(CohortReport& report, const CohortReport& baseline) {
  const int K = static_cast<int>(report.class_names.size());
  std::map<std::string, const CaseMetrics*> base_by_id;
  for (const auto& c : baseline.cases) base_by_id[c.case_id] = &c;
  struct Spec {
    const char* name;
    double (*get)(const ClassMetrics&);
    bool (*skip)(const ClassMetrics&);
  };
  const Spec specs[] = {
      {"dsc", [](const ClassMetrics& m) { return m.dsc; },
       [](const ClassMetrics&) { return false; }},
      {"hd95", [](const ClassMetrics& m) { return m.hd95; },
       [](const ClassMetrics& m) { return m.hd95_sentinel; }},
      {"avd_percent", [](const ClassMetrics& m) { return m.avd_percent; },
       [](const ClassMetrics& m) { return m.avd_sentinel; }},
      {"lesion_recall", [](const ClassMetrics& m) { return m.lesion_recall; },
       [](const ClassMetrics&) { return false; }},
      {"lesion_f1", [](const ClassMetrics& m) { return m.lesion_f1; },
       [](const ClassMetrics&) { return false; }},
  };
  for (const auto& spec : specs)
    for (int k = 0; k < K; ++k) {
      std::vector<double> a, b;
      for (const auto& c : report.cases) {
        auto it = base_by_id.find(c.case_id);
        if (it == base_by_id.end()) continue;
        const auto& mine = c.per_class[static_cast<size_t>(k)];
        const auto& theirs = it->second->per_class[static_cast<size_t>(k)];
        if (spec.skip(mine) || spec.skip(theirs)) continue;
        a.push_back(spec.get(mine));
        b.push_back(spec.get(theirs));
      }
      if (a.size() < 2) continue;
      SignificanceEntry e;
      e.metric = spec.name;
      e.class_index = k;
      e.pairs = static_cast<int>(a.size());
      e.test = metrics::paired_t_test(a, b);
      report.significance.push_back(e);
    }
}

// ---------------------------------------------------------------------------
// Serialization (deterministic bytes for fixed inputs)

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace detail

inline std::string report_csv(const CohortReport& r) {
  std::string out =
      "case_id,class,dsc,hd95,hd95_sentinel,avd_percent,avd_sentinel,lesion_recall,lesion_f1,"
      "lesion_tp,lesion_fp,lesion_fn\n";
  for (const auto& c : r.cases)
    for (size_t k = 0; k < r.class_names.size(); ++k) {
      const auto& m = c.per_class[k];
      out += c.case_id + "," + r.class_names[k] + "," + detail::fmt(m.dsc) + "," +
             detail::fmt(m.hd95) + "," + (m.hd95_sentinel ? "1" : "0") + "," +
             (m.avd_sentinel ? "nan" : detail::fmt(m.avd_percent)) + "," +
             (m.avd_sentinel ? "1" : "0") + "," + detail::fmt(m.lesion_recall) + "," +
             detail::fmt(m.lesion_f1) + "," + std::to_string(m.counts.tp) + "," +
             std::to_string(m.counts.fp) + "," + std::to_string(m.counts.fn) + "\n";
    }
  return out;
}

inline nlohmann::json report_json(const CohortReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["classes"] = r.class_names;
  j["n_cases"] = r.cases.size();
  nlohmann::json summaries = nlohmann::json::object();
  for (const auto& [name, per_class] : r.summaries) {
    nlohmann::json arr = nlohmann::json::array();
    for (size_t k = 0; k < per_class.size(); ++k) {
      const auto& s = per_class[k];
      arr.push_back({{"class", r.class_names[k]},
                     {"mean", s.mean},
                     {"sd", s.sd},
                     {"n", s.n},
                     {"excluded_sentinel", s.excluded},
                     {"single_case", s.n == 1}});
    }
    summaries[name] = arr;
  }
  j["summaries"] = summaries;
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    nlohmann::json pc = nlohmann::json::array();
    for (size_t k = 0; k < c.per_class.size(); ++k) {
      const auto& m = c.per_class[k];
      nlohmann::json e{{"class", r.class_names[k]},
                       {"dsc", m.dsc},
                       {"hd95", m.hd95},
                       {"hd95_sentinel", m.hd95_sentinel},
                       {"avd_sentinel", m.avd_sentinel},
                       {"lesion_recall", m.lesion_recall},
                       {"lesion_f1", m.lesion_f1},
                       {"lesion_tp", m.counts.tp},
                       {"lesion_fp", m.counts.fp},
                       {"lesion_fn", m.counts.fn}};
      if (m.avd_sentinel)
        e["avd_percent"] = nullptr;
      else
        e["avd_percent"] = m.avd_percent;
      pc.push_back(e);
    }
    cases.push_back({{"case_id", c.case_id}, {"metrics", pc}});
  }
  j["cases"] = cases;
  if (!r.significance.empty()) {
    nlohmann::json sig = nlohmann::json::array();
    for (const auto& e : r.significance)
      sig.push_back({{"metric", e.metric},
                     {"class", r.class_names[static_cast<size_t>(e.class_index)]},
                     {"t", e.test.t},
                     {"p", e.test.p},
                     {"degenerate", e.test.degenerate},
                     {"pairs", e.pairs}});
    j["significance"] = sig;
  }
  return j;
}

inline void write_report(const CohortReport& r, const std::string& out_dir) {
  std::ofstream csv(out_dir + "/metrics.csv");
  if (!csv) throw DataError("cannot write " + out_dir + "/metrics.csv");
  csv << report_csv(r);
  std::ofstream js(out_dir + "/report.json");
  if (!js) throw DataError("cannot write " + out_dir + "/report.json");
  js << report_json(r).dump(2) << "\n";
}

}  // namespace lesionseg
