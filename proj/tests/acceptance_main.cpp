// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one [PASS]/[FAIL] line per criterion. Exit code 0 iff all pass.
//
// Usage: acceptance_tests [--cli <path-to-lesionseg-binary>] [--workdir <dir>]

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <map>
#include <string>
#include <vector>

#include "lesionseg/config.hpp"
#include "lesionseg/data/dataset.hpp"
#include "lesionseg/infer/postprocess.hpp"
#include "lesionseg/losses.hpp"
#include "lesionseg/metrics.hpp"
#include "lesionseg/model/network.hpp"
#include "lesionseg/train/checkpoint.hpp"
#include "lesionseg/train/trainer.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace lesionseg;
using nlohmann::json;

namespace {

std::string g_cli = "tools/lesionseg";
std::string g_workdir = "/tmp/lesionseg_acceptance";

struct Check {
  std::ostringstream log;
  bool ok = true;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      log << "    FAILED: " << what << "\n";
    }
  }
  template <typename A, typename B>
  void require_eq(const A& a, const B& b, const std::string& what) {
    require(a == b, what);
  }
  void require_near(double a, double b, double tol, const std::string& what) {
    require(std::abs(a - b) <= tol, what + " (|" + std::to_string(a) + " - " + std::to_string(b) +
                                        "| > " + std::to_string(tol) + ")");
  }
  void require_le(double a, double b, const std::string& what) {
    require(a <= b, what + " (" + std::to_string(a) + " > " + std::to_string(b) + ")");
  }
  void require_ge(double a, double b, const std::string& what) {
    require(a >= b, what + " (" + std::to_string(a) + " < " + std::to_string(b) + ")");
  }
};

int run_cli(const std::string& args, const std::string& logfile) {
  const std::string cmd = g_cli + " " + args + " >" + logfile + " 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Tensor<uint8_t> random_mask(int D, int H, int W, uint64_t seed, double p) {
  Rng rng(seed);
  Tensor<uint8_t> m({D, H, W});
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = rng.bernoulli(p) ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------

void criterion1_metric_oracles(Check& c) {
  Rng geom(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int D = 3 + int(geom.uniform_index(14));
    const int H = 3 + int(geom.uniform_index(14));
    const int W = 3 + int(geom.uniform_index(14));
    auto pred = random_mask(D, H, W, 9000 + trial, 0.18);
    auto gt = random_mask(D, H, W, 9500 + trial, 0.18);
    const std::array<double, 3> sp = {1.0, 0.5, 1.25};

    // DSC: ratio within 1e-9 of the brute-force value.
    c.require_near(metrics::dsc(pred, gt), oracle::dsc(pred.data, gt.data), 1e-9, "dsc oracle");

    // AVD: counts exact, ratio within 1e-9.
    int64_t vp = 0, vg = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
      vp += pred[i];
      vg += gt[i];
    }
    bool flag = false;
    const double avd = metrics::avd_percent(pred, gt, &flag);
    if (vg == 0) {
      c.require(flag, "avd sentinel on empty gt");
    } else {
      c.require_near(avd, std::abs(double(vg - vp)) / double(vg) * 100.0, 1e-9, "avd oracle");
    }

    // HD95: exact equality with the all-pairs boundary oracle.
    const double sentinel = metrics::hd95_sentinel(pred.shape, sp);
    const double want = oracle::hd95(pred.data, gt.data, D, H, W, sp, sentinel);
    c.require(metrics::hd95(pred, gt, sp) == want, "hd95 exact at trial " + std::to_string(trial));

    // Lesion counts: exact.
    int gc = 0, pc = 0;
    auto glab = oracle::label_components(gt.data, D, H, W, true, &gc);
    auto plab = oracle::label_components(pred.data, D, H, W, true, &pc);
    std::vector<uint8_t> ghit(static_cast<size_t>(gc), 0), phit(static_cast<size_t>(pc), 0);
    for (int64_t i = 0; i < pred.numel(); ++i) {
      if (pred[i] && glab[static_cast<size_t>(i)]) ghit[static_cast<size_t>(glab[static_cast<size_t>(i)] - 1)] = 1;
      if (gt[i] && plab[static_cast<size_t>(i)]) phit[static_cast<size_t>(plab[static_cast<size_t>(i)] - 1)] = 1;
    }
    int tp = 0, fp = 0;
    for (auto h : ghit) tp += h;
    for (auto h : phit) fp += !h;
    const auto counts = metrics::lesion_match(pred, gt);
    c.require_eq(counts.tp, tp, "lesion TP count");
    c.require_eq(counts.fp, fp, "lesion FP count");
    c.require_eq(counts.fn, gc - tp, "lesion FN count");
    const double recall = (tp + (gc - tp)) == 0 ? ((tp == 0 && fp == 0) ? 1.0 : 0.0)
                                                : double(tp) / double(gc);
    c.require_near(metrics::lesion_recall(counts), recall, 1e-9, "lesion recall formula");
    const double f1 = (2 * tp + fp + (gc - tp)) == 0 ? 1.0 : 2.0 * tp / double(2 * tp + fp + gc - tp);
    c.require_near(metrics::lesion_f1(counts), f1, 1e-9, "lesion f1 formula");
  }
}

void criterion2_loss_identities(Check& c) {
  for (uint64_t s = 0; s < 100; ++s) {
    Rng rng(3000 + s);
    Tensor<double> p({6, 7});
    Tensor<double> y({6, 7});
    for (int64_t i = 0; i < p.numel(); ++i) {
      p[i] = rng.uniform(0.01, 0.99);
      y[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    auto yp = std::make_shared<Tensor<double>>(y);
    Tape<double> t;
    const double dice = ops::dice_loss(t, t.input(p), yp, 1.0)->value[0];
    const double tversky = ops::tversky_loss(t, t.input(p), yp, 0.5, 0.5, 0.5)->value[0];
    c.require_near(tversky, dice, 1e-9, "Tversky(0.5,0.5) == Dice, trial " + std::to_string(s));

    const double focal = ops::focal_loss(t, t.input(p), yp, 0.0, 1.0)->value[0];
    double bce = 0;
    for (int64_t i = 0; i < p.numel(); ++i) bce += y[i] > 0.5 ? -std::log(p[i]) : -std::log(1 - p[i]);
    bce /= static_cast<double>(p.numel());
    c.require_near(focal, bce, 1e-6, "Focal(0,1) == BCE, trial " + std::to_string(s));
  }
  // Boundary loss zero cases.
  Tape<double> t;
  Tensor<double> zeros({12});
  auto d = std::make_shared<Tensor<double>>(Shape{12}, 3.0);
  c.require_eq(ops::boundary_loss(t, t.input(zeros), d)->value[0], 0.0, "boundary zero prediction");
  Tensor<double> conf({12});
  conf[4] = 1.0;
  auto d2 = std::make_shared<Tensor<double>>(Shape{12}, 2.0);
  (*d2)[4] = 0.0;
  c.require_eq(ops::boundary_loss(t, t.input(conf), d2)->value[0], 0.0,
               "boundary zero on d_G == 0 support");
}

// Gradient check through a tiny end-to-end model, both task modes, double
// precision. The spec names 8x8 inputs, but four exact 2x halvings make 16x16
// the smallest admissible grid; the loss-level 8x8 check lives in the unit
// suite, and this end-to-end check runs at 16x16.
void criterion3_gradcheck(Check& c) {
  for (const std::string mode : {"vascular", "brats"}) {
    ModelConfig cfg;
    cfg.stage_channels = {4, 8, 16, 32, 64};
    cfg.num_streams = mode == "brats" ? 4 : 2;
    cfg.num_classes = mode == "brats" ? 3 : 1;
    cfg.swin_heads = 2;
    cfg.swin_window = 2;
    cfg.input_h = cfg.input_w = 16;
    const std::vector<std::string> mods =
        mode == "brats" ? std::vector<std::string>{"T1w", "T1c", "T2w", "FLAIR"}
                        : std::vector<std::string>{"FLAIR", "T1w"};
    Rng rng(42);
    MultiStreamNet<double> net(cfg, mods, rng);
    LossConfig lcfg;
    lcfg.mode = mode;

    Rng drng(77);
    Tensor<double> x({1, cfg.num_streams, 16, 16});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = drng.uniform(-1, 1);
    Tensor<double> y({1, cfg.num_classes, 16, 16});
    for (int i = 0; i < 16 * 16; ++i) {
      const bool fg = drng.bernoulli(0.3);
      for (int k = 0; k < cfg.num_classes; ++k) y[int64_t(k) * 256 + i] = fg ? 1.0 : 0.0;
    }
    std::shared_ptr<Tensor<double>> dist;
    if (mode == "vascular") {
      std::vector<uint8_t> m(256);
      for (int i = 0; i < 256; ++i) m[static_cast<size_t>(i)] = y[i] > 0.5;
      auto dm = distance_map_2d(m, 16, 16, 1.0, 1.0);
      dist = std::make_shared<Tensor<double>>(Shape{1, 1, 16, 16});
      for (int i = 0; i < 256; ++i) (*dist)[i] = dm.values[i];
    }

    auto eval = [&](bool backward) {
      Tape<double> t;
      auto heads = net.forward(t, t.input(x));
      auto loss = ops::total_loss(t, heads, y, dist, lcfg);
      if (backward) {
        net.visit([](Param<double>& p) { p.zero_grad(); });
        t.backward(loss);
      }
      return loss->value[0];
    };
    eval(true);

    // Sample coordinates from every top-level parameter group.
    std::map<std::string, std::vector<Param<double>*>> groups;
    net.visit([&](Param<double>& p) {
      groups[p.name.substr(0, p.name.find('.'))].push_back(&p);
    });
    struct Coord {
      Param<double>* p;
      int64_t i;
      double analytic;
    };
    std::vector<Coord> coords;
    for (auto& [name, params] : groups) {
      const size_t n = params.size();
      for (size_t pick : {size_t(0), n / 2, n - 1}) {
        Param<double>* p = params[pick];
        const int64_t i = p->value.numel() / 2;
        coords.push_back({p, i, p->grad[i]});
      }
    }
    const double h = 1e-5;
    for (auto& co : coords) {
      const double keep = co.p->value[co.i];
      co.p->value[co.i] = keep + h;
      const double fp = eval(false);
      co.p->value[co.i] = keep - h;
      const double fm = eval(false);
      co.p->value[co.i] = keep;
      const double fd = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(co.analytic), 1e-8});
      const double rel = std::abs(fd - co.analytic) / denom;
      c.require(rel < 1e-3, mode + " grad mismatch at " + co.p->name + "[" +
                                std::to_string(co.i) + "]: rel " + std::to_string(rel));
    }
    c.require_ge(static_cast<double>(groups.size()), 8.0, mode + ": every module group sampled");
    c.require_ge(static_cast<double>(coords.size()), 30.0, mode + ": enough coordinates sampled");
  }
}

void criterion4_pairing(Check& c) {
  auto names = [](const std::vector<std::string>& m, const std::vector<int>& idx) {
    std::vector<std::string> out;
    for (int i : idx) out.push_back(m[static_cast<size_t>(i)]);
    return out;
  };
  {
    const std::vector<std::string> m = {"T1w", "T1c", "T2w", "FLAIR"};
    auto p = make_pairing_plan(m);
    c.require(names(m, p.side_a) == std::vector<std::string>({"T1w", "T1c"})  //
                  && names(m, p.side_b) == std::vector<std::string>({"FLAIR", "T2w"}),
              "BraTS pairing ([T1w;T1c],[FLAIR;T2w])");
  }
  {
    const std::vector<std::string> m = {"T1w", "T1c", "DWI"};
    auto p = make_pairing_plan(m);
    c.require(names(m, p.side_a) == std::vector<std::string>({"T1w", "T1c"})  //
                  && names(m, p.side_b) == std::vector<std::string>({"DWI"}),
              "(pair, DWI) pairing");
  }
  {
    const std::vector<std::string> m = {"FLAIR", "T1w"};
    auto p = make_pairing_plan(m);
    c.require(names(m, p.side_a) == std::vector<std::string>({"FLAIR"})  //
                  && names(m, p.side_b) == std::vector<std::string>({"T1w"}),
              "WMH pairing (FLAIR, T1w)");
  }
  {
    const std::vector<std::string> m = {"DWI", "ADC"};
    auto p = make_pairing_plan(m);
    c.require(names(m, p.side_a) == std::vector<std::string>({"DWI"})  //
                  && names(m, p.side_b) == std::vector<std::string>({"ADC"}),
              "ISLES pairing (DWI, ADC) per documented N=2 rule");
  }
}

void criterion5_tuner(Check& c) {
  // Synthetic cohort with a known optimum: GT blobs at probability 0.45, an
  // unremovable spurious blob at 0.38, single-voxel noise at 0.9.
  std::vector<ProbabilityVolume> probs;
  std::vector<Mask> gts;
  for (int case_i = 0; case_i < 3; ++case_i) {
    ProbabilityVolume pv;
    pv.case_id = "val" + std::to_string(case_i);
    pv.split = "val";
    pv.probs = Tensor<float>({1, 3, 16, 16});
    Mask gt;
    gt.class_names = {"lesion"};
    gt.data = Tensor<uint8_t>({1, 3, 16, 16});
    for (int y = 2; y <= 5; ++y)
      for (int x = 2; x <= 8; ++x) {
        pv.probs[int64_t(y) * 16 + x] = 0.45f;
        gt.data[int64_t(y) * 16 + x] = 1;
      }
    for (int y = 9; y <= 14; ++y)
      for (int x = 1; x <= 12; ++x) pv.probs[2 * 256 + int64_t(y) * 16 + x] = 0.38f;
    pv.probs[2 * 256 + 14] = 0.9f;
    probs.push_back(std::move(pv));
    gts.push_back(std::move(gt));
  }
  auto tuned = tune_params(probs, gts);
  c.require_near(tuned.params.tau, 0.40, 1e-12, "tuner finds the constructed tau bin");
  c.require_eq(tuned.params.s_min, 2, "tuner s_min at first-visited tie");
  c.require_near(tuned.mean_dsc, 1.0, 1e-12, "tuner optimum separates lesions exactly");

  // Exhaustive brute force over the same grid: exact equality.
  double best = 0, best_tau = 0.5;
  int best_s = 0;
  size_t cell = 0;
  for (double tau : default_tau_grid())
    for (int s : default_smin_grid()) {
      double acc = 0;
      for (size_t i = 0; i < probs.size(); ++i) {
        Mask pred = binarize_and_filter(probs[i], {tau, s}, {"lesion"});
        Tensor<uint8_t> p({3, 16, 16}), g({3, 16, 16});
        std::copy_n(pred.data.ptr(), 768, p.ptr());
        std::copy_n(gts[i].data.ptr(), 768, g.ptr());
        acc += oracle::dsc(p.data, g.data);
      }
      const double mean = acc / probs.size();
      c.require(cell < tuned.grid.size() && tuned.grid[cell].mean_dsc == mean,
                "grid cell " + std::to_string(cell) + " equals brute force");
      if (mean > best) {
        best = mean;
        best_tau = tau;
        best_s = s;
      }
      ++cell;
    }
  c.require(tuned.params.tau == best_tau && tuned.params.s_min == best_s && tuned.mean_dsc == best,
            "tuner equals the brute-force grid maximum exactly");

  // Leakage guard rejects test-tagged inputs.
  probs[0].split = "test";
  bool threw = false;
  try {
    tune_params(probs, gts);
  } catch (const DataError&) {
    threw = true;
  }
  c.require(threw, "leakage guard rejects test-tagged inputs");
}

void criterion6_architecture(Check& c) {
  // Shape contracts across input sizes with desk channels.
  for (int hw : {64, 96, 208}) {
    ModelConfig cfg;  // desk defaults
    cfg.num_streams = 2;
    cfg.input_h = cfg.input_w = hw;
    Rng rng(7);
    MultiStreamNet<float> net(cfg, {"FLAIR", "T1w"}, rng);
    Tape<float> t;
    Tensor<float> x({1, 2, hw, hw});
    Rng dr(8);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(dr.uniform(-1, 1));
    auto heads = net.forward(t, t.input(x));
    c.require(heads.z_main->value.shape == Shape({1, 1, hw, hw}), "z_main shape at " + std::to_string(hw));
    c.require(heads.z_lesion->value.shape == Shape({1, 1, hw / 16, hw / 16}),
              "z_lesion shape at " + std::to_string(hw));
  }

  // Stream independence by input perturbation.
  {
    ModelConfig cfg;
    cfg.stage_channels = {4, 8, 12, 16, 24};
    cfg.num_streams = 2;
    cfg.swin_heads = 2;
    cfg.swin_window = 2;
    cfg.input_h = cfg.input_w = 32;
    Rng rng(9);
    MultiStreamEncoder<float> enc(cfg.stage_channels, {"FLAIR", "T1w"}, rng);
    Tensor<float> x({1, 2, 32, 32});
    Rng dr(10);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(dr.uniform(-1, 1));
    Tensor<float> x2 = x;
    for (int i = 0; i < 32 * 32; ++i) x2[32 * 32 + i] += 1.0f;
    Tape<float> t1, t2;
    auto p1 = enc.forward(t1, t1.input(x));
    auto p2 = enc.forward(t2, t2.input(x2));
    bool same = true;
    for (int lvl = 0; lvl < 5; ++lvl)
      for (int64_t i = 0; i < p1[0].f[lvl]->value.numel(); ++i)
        same &= p1[0].f[lvl]->value[i] == p2[0].f[lvl]->value[i];
    c.require(same, "stream 1 bitwise unchanged under stream 2 perturbation");
  }

  // Gate asymptotic identity at logit -1e3.
  {
    Tape<double> t;
    Rng dr(11);
    Tensor<double> f({1, 3, 5, 5});
    for (int64_t i = 0; i < f.numel(); ++i) f[i] = dr.uniform(-2, 2);
    auto skip = t.input(f);
    auto logits = t.input(Tensor<double>({1, 1, 5, 5}, -1e3));
    auto out = LesionGate<double>::apply(t, skip, logits);
    double worst = 0;
    for (int64_t i = 0; i < f.numel(); ++i) worst = std::max(worst, std::abs(out->value[i] - f[i]));
    c.require(worst < 1e-6, "gate asymptotic identity |out - skip| < 1e-6");
  }

  // Nonzero gradients at all four supervision heads.
  {
    ModelConfig cfg;
    cfg.stage_channels = {4, 8, 16, 32, 64};
    cfg.num_streams = 2;
    cfg.swin_heads = 2;
    cfg.swin_window = 2;
    cfg.input_h = cfg.input_w = 16;
    Rng rng(12);
    MultiStreamNet<double> net(cfg, {"FLAIR", "T1w"}, rng);
    Tape<double> t;
    Rng dr(13);
    Tensor<double> x({1, 2, 16, 16});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = dr.uniform(-1, 1);
    auto heads = net.forward(t, t.input(x));
    auto loss = ops::add(
        t,
        ops::add(t, ops::mean_all(t, ops::mul(t, heads.z_main, heads.z_main)),
                 ops::mean_all(t, ops::mul(t, heads.z_aux1, heads.z_aux1))),
        ops::add(t, ops::mean_all(t, ops::mul(t, heads.z_aux2, heads.z_aux2)),
                 ops::mean_all(t, ops::mul(t, heads.z_lesion, heads.z_lesion))));
    net.visit([](Param<double>& p) { p.zero_grad(); });
    t.backward(loss);
    for (const char* head : {"dec.head_main.w", "dec.head_aux1.w", "dec.head_aux2.w",
                             "dec.head_lesion.w"}) {
      double s = 0;
      net.visit([&](Param<double>& p) {
        if (p.name == head)
          for (int64_t i = 0; i < p.grad.numel(); ++i) s += std::abs(p.grad[i]);
      });
      c.require(s > 0, std::string("nonzero gradient at ") + head);
    }
  }

  // Swin window == grid equals the dense-attention oracle within 1e-5.
  {
    const int C = 8, heads = 2, hw = 4, L = hw * hw, d = C / heads;
    Rng rng(14);
    WindowAttention<double> attn("a", C, heads, hw, rng);
    Rng dr(15);
    Tensor<double> x({1, C, hw, hw});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = dr.uniform(-1, 1);
    Tape<double> t;
    auto y = attn.forward(t, t.input(x), false);
    auto relidx = relative_position_index(hw);
    double worst = 0;
    std::vector<std::vector<double>> q(L), k(L), v(L), ctx(static_cast<size_t>(L), std::vector<double>(C, 0.0));
    auto lin = [&](int off, int l, std::vector<double>& out) {
      out.assign(static_cast<size_t>(C), 0.0);
      for (int r = 0; r < C; ++r) {
        double acc = attn.qkv.b.value[off + r];
        for (int cc = 0; cc < C; ++cc)
          acc += attn.qkv.w.value[int64_t(off + r) * C + cc] * x[int64_t(cc) * L + l];
        out[static_cast<size_t>(r)] = acc;
      }
    };
    for (int l = 0; l < L; ++l) {
      lin(0, l, q[static_cast<size_t>(l)]);
      lin(C, l, k[static_cast<size_t>(l)]);
      lin(2 * C, l, v[static_cast<size_t>(l)]);
    }
    for (int hd = 0; hd < heads; ++hd)
      for (int i = 0; i < L; ++i) {
        std::vector<double> logits(static_cast<size_t>(L));
        double mx = -1e300;
        for (int j = 0; j < L; ++j) {
          double dot = 0;
          for (int e = 0; e < d; ++e)
            dot += q[static_cast<size_t>(i)][static_cast<size_t>(hd * d + e)] * k[static_cast<size_t>(j)][static_cast<size_t>(hd * d + e)];
          logits[static_cast<size_t>(j)] = dot / std::sqrt(double(d)) +
                      attn.rpb.value[int64_t((*relidx)[static_cast<size_t>(i) * L + j]) * heads + hd];
          mx = std::max(mx, logits[static_cast<size_t>(j)]);
        }
        double sum = 0;
        for (int j = 0; j < L; ++j) {
          logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
          sum += logits[static_cast<size_t>(j)];
        }
        for (int j = 0; j < L; ++j)
          for (int e = 0; e < d; ++e)
            ctx[static_cast<size_t>(i)][static_cast<size_t>(hd * d + e)] +=
                logits[static_cast<size_t>(j)] / sum * v[static_cast<size_t>(j)][static_cast<size_t>(hd * d + e)];
      }
    for (int l = 0; l < L; ++l)
      for (int cc = 0; cc < C; ++cc) {
        double acc = attn.proj.b.value[cc];
        for (int e = 0; e < C; ++e) acc += attn.proj.w.value[int64_t(cc) * C + e] * ctx[static_cast<size_t>(l)][static_cast<size_t>(e)];
        worst = std::max(worst, std::abs(y->value[int64_t(cc) * L + l] - acc));
      }
    c.require(worst < 1e-5, "W-MSA with window == grid equals dense attention (worst " +
                                std::to_string(worst) + ")");
  }
}

const char* kOverfitSpec = R"({
  "num_train": 8, "num_val": 2, "num_test": 2,
  "modalities": ["FLAIR", "T1w"],
  "shape": [6, 48, 48],
  "spacing": [2.0, 1.0, 1.0],
  "lesion_count_min": 2, "lesion_count_max": 3,
  "lesion_radius_min": 2.5, "lesion_radius_max": 4.5,
  "contrast": [2.0, -0.5],
  "noise_sigma": 0.05,
  "seed": 404
})";

// Desk config: default stage channels [16,32,64,128,256]; 48x48 slices keep
// the CPU budget; 6 epochs x 12 steps = 72 optimizer steps (<= 200).
const char* kOverfitConfig = R"({
  "task": "WMH",
  "augmentation": {"flip_prob": 0, "affine_prob": 0, "rotation_deg": 0, "scale_frac": 0,
                   "elastic_prob": 0, "photometric_prob": 0, "channel_dropout_prob": 0},
  "sampler": {"enabled": true, "size_percentile": 25, "oversample_factor": 3},
  "model": {"swin_window": 3, "input_size": [48, 48]},
  "optimizer": {"lr": 0.001, "epochs": 6, "batch_size": 4, "weight_decay": 0.0001,
                "warmup_epochs": 2, "seed": 7}
})";

double mean_dsc_from_report(const std::string& report_path, const std::string& cls) {
  json j = json::parse(slurp(report_path));
  for (const auto& e : j.at("summaries").at("dsc"))
    if (e.at("class").get<std::string>() == cls) return e.at("mean").get<double>();
  throw DataError("class not found in report: " + cls);
}

void criterion7_overfit(Check& c) {
  const std::string dir = g_workdir + "/overfit";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir + "/spec.json", kOverfitSpec);
  write_file(dir + "/config.json", kOverfitConfig);

  const auto t0 = std::chrono::steady_clock::now();
  c.require_eq(run_cli("phantom --spec " + dir + "/spec.json --out " + dir + "/data",
                       dir + "/phantom.log"),
               0, "phantom exit code");
  c.require_eq(run_cli("train --config " + dir + "/config.json --data " + dir + "/data --out " +
                           dir + "/run",
                       dir + "/train.log"),
               0, "train exit code");
  c.require_eq(run_cli("tune --checkpoint " + dir + "/run/checkpoint_best --val-data " + dir +
                           "/data --out " + dir + "/tuned",
                       dir + "/tune.log"),
               0, "tune exit code");
  c.require_eq(run_cli("predict --checkpoint " + dir + "/run/checkpoint_best --params " + dir +
                           "/tuned/postprocess.json --in " + dir + "/data --out " + dir +
                           "/preds_test --split test",
                       dir + "/predict.log"),
               0, "predict exit code");
  c.require_eq(run_cli("evaluate --pred " + dir + "/preds_test --gt " + dir + "/data --out " +
                           dir + "/eval_test",
                       dir + "/evaluate.log"),
               0, "evaluate exit code");
  const double pipeline_minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  c.require_le(pipeline_minutes, 15.0, "end-to-end pipeline under 15 CPU minutes");

  // <= 200 optimizer steps.
  {
    json manifest = json::parse(slurp(dir + "/run/checkpoint_final.manifest.json"));
    c.require_le(manifest.at("global_step").get<double>(), 200.0, "at most 200 optimizer steps");
  }

  // Strictly decreasing epoch-mean training loss.
  {
    std::ifstream log(dir + "/run/train_log.jsonl");
    std::string line;
    double prev = std::numeric_limits<double>::infinity();
    int epochs = 0;
    bool strict = true;
    while (std::getline(log, line)) {
      const double loss = json::parse(line).at("mean_loss").get<double>();
      if (loss >= prev) strict = false;
      prev = loss;
      ++epochs;
    }
    c.require(epochs >= 2 && strict, "epoch-mean training loss strictly decreases");
  }

  // Final training DSC >= 0.90, measured on the train split through the same
  // predict/evaluate path.
  c.require_eq(run_cli("predict --checkpoint " + dir + "/run/checkpoint_best --params " + dir +
                           "/tuned/postprocess.json --in " + dir + "/data --out " + dir +
                           "/preds_train --split train",
                       dir + "/predict_train.log"),
               0, "predict train split exit code");
  c.require_eq(run_cli("evaluate --pred " + dir + "/preds_train --gt " + dir + "/data --out " +
                           dir + "/eval_train",
                       dir + "/evaluate_train.log"),
               0, "evaluate train split exit code");
  c.require_ge(mean_dsc_from_report(dir + "/eval_train/report.json", "lesion"), 0.90,
               "final training DSC >= 0.90");
}

const char* kBratsSpec = R"({
  "num_train": 8, "num_val": 2, "num_test": 2,
  "modalities": ["T1w", "T1c", "T2w", "FLAIR"],
  "nested_classes": true,
  "shape": [6, 48, 48],
  "spacing": [2.0, 1.0, 1.0],
  "lesion_count_min": 1, "lesion_count_max": 2,
  "lesion_radius_min": 3.0, "lesion_radius_max": 5.0,
  "contrast": [0.8, 1.5, 1.0, 2.0],
  "noise_sigma": 0.05,
  "seed": 505
})";

// 12 epochs x 12 steps = 144 optimizer steps (<= 300); |P| = 2 fusion branch
// and per-class Dice loss are exercised by construction.
const char* kBratsConfig = R"({
  "task": "BraTS",
  "augmentation": {"flip_prob": 0, "affine_prob": 0, "rotation_deg": 0, "scale_frac": 0,
                   "elastic_prob": 0, "photometric_prob": 0, "channel_dropout_prob": 0},
  "model": {"swin_window": 3, "input_size": [48, 48]},
  "optimizer": {"lr": 0.001, "epochs": 12, "batch_size": 4, "weight_decay": 0.0001,
                "warmup_epochs": 2, "seed": 11}
})";

void criterion8_brats_smoke(Check& c) {
  const std::string dir = g_workdir + "/brats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir + "/spec.json", kBratsSpec);
  write_file(dir + "/config.json", kBratsConfig);

  const auto t0 = std::chrono::steady_clock::now();
  c.require_eq(run_cli("phantom --spec " + dir + "/spec.json --out " + dir + "/data",
                       dir + "/phantom.log"),
               0, "phantom exit code");
  c.require_eq(run_cli("train --config " + dir + "/config.json --data " + dir + "/data --out " +
                           dir + "/run",
                       dir + "/train.log"),
               0, "train exit code");
  c.require_eq(run_cli("tune --checkpoint " + dir + "/run/checkpoint_best --val-data " + dir +
                           "/data --out " + dir + "/tuned",
                       dir + "/tune.log"),
               0, "tune exit code");
  c.require_eq(run_cli("predict --checkpoint " + dir + "/run/checkpoint_best --params " + dir +
                           "/tuned/postprocess.json --in " + dir + "/data --out " + dir +
                           "/preds --split train",
                       dir + "/predict.log"),
               0, "predict exit code");
  c.require_eq(run_cli("evaluate --pred " + dir + "/preds --gt " + dir + "/data --out " + dir +
                           "/eval",
                       dir + "/evaluate.log"),
               0, "evaluate exit code");
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  c.require_le(minutes, 20.0, "BraTS-shaped pipeline under 20 CPU minutes");

  json manifest = json::parse(slurp(dir + "/run/checkpoint_final.manifest.json"));
  c.require_le(manifest.at("global_step").get<double>(), 300.0, "at most 300 optimizer steps");
  c.require_ge(mean_dsc_from_report(dir + "/eval/report.json", "WT"), 0.85,
               "whole-lesion (WT) DSC >= 0.85");
}

const char* kDetSpec = R"({
  "num_train": 2, "num_val": 1, "num_test": 1,
  "modalities": ["FLAIR", "T1w"],
  "shape": [3, 32, 32],
  "spacing": [2.0, 1.0, 1.0],
  "lesion_count_min": 1, "lesion_count_max": 1,
  "lesion_radius_min": 2.0, "lesion_radius_max": 3.0,
  "contrast": [2.0, -0.5],
  "noise_sigma": 0.02,
  "seed": 99
})";

const char* kDetConfig = R"({
  "task": "WMH",
  "model": {"stage_channels": [4, 8, 12, 16, 24], "swin_window": 2, "swin_heads": 2,
            "input_size": [32, 32]},
  "optimizer": {"lr": 0.001, "epochs": 2, "batch_size": 2, "weight_decay": 0.0001,
                "warmup_epochs": 1, "seed": 31}
})";

void criterion9_determinism(Check& c) {
  const std::string dir = g_workdir + "/determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir + "/spec.json", kDetSpec);
  write_file(dir + "/config.json", kDetConfig);
  c.require_eq(run_cli("phantom --spec " + dir + "/spec.json --out " + dir + "/data",
                       dir + "/phantom.log"),
               0, "phantom exit code");
  for (const char* run : {"a", "b"}) {
    const std::string r = dir + "/" + run;
    c.require_eq(run_cli("train --config " + dir + "/config.json --data " + dir + "/data --out " +
                             r + "/run",
                         r + "_train.log"),
                 0, std::string("train exit code run ") + run);
    c.require_eq(run_cli("tune --checkpoint " + r + "/run/checkpoint_best --val-data " + dir +
                             "/data --out " + r + "/tuned",
                         r + "_tune.log"),
                 0, std::string("tune exit code run ") + run);
    c.require_eq(run_cli("predict --checkpoint " + r + "/run/checkpoint_best --params " + r +
                             "/tuned/postprocess.json --in " + dir + "/data --out " + r +
                             "/preds --split test",
                         r + "_predict.log"),
                 0, std::string("predict exit code run ") + run);
    c.require_eq(run_cli("evaluate --pred " + r + "/preds --gt " + dir + "/data --out " + r +
                             "/eval",
                         r + "_evaluate.log"),
                 0, std::string("evaluate exit code run ") + run);
  }
  c.require(ckpt::file_hash(dir + "/a/run/checkpoint_final.weights.bin") ==
                ckpt::file_hash(dir + "/b/run/checkpoint_final.weights.bin"),
            "identical checkpoint hashes across runs");
  c.require(slurp(dir + "/a/eval/report.json") == slurp(dir + "/b/eval/report.json"),
            "identical cohort report bytes (JSON)");
  c.require(slurp(dir + "/a/eval/metrics.csv") == slurp(dir + "/b/eval/metrics.csv"),
            "identical cohort report bytes (CSV)");
}

void criterion10_fidelity(Check& c) {
  // Table 2 optimizer presets.
  const auto wmh = wmh_profile(), isles = isles_profile(), brats = brats_profile();
  c.require(wmh.optimizer.lr == 1e-4 && wmh.optimizer.epochs == 150 &&
                wmh.optimizer.batch_size == 18 && wmh.optimizer.weight_decay == 1.5e-4,
            "WMH optimizer preset equals (1e-4, 150, 18, 1.5e-4)");
  c.require(isles.optimizer.lr == 1e-4 && isles.optimizer.epochs == 120 &&
                isles.optimizer.batch_size == 18 && isles.optimizer.weight_decay == 1.5e-4,
            "ISLES optimizer preset equals (1e-4, 120, 18, 1.5e-4)");
  c.require(brats.optimizer.lr == 5e-5 && brats.optimizer.epochs == 300 &&
                brats.optimizer.batch_size == 8 && brats.optimizer.weight_decay == 1e-4,
            "BraTS optimizer preset equals (5e-5, 300, 8, 1e-4)");
  c.require(wmh.optimizer.warmup_epochs == 15 && isles.optimizer.warmup_epochs == 15 &&
                brats.optimizer.warmup_epochs == 15,
            "15-epoch warmup in all presets");

  // Table 1 augmentation tiers against the golden file.
  const char* src = std::getenv("LESIONSEG_SOURCE_DIR");
  std::string golden_path = src ? std::string(src) + "/tests/data/profiles_golden.json"
                                : std::string("tests/data/profiles_golden.json");
  if (!fs::exists(golden_path)) golden_path = "../tests/data/profiles_golden.json";
  c.require(fs::exists(golden_path), "golden profile file present");
  if (fs::exists(golden_path)) {
    json golden = json::parse(slurp(golden_path));
    for (const auto& [name, profile] :
         {std::pair<std::string, TaskProfile>{"WMH", wmh}, {"ISLES", isles}, {"BraTS", brats}}) {
      const json& a = golden.at(name).at("augmentation");
      const auto& p = profile.augmentation;
      c.require(p.flip_prob == a.at("flip_prob").get<double>() &&
                    p.affine_prob == a.at("affine_prob").get<double>() &&
                    p.rotation_deg == a.at("rotation_deg").get<double>() &&
                    p.scale_frac == a.at("scale_frac").get<double>() &&
                    p.elastic_prob == a.at("elastic_prob").get<double>() &&
                    p.photometric_prob == a.at("photometric_prob").get<double>() &&
                    p.channel_dropout_prob == a.at("channel_dropout_prob").get<double>(),
                name + " augmentation tier equals golden file");
      c.require(profile.modalities == golden.at(name).at("modalities").get<std::vector<std::string>>(),
                name + " modalities equal golden file");
    }
  }

  // Paired t-test reference value.
  std::vector<double> a = {2, 4, 6, 8, 10}, b = {1, 2, 3, 4, 5};
  auto r = metrics::paired_t_test(a, b);
  c.require_near(r.t, 4.2426, 5e-4, "t statistic for differences {1..5}");
  c.require_near(r.p, 0.0132, 1e-3, "p value for differences {1..5}");
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") g_cli = argv[i + 1];
    if (flag == "--workdir") g_workdir = argv[i + 1];
  }
  fs::create_directories(g_workdir);

  struct Criterion {
    int number;
    const char* name;
    std::function<void(Check&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "metric oracle equivalence (DSC/AVD/HD95/lesion counts on 50 random mask pairs)",
       criterion1_metric_oracles},
      {2, "loss identities (Tversky=Dice at 0.5, Focal=BCE at gamma 0, boundary zero cases)",
       criterion2_loss_identities},
      {3, "gradient check through a tiny model, both task modes, 64-bit", criterion3_gradcheck},
      {4, "stream pairing branch table", criterion4_pairing},
      {5, "postprocessing tuner equals brute-force grid maximum; leakage guard", criterion5_tuner},
      {6, "architecture invariants (shapes, independence, gates, heads, dense-attention oracle)",
       criterion6_architecture},
      {7, "overfit experiment: 8-subject phantom, desk config, <=200 steps", criterion7_overfit},
      {8, "generalization smoke test: 4-modality 3-class phantom, <=300 steps",
       criterion8_brats_smoke},
      {9, "determinism: identical checkpoint hashes and report bytes", criterion9_determinism},
      {10, "configuration fidelity: optimizer/augmentation presets and t-test reference",
       criterion10_fidelity},
  };

  int failures = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.fn(check);
    } catch (const std::exception& e) {
      check.ok = false;
      check.log << "    exception: " << e.what() << "\n";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1fs)\n", check.ok ? "PASS" : "FAIL", cr.number, cr.name,
                secs);
    if (!check.ok) {
      std::fputs(check.log.str().c_str(), stdout);
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
