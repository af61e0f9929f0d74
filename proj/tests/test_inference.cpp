#include <gtest/gtest.h>

#include <cmath>

#include "lesionseg/infer/postprocess.hpp"
#include "lesionseg/infer/sliding_window.hpp"

using namespace lesionseg;

namespace {

ModelConfig tiny_cfg(int streams = 2, int classes = 1) {
  ModelConfig cfg;
  cfg.stage_channels = {4, 8, 12, 16, 24};
  cfg.num_streams = streams;
  cfg.num_classes = classes;
  cfg.swin_heads = 2;
  cfg.swin_window = 2;
  cfg.input_h = cfg.input_w = 16;
  return cfg;
}

SubjectRecord phantom_subject(std::array<int, 3> shape, uint64_t seed, const std::string& split) {
  PhantomSpec spec;
  spec.num_subjects = 1;
  spec.shape = shape;
  spec.seed = seed;
  spec.lesion_radius_min = 2;
  spec.lesion_radius_max = 2.5;
  spec.lesion_count_min = spec.lesion_count_max = 1;
  auto subs = generate_phantom(spec);
  SubjectRecord r;
  r.id = subs[0].volume.subject_id + "_" + std::to_string(seed);
  r.split = split;
  r.volume = subs[0].volume;
  r.mask = subs[0].mask;
  return r;
}

}  // namespace

TEST(TilePositions, CoverageAndDegenerateCase) {
  EXPECT_EQ(infer::tile_positions(16, 16, 8), (std::vector<int>{0}));
  EXPECT_EQ(infer::tile_positions(12, 16, 8), (std::vector<int>{0}));
  auto pos = infer::tile_positions(24, 16, 8);
  EXPECT_EQ(pos, (std::vector<int>{0, 8}));
  auto pos2 = infer::tile_positions(40, 16, 8);
  EXPECT_EQ(pos2.back(), 24);
  for (size_t i = 1; i < pos2.size(); ++i) EXPECT_LE(pos2[i] - pos2[i - 1], 8);
}

TEST(BlendTiles, ConstantTilesBlendToConstant) {
  // Normalized weights: any tiling of a constant value reproduces it exactly.
  Tensor<float> tiles({3, 1, 8, 8}, 0.73f);
  auto out = infer::blend_tiles({{0, 0}, {0, 4}, {0, 8}}, tiles, 8, 16);
  for (int64_t i = 0; i < out.numel(); ++i) ASSERT_NEAR(out[i], 0.73f, 1e-6f);
}

TEST(BlendTiles, HalfOverlapMatchesHandComputedWeights) {
  // Two half-overlapping windows with distinct constant outputs a and b:
  // overlap voxels equal the Gaussian-weighted mean.
  const int w = 8;
  Tensor<float> tiles({2, 1, w, w});
  const float a = 0.2f, b = 0.9f;
  for (int i = 0; i < w * w; ++i) {
    tiles[i] = a;
    tiles[w * w + i] = b;
  }
  auto out = infer::blend_tiles({{0, 0}, {0, 4}}, tiles, w, 12);
  auto g = infer::gaussian_importance(w, w);
  for (int y = 0; y < w; ++y)
    for (int x = 0; x < 12; ++x) {
      double want;
      if (x < 4) {
        want = a;
      } else if (x >= 8) {
        want = b;
      } else {
        const double g1 = g.at(y, x), g2 = g.at(y, x - 4);
        want = (g1 * a + g2 * b) / (g1 + g2);
      }
      ASSERT_NEAR(out[int64_t(y) * 12 + x], want, 1e-6) << y << "," << x;
    }
}

TEST(SlidingWindow, SingleWindowEqualsFullSlicePrediction) {
  Rng rng(41);
  auto cfg = tiny_cfg();
  MultiStreamNet<float> net(cfg, {"FLAIR", "T1w"}, rng);
  auto rec = phantom_subject({3, 16, 16}, 7, "val");
  auto pv = sliding_window_predict(net, rec);
  EXPECT_EQ(pv.probs.shape, (Shape{1, 3, 16, 16}));

  // Reference: plain full-slice prediction on the normalized volume.
  Volume vol = rec.volume;
  zscore_normalize(vol);
  for (int z = 0; z < 3; ++z) {
    Tensor<float> batch({1, 2, 16, 16});
    for (int m = 0; m < 2; ++m)
      std::copy_n(vol.data.ptr() + (int64_t(m) * 3 + z) * 256, 256, batch.ptr() + int64_t(m) * 256);
    auto probs = predict_probabilities(net, batch);
    for (int i = 0; i < 256; ++i)
      ASSERT_NEAR(pv.probs[int64_t(z) * 256 + i], probs[i], 1e-6);
  }
}

TEST(SlidingWindow, ConstantLogitsGiveConstantProbability) {
  Rng rng(43);
  auto cfg = tiny_cfg();
  MultiStreamNet<float> net(cfg, {"FLAIR", "T1w"}, rng);
  // Zero all head weights: logits identically 0, probability 0.5 everywhere,
  // no matter how tiles overlap.
  for (auto* head : {&net.decoder.head_aux1, &net.decoder.head_aux2, &net.decoder.head_main,
                     &net.decoder.head_lesion}) {
    std::fill(head->w.value.data.begin(), head->w.value.data.end(), 0.0f);
    std::fill(head->b.value.data.begin(), head->b.value.data.end(), 0.0f);
  }
  auto rec = phantom_subject({2, 24, 28}, 9, "val");  // larger than the window: real tiling
  auto pv = sliding_window_predict(net, rec);
  for (int64_t i = 0; i < pv.probs.numel(); ++i) ASSERT_NEAR(pv.probs[i], 0.5f, 1e-6f);
}

TEST(BinarizeFilter, SpecCases) {
  ProbabilityVolume pv;
  pv.probs = Tensor<float>({1, 1, 4, 8});
  // Component A: 3 voxels; component B: 10 voxels (separated).
  for (int x = 0; x < 3; ++x) pv.probs[x] = 0.9f;
  for (int x = 0; x < 5; ++x) {
    pv.probs[2 * 8 + x] = 0.9f;
    pv.probs[3 * 8 + x] = 0.9f;
  }
  auto m = binarize_and_filter(pv, {0.5, 5}, {"lesion"});
  int64_t kept = 0;
  for (auto v : m.data.data) kept += v;
  EXPECT_EQ(kept, 10);
  EXPECT_EQ(m.data[0], 0);  // 3-voxel component removed

  // S_min = 2: isolated voxels removed, pairs kept.
  ProbabilityVolume pv2;
  pv2.probs = Tensor<float>({1, 1, 1, 7});
  pv2.probs[0] = 0.9f;                       // isolated
  pv2.probs[3] = pv2.probs[4] = 0.9f;        // pair
  auto m2 = binarize_and_filter(pv2, {0.5, 2}, {"lesion"});
  EXPECT_EQ(m2.data[0], 0);
  EXPECT_EQ(m2.data[3], 1);
  EXPECT_EQ(m2.data[4], 1);

  // P == 0.5 at tau 0.5: inclusive comparator keeps everything.
  ProbabilityVolume pv3;
  pv3.probs = Tensor<float>({1, 1, 2, 2}, 0.5f);
  auto m3 = binarize_and_filter(pv3, {0.5, 0}, {"lesion"});
  for (auto v : m3.data.data) EXPECT_EQ(v, 1);
}

TEST(BinarizeFilter, MonotoneInSmin) {
  Rng rng(47);
  ProbabilityVolume pv;
  pv.probs = Tensor<float>({1, 4, 10, 10});
  for (auto& v : pv.probs.data) v = static_cast<float>(rng.uniform());
  int64_t prev = -1;
  for (int s = 1; s <= 15; ++s) {
    auto m = binarize_and_filter(pv, {0.6, s}, {"lesion"});
    int64_t count = 0;
    for (auto v : m.data.data) count += v;
    if (prev >= 0) EXPECT_LE(count, prev);
    prev = count;
  }
}

namespace {

// Synthetic cohort where tau = 0.40 is optimal by construction: ground truth
// blob carries probability 0.45; a large spurious blob carries 0.38 and is too
// big for any S_min in the grid to remove.
std::pair<std::vector<ProbabilityVolume>, std::vector<Mask>> tuned_cohort() {
  std::vector<ProbabilityVolume> probs;
  std::vector<Mask> gts;
  for (int c = 0; c < 2; ++c) {
    ProbabilityVolume pv;
    pv.case_id = "val" + std::to_string(c);
    pv.split = "val";
    pv.probs = Tensor<float>({1, 2, 12, 12});
    Mask gt;
    gt.class_names = {"lesion"};
    gt.data = Tensor<uint8_t>({1, 2, 12, 12});
    // GT blob: rows 1..3, cols 1..6 on slice 0 (18 voxels) at p=0.45.
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 6; ++x) {
        pv.probs[int64_t(y) * 12 + x] = 0.45f;
        gt.data[int64_t(y) * 12 + x] = 1;
      }
    // Spurious blob: rows 7..10, cols 1..10 on slice 1 (40 voxels) at p=0.38.
    for (int y = 7; y <= 10; ++y)
      for (int x = 1; x <= 10; ++x) pv.probs[144 + int64_t(y) * 12 + x] = 0.38f;
    // Single-voxel noise at 0.9, away from both blobs (removed by S_min >= 2).
    pv.probs[144 + 10] = 0.9f;
    probs.push_back(std::move(pv));
    gts.push_back(std::move(gt));
  }
  return {std::move(probs), std::move(gts)};
}

}  // namespace

TEST(Tuner, FindsConstructedOptimumAndMatchesBruteForce) {
  auto [probs, gts] = tuned_cohort();
  auto tuned = tune_params(probs, gts);
  EXPECT_NEAR(tuned.params.tau, 0.40, 1e-9);
  EXPECT_EQ(tuned.params.s_min, 2);
  EXPECT_NEAR(tuned.mean_dsc, 1.0, 1e-9);

  // Independent brute force over the same grid.
  double best = 0;
  double best_tau = 0.5;
  int best_s = 0;
  for (double tau : default_tau_grid())
    for (int s : default_smin_grid()) {
      double acc = 0;
      for (size_t i = 0; i < probs.size(); ++i) {
        Mask pred = binarize_and_filter(probs[i], {tau, s}, {"lesion"});
        Tensor<uint8_t> p({2, 12, 12}), g({2, 12, 12});
        std::copy_n(pred.data.ptr(), 288, p.ptr());
        std::copy_n(gts[i].data.ptr(), 288, g.ptr());
        acc += metrics::dsc(p, g);
      }
      const double mean = acc / probs.size();
      if (mean > best) {
        best = mean;
        best_tau = tau;
        best_s = s;
      }
    }
  EXPECT_EQ(tuned.params.tau, best_tau);
  EXPECT_EQ(tuned.params.s_min, best_s);
  EXPECT_EQ(tuned.mean_dsc, best);
}

TEST(Tuner, SingleCellAndTieBreaking) {
  auto [probs, gts] = tuned_cohort();
  auto one = tune_params(probs, gts, {0.25}, {7});
  EXPECT_DOUBLE_EQ(one.params.tau, 0.25);
  EXPECT_EQ(one.params.s_min, 7);

  // Two cells with identical scores: the first visited wins.
  auto tie = tune_params(probs, gts, {0.40, 0.45}, {2});
  EXPECT_DOUBLE_EQ(tie.params.tau, 0.40);

  EXPECT_THROW(tune_params(probs, gts, {}, {2}), ConfigError);
}

TEST(Tuner, LeakageGuardRejectsTestTaggedInput) {
  auto [probs, gts] = tuned_cohort();
  probs[1].split = "test";
  EXPECT_THROW(tune_params(probs, gts), DataError);
}

TEST(Evaluate, ProvenanceAndDisjointnessGuards) {
  auto [probs, gts] = tuned_cohort();
  auto tuned = tune_params(probs, gts);

  auto test_probs = probs;
  test_probs[0].case_id = "test0";
  test_probs[0].split = "test";
  test_probs[1].case_id = "test1";
  test_probs[1].split = "test";
  auto report = evaluate_cases(test_probs, gts, tuned, {"lesion"});
  EXPECT_NEAR(report.summaries.at("dsc")[0].mean, 1.0, 1e-9);

  // Missing provenance flag.
  auto stripped = tuned;
  stripped.provenance = "";
  EXPECT_THROW(evaluate_cases(test_probs, gts, stripped, {"lesion"}), DataError);

  // Overlapping case ids.
  auto overlapping = test_probs;
  overlapping[0].case_id = tuned.val_subjects[0];
  EXPECT_THROW(evaluate_cases(overlapping, gts, tuned, {"lesion"}), DataError);
}

TEST(Evaluate, EmptyPredictionSentinels) {
  ProbabilityVolume pv;
  pv.case_id = "t";
  pv.split = "test";
  pv.probs = Tensor<float>({1, 2, 6, 6});  // all zeros: empty prediction
  Mask gt;
  gt.class_names = {"lesion"};
  gt.data = Tensor<uint8_t>({1, 2, 6, 6});
  gt.data[7] = 1;
  TunedParams tuned;
  tuned.params = {0.5, 2};
  tuned.provenance = kValidationProvenance;
  auto report = evaluate_cases({pv}, {gt}, tuned, {"lesion"});
  EXPECT_DOUBLE_EQ(report.cases[0].per_class[0].dsc, 0.0);
  EXPECT_TRUE(report.cases[0].per_class[0].hd95_sentinel);
}
