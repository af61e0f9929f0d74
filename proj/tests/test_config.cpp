#include <gtest/gtest.h>

#include "lesionseg/config.hpp"
#include "lesionseg/rng.hpp"

using namespace lesionseg;

TEST(ValidateConfig, WmhDefaultsPass) {
  ModelConfig cfg = ModelConfig::desk_scale();
  cfg.num_streams = 2;
  auto v = validate_config(cfg, wmh_profile());
  EXPECT_TRUE(v.empty()) << (v.empty() ? "" : v[0]);
}

TEST(ValidateConfig, StreamModalityMismatch) {
  ModelConfig cfg = ModelConfig::desk_scale();
  cfg.num_streams = 2;
  TaskProfile p = brats_profile();  // 4 modalities
  p.loss.mode = "vascular";
  p.class_names = {"lesion"};
  auto v = validate_config(cfg, p);
  bool found = false;
  for (const auto& s : v) found |= s.find("stream/modality mismatch") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(ValidateConfig, DivisibilityAndChannels) {
  ModelConfig cfg = ModelConfig::desk_scale();
  cfg.num_streams = 2;
  cfg.input_h = cfg.input_w = 208;  // 208/16 = 13, integral
  EXPECT_TRUE(validate_config(cfg, wmh_profile()).empty());

  cfg.input_h = 210;
  EXPECT_FALSE(validate_config(cfg, wmh_profile()).empty());

  cfg.input_h = 208;
  cfg.stage_channels = {16, 32, 32, 128, 256};
  EXPECT_FALSE(validate_config(cfg, wmh_profile()).empty());
}

TEST(ValidateConfig, UnknownModalityRejected) {
  ModelConfig cfg = ModelConfig::desk_scale();
  cfg.num_streams = 2;
  TaskProfile p = wmh_profile();
  p.modalities = {"FLAIR", "SWI"};
  auto v = validate_config(cfg, p);
  bool found = false;
  for (const auto& s : v) found |= s.find("unknown modality") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Profiles, Table2Fidelity) {
  const auto wmh = wmh_profile();
  EXPECT_DOUBLE_EQ(wmh.optimizer.lr, 1e-4);
  EXPECT_EQ(wmh.optimizer.epochs, 150);
  EXPECT_EQ(wmh.optimizer.batch_size, 18);
  EXPECT_DOUBLE_EQ(wmh.optimizer.weight_decay, 1.5e-4);
  EXPECT_EQ(wmh.optimizer.warmup_epochs, 15);

  const auto isles = isles_profile();
  EXPECT_DOUBLE_EQ(isles.optimizer.lr, 1e-4);
  EXPECT_EQ(isles.optimizer.epochs, 120);
  EXPECT_EQ(isles.optimizer.batch_size, 18);
  EXPECT_DOUBLE_EQ(isles.optimizer.weight_decay, 1.5e-4);

  const auto brats = brats_profile();
  EXPECT_DOUBLE_EQ(brats.optimizer.lr, 5e-5);
  EXPECT_EQ(brats.optimizer.epochs, 300);
  EXPECT_EQ(brats.optimizer.batch_size, 8);
  EXPECT_DOUBLE_EQ(brats.optimizer.weight_decay, 1e-4);
}

TEST(Profiles, ModalityLists) {
  EXPECT_EQ(wmh_profile().modalities, (std::vector<std::string>{"FLAIR", "T1w"}));
  EXPECT_EQ(isles_profile().modalities, (std::vector<std::string>{"DWI", "ADC"}));
  EXPECT_EQ(brats_profile().modalities, (std::vector<std::string>{"T1w", "T1c", "T2w", "FLAIR"}));
  EXPECT_EQ(brats_profile().class_names, (std::vector<std::string>{"WT", "TC", "ET"}));
}

TEST(Profiles, AugmentationTiers) {
  const auto w = AugmentationConfig::wmh_tier();
  EXPECT_DOUBLE_EQ(w.flip_prob, 0.5);
  EXPECT_DOUBLE_EQ(w.affine_prob, 0.75);
  EXPECT_DOUBLE_EQ(w.rotation_deg, 20.0);
  EXPECT_DOUBLE_EQ(w.scale_frac, 0.20);
  EXPECT_DOUBLE_EQ(w.elastic_prob, 0.5);
  EXPECT_DOUBLE_EQ(w.photometric_prob, 0.40);
  EXPECT_DOUBLE_EQ(w.channel_dropout_prob, 0.5);

  const auto i = AugmentationConfig::isles_tier();
  EXPECT_DOUBLE_EQ(i.rotation_deg, 15.0);
  EXPECT_DOUBLE_EQ(i.scale_frac, 0.15);
  EXPECT_DOUBLE_EQ(i.elastic_prob, 0.3);
  EXPECT_DOUBLE_EQ(i.photometric_prob, 0.30);
  EXPECT_DOUBLE_EQ(i.channel_dropout_prob, 0.25);

  const auto b = AugmentationConfig::brats_tier();
  EXPECT_DOUBLE_EQ(b.affine_prob, 0.5);
  EXPECT_DOUBLE_EQ(b.rotation_deg, 10.0);
  EXPECT_DOUBLE_EQ(b.scale_frac, 0.10);
  EXPECT_DOUBLE_EQ(b.elastic_prob, 0.0);
  EXPECT_DOUBLE_EQ(b.photometric_prob, 0.175);
  EXPECT_DOUBLE_EQ(b.channel_dropout_prob, 0.0);
}

TEST(ConfigJson, RoundTripIsIdentity) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ExperimentConfig c;
    c.profile = trial % 3 == 0 ? wmh_profile() : trial % 3 == 1 ? isles_profile() : brats_profile();
    c.profile.optimizer.lr = rng.uniform(1e-6, 1e-2);
    c.profile.optimizer.seed = rng.next_u64() >> 1;
    c.profile.loss.tversky_beta = rng.uniform(0.4, 0.9);
    c.profile.augmentation.rotation_deg = rng.uniform(0, 30);
    c.model = trial % 2 ? ModelConfig::desk_scale() : ModelConfig::paper_scale();
    c.model.num_streams = static_cast<int>(c.profile.modalities.size());
    c.model.num_classes = static_cast<int>(c.profile.class_names.size());
    c.model.swin_window = 3 + int(rng.uniform_index(6));

    const std::string text = to_json(c).dump();
    const ExperimentConfig back = experiment_from_json(json::parse(text));
    EXPECT_EQ(c, back);
    // Stability: a second round trip produces identical bytes.
    EXPECT_EQ(text, to_json(back).dump());
  }
}

TEST(ConfigJson, UnknownKeysAreErrors) {
  EXPECT_THROW(experiment_from_json(json::parse(R"({"task":"WMH","bogus":1})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"task":"WMH","model":{"stage_chans":[1]}})")),
               ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"task":"WMH","loss":{"gamma":2}})")),
               ConfigError);
}

TEST(ConfigJson, PresetThenOverride) {
  auto c = experiment_from_json(json::parse(
      R"({"task":"ISLES","optimizer":{"lr": 0.001},"model":{"input_size":[64,64]}})"));
  EXPECT_EQ(c.profile.name, "ISLES");
  EXPECT_DOUBLE_EQ(c.profile.optimizer.lr, 0.001);
  EXPECT_EQ(c.profile.optimizer.epochs, 120);  // preset retained
  EXPECT_EQ(c.model.input_h, 64);
  EXPECT_EQ(c.model.num_streams, 2);  // derived from modalities
}
