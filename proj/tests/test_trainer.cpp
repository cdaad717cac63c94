#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "decodiff/trainer.hpp"
#include "test_util.hpp"

using namespace decodiff;

namespace {

const NoiseSchedule kSchedule = build_cosine_schedule(10);

DoDNetConfig tiny_model() {
  DoDNetConfig c;
  c.base_channels = 8;
  c.latent_channels = 4;
  c.dropout = 0.0;
  return c;
}

std::vector<LatentTensor> latents(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LatentTensor> out;
  for (int i = 0; i < n; ++i) out.push_back(testutil::random_latent(4, 8, 8, rng));
  return out;
}

TrainConfig small_train(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.lr_init = 1e-3;
  cfg.seed = 5;
  cfg.checkpoint_every = 1;
  return cfg;
}

std::vector<float> flat_params(const DoDNet<float>& net) {
  std::vector<float> out;
  for (const auto& [_, p] : net.params().entries()) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

}  // namespace

TEST(Loss, ZeroWhenOutputEqualsTarget) {
  Rng rng(1);
  auto target = stack<float>(latents(2, 2));
  auto loss = ag::mse_loss(ag::constant(target), target);
  EXPECT_EQ(loss->value[0], 0.0f);
}

TEST(Loss, ZeroOutputGivesMeanSquaredTarget) {
  DoDNet<float> net(tiny_model(), 3);  // zero-initialised output layer
  CorruptionConfig cc;
  Rng rng(4);
  auto batch = sample_training_corruption(latents(3, 5), cc, kSchedule, rng);
  double sq = 0;
  std::size_t n = 0;
  for (const auto& s : batch)
    for (float v : s.eta_target.values) sq += double(v) * v, ++n;
  Rng drop(0);
  EXPECT_LT(testutil::rel_err(deviation_loss(net, batch, false, drop)->value[0], sq / n), 1e-6);
}

TEST(Loss, AllVisibleMaskIsDegenerateButFine) {
  DoDNet<float> net(tiny_model(), 6);
  CorruptionConfig cc;
  cc.r_mask_max = 1.0;
  std::vector<CorruptionSample> batch;
  Rng rng(7);
  for (const auto& z : latents(2, 8)) {
    auto m = sample_mask(8, 8, 2, 1.0, rng);
    batch.push_back(forward_corrupt(z, 5, m, kSchedule, rng, {}, 0.0));
  }
  Rng drop(0);
  EXPECT_EQ(deviation_loss(net, batch, false, drop)->value[0], 0.0f);
  nn::AdamW<float> opt(net.params(), {});
  EXPECT_EQ(training_step(net, opt, batch, 1e-3, drop), 0.0);
}

TEST(Loss, InvariantToBatchPermutation) {
  auto cfg = tiny_model();
  cfg.zero_init = false;
  DoDNet<float> net(cfg, 9);
  Rng rng(10);
  auto batch = sample_training_corruption(latents(5, 11), CorruptionConfig{}, kSchedule, rng);
  Rng drop(0);
  const double base = deviation_loss(net, batch, false, drop)->value[0];
  for (int k = 0; k < 5; ++k) {
    std::vector<int> order = rng.choose(5, 5);
    std::vector<CorruptionSample> perm;
    for (int i : order) perm.push_back(batch[i]);
    EXPECT_NEAR(deviation_loss(net, perm, false, drop)->value[0], base, 1e-6);
  }
}

TEST(LearningRate, WarmupAndCosineEndpoints) {
  TrainConfig cfg;
  cfg.warmup_steps = 50;
  EXPECT_EQ(lr_at(0, cfg, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, cfg, 1000), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1000, cfg, 1000), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(25, cfg, 1000), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(525, cfg, 1000), 0.5 * (1e-4 + 1e-5));
  EXPECT_DOUBLE_EQ(lr_at(-5, cfg, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5000, cfg, 1000), 1e-5);
  // Continuity at the warmup boundary.
  EXPECT_NEAR(lr_at(49, cfg, 1000), lr_at(50, cfg, 1000), 1e-4 / 50 + 1e-12);
  EXPECT_NEAR(lr_at(51, cfg, 1000), lr_at(50, cfg, 1000), 1e-9);
}

TEST(LearningRate, DefaultWarmupIsFivePercent) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.effective_warmup(1000), 50);
  EXPECT_DOUBLE_EQ(lr_at(50, cfg, 1000), cfg.lr_init);
  for (long long s = 0; s < 1000; ++s) {
    EXPECT_GE(lr_at(s + 1, cfg, 1000), s < 50 ? lr_at(s, cfg, 1000) : cfg.lr_min);
    if (s >= 50) {
      EXPECT_LE(lr_at(s + 1, cfg, 1000), lr_at(s, cfg, 1000));
    }
  }
}

TEST(TrainingStep, OverfitsOneTinyBatch) {
  auto cfg = dod_config_for(ModelSize::XS, 4);
  cfg.dropout = 0.0;
  DoDNet<float> net(cfg, 12);
  nn::AdamW<float> opt(net.params(), {});
  Rng rng(13);
  const auto batch = sample_training_corruption(latents(2, 14), CorruptionConfig{}, kSchedule, rng);
  Rng drop(0);
  const double initial = training_step(net, opt, batch, 1e-3, drop);
  double last = initial;
  for (int i = 1; i < 200; ++i) last = training_step(net, opt, batch, 1e-3, drop);
  // Reference run: initial 1.1836, final below 1e-6.
  EXPECT_LT(last, 0.1 * initial) << "initial " << initial << " final " << last;
}

TEST(TrainingStep, DivergenceLeavesParametersUntouched) {
  auto mcfg = tiny_model();
  mcfg.zero_init = false;
  DoDNet<float> net(mcfg, 15);
  nn::AdamW<float> opt(net.params(), {});
  Rng rng(16);
  auto batch = sample_training_corruption(latents(2, 17), CorruptionConfig{}, kSchedule, rng);
  batch[0].eta_target.values[3] = std::numeric_limits<float>::quiet_NaN();
  const auto before = flat_params(net);
  Rng drop(0);
  EXPECT_THROW(training_step(net, opt, batch, 1e-3, drop), DivergenceError);
  EXPECT_EQ(flat_params(net), before);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(Train, ZeroEpochsWritesInitialisation) {
  auto dir = testutil::scratch("train_zero");
  TrainOptions opts;
  opts.out_dir = dir;
  opts.model = tiny_model();
  auto cfg = small_train(0);
  auto res = train(latents(8, 18), cfg, opts);
  EXPECT_TRUE(res.history.empty());
  auto ck = load_checkpoint(res.final_checkpoint);
  DoDNet<float> fresh(tiny_model(), derive_seed(cfg.seed, {0x6d6f64656cULL}));
  EXPECT_EQ(flat_params(*ck.model), flat_params(fresh));
  EXPECT_EQ(ck.info.epoch, 0);
  EXPECT_TRUE(read_loss_csv(dir / "loss.csv").empty());
}

TEST(Train, TwoRunsAreIdentical) {
  TrainOptions a, b;
  a.out_dir = testutil::scratch("train_det_a");
  b.out_dir = testutil::scratch("train_det_b");
  a.model = b.model = tiny_model();
  auto cfg = small_train(2);
  auto data = latents(10, 19);
  auto ra = train(data, cfg, a), rb = train(data, cfg, b);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  ASSERT_FALSE(ra.history.empty());
  for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].loss, rb.history[i].loss);
  EXPECT_EQ(flat_params(*load_checkpoint(ra.final_checkpoint).model),
            flat_params(*load_checkpoint(rb.final_checkpoint).model));
}

TEST(Train, HistoryAndStepCount) {
  TrainOptions o;
  o.out_dir = testutil::scratch("train_hist");
  o.model = tiny_model();
  auto res = train(latents(9, 20), small_train(3), o);  // 9 = 4 + 5: trailing singleton folded
  EXPECT_EQ(res.steps, 6);
  ASSERT_EQ(res.history.size(), 6u);
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    EXPECT_EQ(res.history[i].step, static_cast<long long>(i));
    EXPECT_EQ(res.history[i].epoch, static_cast<int>(i / 2));
    EXPECT_GE(res.history[i].loss, 0.0);
  }
  EXPECT_EQ(res.epoch_mean_loss.size(), 3u);
  auto csv = read_loss_csv(o.out_dir / "loss.csv");
  ASSERT_EQ(csv.size(), 6u);
  EXPECT_NEAR(csv[5].loss, res.history[5].loss, 1e-8 * std::max(1.0, res.history[5].loss));
}

TEST(Train, ResumeContinuesExactly) {
  auto cfg = small_train(4);
  auto data = latents(8, 21);
  TrainOptions full;
  full.out_dir = testutil::scratch("train_full");
  full.model = tiny_model();
  auto ref = train(data, cfg, full);

  TrainOptions part = full;
  part.out_dir = testutil::scratch("train_part");
  struct Interrupt {};
  part.on_step = [](const LossRecord& r) {
    if (r.step == 4) throw Interrupt{};  // first step of epoch 2
  };
  EXPECT_THROW(train(data, cfg, part), Interrupt);
  auto ck = load_checkpoint(part.out_dir / "checkpoint_last.dcdf");
  EXPECT_EQ(ck.info.epoch, 2);
  EXPECT_EQ(ck.info.step, 4);

  part.on_step = nullptr;
  part.resume_from = part.out_dir / "checkpoint_last.dcdf";
  auto resumed = train(data, cfg, part);
  ASSERT_EQ(resumed.history.size(), ref.history.size());
  for (std::size_t i = 0; i < ref.history.size(); ++i) {
    EXPECT_EQ(resumed.history[i].step, ref.history[i].step);
    EXPECT_NEAR(resumed.history[i].loss, ref.history[i].loss, 1e-7 * std::max(1.0, ref.history[i].loss));
  }
  EXPECT_EQ(flat_params(*load_checkpoint(resumed.final_checkpoint).model),
            flat_params(*load_checkpoint(ref.final_checkpoint).model));
}

TEST(Train, ResumeRejectsForeignCodec) {
  TrainOptions o;
  o.out_dir = testutil::scratch("train_codec");
  o.model = tiny_model();
  o.codec_fingerprint = 1;
  train(latents(4, 22), small_train(1), o);
  o.resume_from = o.out_dir / "checkpoint_last.dcdf";
  o.codec_fingerprint = 2;
  EXPECT_THROW(train(latents(4, 22), small_train(1), o), std::invalid_argument);
}

TEST(Checkpoint, RoundTripsModelAndOptimizer) {
  auto dir = testutil::scratch("ckpt");
  auto mcfg = tiny_model();
  mcfg.zero_init = false;
  DoDNet<float> net(mcfg, 23);
  nn::AdamW<float> opt(net.params(), {});
  Rng rng(24);
  auto batch = sample_training_corruption(latents(2, 25), CorruptionConfig{}, kSchedule, rng);
  Rng drop(0);
  for (int i = 0; i < 3; ++i) training_step(net, opt, batch, 1e-3, drop);
  CheckpointInfo info{3, 1, 10, 0.008, 77, {{"note", "x"}}};
  save_checkpoint(dir / "m.dcdf", net, &opt, info);
  auto ck = load_checkpoint(dir / "m.dcdf");
  EXPECT_EQ(flat_params(*ck.model), flat_params(net));
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->steps(), 3);
  EXPECT_EQ(ck.optimizer->first_moments(), opt.first_moments());
  EXPECT_EQ(ck.optimizer->second_moments(), opt.second_moments());
  EXPECT_EQ(ck.info.codec_fingerprint, 77u);
  EXPECT_EQ(ck.info.extra.at("note"), "x");
  auto z = stack<float>(std::vector<LatentTensor>{batch[0].z_t});
  EXPECT_EQ(ck.model->predict(z, 4).values(), net.predict(z, 4).values());
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_min = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
