#include <gtest/gtest.h>

#include <cmath>

#include "decodiff/corruption.hpp"
#include "test_util.hpp"

using namespace decodiff;

namespace {

const NoiseSchedule kSchedule = build_cosine_schedule(10);

bool patch_is_visible(const PatchMask& m, int y, int x) { return m.cell_visible(y, x); }

}  // namespace

TEST(SampleMask, ExtremeRatios) {
  Rng rng(1);
  auto all = sample_mask(8, 8, 2, 1.0, rng);
  EXPECT_EQ(all.visible_count(), 16);
  auto none = sample_mask(8, 8, 2, 0.0, rng);
  EXPECT_EQ(none.visible_count(), 0);
}

TEST(SampleMask, HalfOfSixtyFour) {
  Rng rng(2);
  auto m = sample_mask(8, 8, 1, 0.5, rng);
  EXPECT_EQ(m.visible_count(), 32);
  EXPECT_DOUBLE_EQ(m.visible_ratio, 0.5);
}

TEST(SampleMask, RoundsHalfUp) {
  Rng rng(3);
  // 4 patches: 0.625 * 4 = 2.5 -> 3, 0.375 * 4 = 1.5 -> 2.
  EXPECT_EQ(sample_mask(4, 4, 2, 0.625, rng).visible_count(), 3);
  EXPECT_EQ(sample_mask(4, 4, 2, 0.375, rng).visible_count(), 2);
}

TEST(SampleMask, RatioWithinOneCell) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const int p = std::vector<int>{1, 2, 4, 8}[i % 4];
    const double r = rng.uniform();
    auto m = sample_mask(8, 8, p, r, rng);
    EXPECT_LE(std::abs(m.visible_ratio - r), 1.0 / m.patches() + 1e-12);
  }
}

TEST(SampleMask, DeterministicAndDivisibility) {
  Rng a(5), b(5);
  EXPECT_EQ(sample_mask(8, 8, 2, 0.4, a).visible, sample_mask(8, 8, 2, 0.4, b).visible);
  EXPECT_THROW(sample_mask(8, 8, 3, 0.5, a), ShapeError);
  EXPECT_THROW(sample_mask(8, 8, 2, 1.5, a), std::invalid_argument);
}

TEST(ForwardCorrupt, AllVisibleIsIdentity) {
  Rng rng(6);
  auto z0 = testutil::random_latent(4, 8, 8, rng);
  auto m = sample_mask(8, 8, 4, 1.0, rng);
  auto s = forward_corrupt(z0, 7, m, kSchedule, rng, {}, 0.0);
  EXPECT_EQ(s.z_t, z0);
  for (float v : s.eta_target.values) EXPECT_EQ(v, 0.0f);
}

TEST(ForwardCorrupt, NoiseEqualToShiftedLatentLeavesPatchUntouched) {
  Rng rng(7);
  auto z0 = testutil::random_latent(4, 8, 8, rng);
  auto m = sample_mask(8, 8, 8, 0.0, rng);
  const int t = 4;
  std::vector<double> eps(z0.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = kSchedule.dod_shift_coeff(t) * z0.values[i];
  auto s = forward_corrupt_with_noise(z0, t, m, kSchedule, eps, rng, {}, 0.0);
  for (std::size_t i = 0; i < z0.size(); ++i) {
    EXPECT_NEAR(s.eta_target.values[i], 0.0f, 1e-6);
    EXPECT_NEAR(s.z_t.values[i], z0.values[i], 1e-6 * std::max(1.0f, std::abs(z0.values[i])));
  }
}

TEST(ForwardCorrupt, DeviationFormMatchesMarginal) {
  Rng rng(8);
  for (int draw = 0; draw < 1000; ++draw) {
    LatentTensor z0(1, 1, 1, static_cast<float>(rng.normal() * 2));
    const int t = rng.uniform_int(1, 10);
    std::vector<double> eps{rng.normal()};
    PatchMask m = sample_mask(1, 1, 1, 0.0, rng);
    auto s = forward_corrupt_with_noise(z0, t, m, kSchedule, eps, rng, {}, 0.0);
    const double marginal = std::sqrt(kSchedule.alpha_bar(t)) * z0.values[0] + kSchedule.deviation_scale(t) * eps[0];
    const double deviation = z0.values[0] + kSchedule.deviation_scale(t) * static_cast<double>(s.eta_target.values[0]);
    // Targets are stored in float32, so the tolerance scales with the operands.
    const double tol = 1e-6 * (1.0 + std::abs(z0.values[0]) + std::abs(eps[0]));
    EXPECT_LT(std::abs(deviation - marginal), tol);
  }
}

TEST(ForwardCorrupt, RejectsBadArguments) {
  Rng rng(9);
  auto z0 = testutil::random_latent(4, 8, 8, rng);
  auto m = sample_mask(8, 8, 2, 0.5, rng);
  EXPECT_THROW(forward_corrupt(z0, 0, m, kSchedule, rng, {}, 0.0), std::out_of_range);
  EXPECT_THROW(forward_corrupt(z0, 11, m, kSchedule, rng, {}, 0.0), std::out_of_range);
  EXPECT_THROW(forward_corrupt(z0, 3, m, kSchedule, rng, {}, 0.2), std::invalid_argument);
}

TEST(ForwardCorrupt, VisibleExactnessAndTargetConsistency) {
  Rng rng(10);
  std::vector<LatentTensor> pool;
  for (int i = 0; i < 3; ++i) pool.push_back(testutil::random_latent(4, 8, 8, rng));
  for (int trial = 0; trial < 100; ++trial) {
    auto z0 = testutil::random_latent(4, 8, 8, rng);
    const int p = std::vector<int>{1, 2, 4, 8}[trial % 4];
    auto m = sample_mask(8, 8, p, rng.uniform(), rng);
    const int t = rng.uniform_int(1, 10);
    const double r_shuffle = rng.uniform(0.0, 0.6);
    auto s = forward_corrupt(z0, t, m, kSchedule, rng, pool, r_shuffle);
    const double dev = kSchedule.deviation_scale(t);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (patch_is_visible(m, y, x)) {
            ASSERT_EQ(s.z_t.at(c, y, x), z0.at(c, y, x));
            ASSERT_EQ(s.eta_target.at(c, y, x), 0.0f);
          } else {
            const double rec = z0.at(c, y, x) + dev * s.eta_target.at(c, y, x);
            ASSERT_LT(std::abs(rec - s.z_t.at(c, y, x)), 1e-6 * std::max(1.0, std::abs(double(s.z_t.at(c, y, x)))));
          }
        }
  }
}

TEST(ForwardCorrupt, GaussianTargetsMatchExplicitForm) {
  Rng rng(11);
  auto z0 = testutil::random_latent(4, 8, 8, rng);
  auto m = sample_mask(8, 8, 2, 0.3, rng);
  std::vector<double> eps(z0.size());
  for (auto& e : eps) e = rng.normal();
  const int t = 6;
  auto s = forward_corrupt_with_noise(z0, t, m, kSchedule, eps, rng, {}, 0.0);
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (patch_is_visible(m, y, x)) continue;
        const double expected = eps[z0.index(c, y, x)] - kSchedule.dod_shift_coeff(t) * z0.at(c, y, x);
        EXPECT_LT(std::abs(s.eta_target.at(c, y, x) - expected), 1e-6 * std::max(1.0, std::abs(expected)));
      }
}

TEST(ForwardCorrupt, ShuffledPatchesComeFromThePool) {
  Rng rng(12);
  auto z0 = testutil::random_latent(1, 8, 8, rng);
  LatentTensor donor(1, 8, 8, 42.0f);
  auto m = sample_mask(8, 8, 2, 0.0, rng);
  auto s = forward_corrupt(z0, 5, m, kSchedule, rng, std::vector<LatentTensor>{donor}, 1.0);
  EXPECT_DOUBLE_EQ(s.shuffle_fraction_applied, 1.0);
  for (float v : s.z_t.values) EXPECT_EQ(v, 42.0f);
  auto half = forward_corrupt(z0, 5, m, kSchedule, rng, std::vector<LatentTensor>{donor}, 0.5);
  int copied = 0;
  for (float v : half.z_t.values) copied += v == 42.0f;
  EXPECT_EQ(copied, 8 * 4);  // round(0.5 * 16) patches of 2x2
}

TEST(TrainingCorruption, DeterministicFromSeed) {
  Rng data(13);
  std::vector<LatentTensor> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(testutil::random_latent(4, 8, 8, data));
  CorruptionConfig cfg;
  Rng a(99), b(99);
  auto s1 = sample_training_corruption(batch, cfg, kSchedule, a);
  auto s2 = sample_training_corruption(batch, cfg, kSchedule, b);
  ASSERT_EQ(s1.size(), 4u);
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].z_t, s2[i].z_t);
    EXPECT_EQ(s1[i].eta_target, s2[i].eta_target);
    EXPECT_EQ(s1[i].t, s2[i].t);
  }
}

TEST(TrainingCorruption, ZeroRatiosMeanAllGaussian) {
  Rng data(14);
  std::vector<LatentTensor> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(testutil::random_latent(4, 8, 8, data));
  CorruptionConfig cfg;
  cfg.r_mask_max = 0.0;
  cfg.r_shuffle_max = 0.0;
  Rng rng(15);
  for (const auto& s : sample_training_corruption(batch, cfg, kSchedule, rng)) {
    EXPECT_EQ(s.mask.visible_count(), 0);
    EXPECT_EQ(s.shuffle_fraction_applied, 0.0);
  }
}

TEST(TrainingCorruption, MaskRatioMeanIsHalfTheMaximum) {
  Rng data(16);
  std::vector<LatentTensor> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(testutil::random_latent(1, 8, 8, data));
  CorruptionConfig cfg;
  Rng rng(17);
  double sum = 0;
  int n = 0;
  while (n < 10000)
    for (const auto& s : sample_training_corruption(batch, cfg, kSchedule, rng)) {
      sum += s.r_mask_drawn;
      ++n;
    }
  // U[0, R] has mean R/2 and standard deviation R/sqrt(12).
  const double se = cfg.r_mask_max / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(sum / n - cfg.r_mask_max / 2), 3 * se);
}

TEST(TrainingCorruption, DivisibilityErrorsPropagate) {
  std::vector<LatentTensor> batch{LatentTensor(4, 6, 6), LatentTensor(4, 6, 6)};
  CorruptionConfig cfg;  // max patch size 8 does not tile 6x6
  Rng rng(18);
  EXPECT_THROW(sample_training_corruption(batch, cfg, kSchedule, rng), ShapeError);
  EXPECT_THROW(sample_training_corruption({}, cfg, kSchedule, rng), std::invalid_argument);
}
