#include <gtest/gtest.h>

#include "decodiff/codec.hpp"
#include "decodiff/datasets.hpp"
#include "test_util.hpp"

using namespace decodiff;

namespace {

std::vector<ImageTensor> texture_images(int n, int res, std::uint64_t seed, int category = 0) {
  Rng rng(seed);
  std::vector<ImageTensor> out;
  for (int i = 0; i < n; ++i) out.push_back(detail::render_texture(detail::category_texture(category), res, 0.01, rng));
  return out;
}

CodecConfig small_ae(double kl, int steps) {
  CodecConfig c;
  c.kind = CodecKind::TrainedAutoencoder;
  c.downsample_factor = 8;
  c.latent_channels = 4;
  c.hidden_channels = 16;
  c.kl_weight = kl;
  c.train_steps = steps;
  c.batch_size = 8;
  return c;
}

}  // namespace

TEST(Patchify, ShapeArithmetic) {
  Rng rng(1);
  auto z = LatentCodec::patchify(8).encode(testutil::random_image(3, 64, 64, rng));
  EXPECT_EQ(z.height, 8);
  EXPECT_EQ(z.width, 8);
  EXPECT_EQ(z.channels, 192);
}

TEST(Patchify, RoundTripIsBitExact) {
  Rng rng(2);
  for (int f : {4, 8}) {
    auto codec = LatentCodec::patchify(f);
    for (int i = 0; i < 5; ++i) {
      auto x = testutil::random_image(3, 8 * f, 4 * f, rng);
      EXPECT_EQ(codec.decode(codec.encode(x)), x);
    }
  }
}

TEST(Patchify, ElementPlacement) {
  ImageTensor x(3, 16, 16);
  for (std::size_t i = 0; i < x.size(); ++i) x.values[i] = static_cast<float>(i) / x.size();
  auto z = patchify_encode(x, 8);
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < 8; ++dy)
      for (int dx = 0; dx < 8; ++dx) EXPECT_EQ(z.at((c * 8 + dy) * 8 + dx, 1, 0), x.at(c, 8 + dy, dx));
}

TEST(Patchify, ZeroLatentDecodesToZeroImage) {
  LatentTensor z(192, 8, 8, 0.0f);
  auto x = LatentCodec::patchify(8).decode(z);
  EXPECT_EQ(x.height, 64);
  for (float v : x.values) EXPECT_EQ(v, 0.0f);
}

TEST(Patchify, DecodeClampsToUnitRange) {
  LatentTensor z(48, 2, 2, 5.0f);
  z.values[0] = -3.0f;
  auto x = LatentCodec::patchify(4).decode(z);
  for (float v : x.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Codec, ShapeMismatch) {
  auto codec = LatentCodec::patchify(8);
  EXPECT_THROW(codec.encode(ImageTensor(3, 60, 64)), ShapeError);
  EXPECT_THROW(codec.decode(LatentTensor(4, 8, 8)), ShapeError);
}

TEST(Codec, InvalidFactorRejected) {
  CodecConfig c;
  c.downsample_factor = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(LatentCodec::patchify(3), std::invalid_argument);
}

TEST(Codec, UntrainedCodecRefusesToEncode) {
  auto codec = LatentCodec::untrained(small_ae(0.0, 1));
  EXPECT_THROW(codec.encode(ImageTensor(3, 32, 32)), UninitializedCodecError);
}

TEST(Codec, LatentFileRoundTrip) {
  auto dir = testutil::scratch("latent_file");
  Rng rng(3);
  auto z = testutil::random_latent(4, 3, 5, rng);
  write_latent_file(dir / "a.lat", z);
  EXPECT_EQ(read_latent_file(dir / "a.lat"), z);
}

TEST(Codec, ExternalCodecLooksUpByKey) {
  auto dir = testutil::scratch("external");
  Rng rng(4);
  auto z = testutil::random_latent(4, 4, 4, rng);
  write_latent_file(dir / "cat" / "good" / "000.lat", z);
  CodecConfig cfg;
  cfg.kind = CodecKind::ExternalPretrained;
  cfg.external_dir = dir.string();
  auto codec = LatentCodec::external(cfg);
  EXPECT_EQ(codec.encode_key("cat/good/000"), z);
  EXPECT_THROW(codec.decode(z), std::logic_error);
}

TEST(Codec, CheckpointRoundTrip) {
  auto dir = testutil::scratch("codec_ckpt");
  auto imgs = texture_images(6, 32, 5);
  Rng rng(6);
  auto codec = fit_autoencoder(imgs, small_ae(1e-3, 20), rng);
  codec.save(dir / "codec.dcdf");
  auto loaded = LatentCodec::load(dir / "codec.dcdf");
  EXPECT_EQ(loaded.fingerprint(), codec.fingerprint());
  EXPECT_EQ(loaded.encode(imgs[0]), codec.encode(imgs[0]));
  EXPECT_EQ(loaded.fit_report().validation_threshold, codec.fit_report().validation_threshold);
  auto p = LatentCodec::patchify(8);
  p.save(dir / "p.dcdf");
  EXPECT_EQ(LatentCodec::load(dir / "p.dcdf").fingerprint(), p.fingerprint());
  EXPECT_NE(p.fingerprint(), codec.fingerprint());
}

TEST(TrainedCodec, HeldOutErrorBelowRecordedThreshold) {
  auto imgs = texture_images(20, 32, 7);
  Rng rng(8);
  auto codec = fit_autoencoder(imgs, small_ae(1e-3, 300), rng);
  const auto& rep = codec.fit_report();
  EXPECT_GT(rep.validation_threshold, 0.0);
  for (const auto& im : texture_images(3, 32, 99)) {
    auto rec = codec.decode(codec.encode(im));
    double mae = 0;
    for (std::size_t i = 0; i < im.size(); ++i) mae += std::abs(rec.values[i] - im.values[i]);
    mae /= im.size();
    EXPECT_LT(mae, rep.validation_threshold);
  }
}

TEST(TrainedCodec, DecodeStaysInUnitRangeAndEncodeIsDeterministic) {
  auto imgs = texture_images(6, 32, 9);
  Rng rng(10);
  auto codec = fit_autoencoder(imgs, small_ae(1e-3, 30), rng);
  Rng zr(11);
  auto x = codec.decode(testutil::random_latent(4, 4, 4, zr, 5.0));
  for (float v : x.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(codec.encode(imgs[1]), codec.encode(imgs[1]));
}

TEST(TrainedCodec, LatentsAreStandardizedOnValidation) {
  auto imgs = texture_images(20, 32, 12);
  Rng rng(13);
  auto codec = fit_autoencoder(imgs, small_ae(1e-3, 100), rng);
  std::vector<double> sum(4, 0), sq(4, 0);
  double n = 0;
  for (const auto& im : imgs) {
    auto z = codec.encode(im);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < z.height; ++y)
        for (int x = 0; x < z.width; ++x) {
          sum[c] += z.at(c, y, x);
          sq[c] += z.at(c, y, x) * z.at(c, y, x);
        }
    n += z.height * z.width;
  }
  for (int c = 0; c < 4; ++c) {
    const double m = sum[c] / n, sd = std::sqrt(sq[c] / n - m * m);
    EXPECT_LT(std::abs(m), 0.5) << c;
    EXPECT_GE(sd, 0.5) << c;
    EXPECT_LE(sd, 2.0) << c;
  }
}

TEST(TrainedCodec, OverfitsSingleImageWithoutKl) {
  auto imgs = texture_images(1, 32, 14);
  Rng rng(15);
  auto cfg = small_ae(0.0, 600);
  cfg.batch_size = 1;
  auto codec = fit_autoencoder(imgs, cfg, rng);
  EXPECT_LT(codec.fit_report().validation_mae, 0.02);
}

TEST(TrainedCodec, KlWeightShrinksLatentSpread) {
  auto imgs = texture_images(12, 32, 16);
  Rng a(17), b(17);
  auto plain = fit_autoencoder(imgs, small_ae(0.0, 150), a);
  auto kl = fit_autoencoder(imgs, small_ae(0.05, 150), b);
  EXPECT_LT(kl.fit_report().raw_latent_std, plain.fit_report().raw_latent_std);
}

TEST(TrainedCodec, DivergenceIsReported) {
  auto imgs = texture_images(4, 32, 18);
  Rng rng(19);
  auto cfg = small_ae(1e-3, 200);
  cfg.learning_rate = 1e3;
  EXPECT_THROW(fit_autoencoder(imgs, cfg, rng), DivergenceError);
}
