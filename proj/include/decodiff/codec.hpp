#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decodiff/archive.hpp"
#include "decodiff/nn.hpp"

namespace decodiff {

struct UninitializedCodecError : std::logic_error {
  using std::logic_error::logic_error;
};

enum class CodecKind { Patchify, TrainedAutoencoder, ExternalPretrained };

inline std::string_view to_string(CodecKind k) {
  switch (k) {
    case CodecKind::Patchify: return "patchify";
    case CodecKind::TrainedAutoencoder: return "trained-autoencoder";
    case CodecKind::ExternalPretrained: return "external-pretrained";
  }
  return "?";
}

inline CodecKind codec_kind_from_string(std::string_view s) {
  for (auto k : {CodecKind::Patchify, CodecKind::TrainedAutoencoder, CodecKind::ExternalPretrained})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown codec kind '" + std::string(s) + "'");
}

struct CodecConfig {
  CodecKind kind = CodecKind::Patchify;
  int downsample_factor = 8;
  int image_channels = 3;
  int latent_channels = 4;  // trained/external kinds; patchify derives C * f^2
  double kl_weight = 1e-3;
  int hidden_channels = 32;
  int train_steps = 1500;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
  std::string external_dir;  // external kind: directory of per-image latent files

  int effective_latent_channels() const {
    return kind == CodecKind::Patchify ? image_channels * downsample_factor * downsample_factor : latent_channels;
  }

  void validate() const {
    if (downsample_factor != 4 && downsample_factor != 8)
      throw std::invalid_argument("codec downsample factor must be 4 or 8, got " + std::to_string(downsample_factor));
    if (image_channels <= 0) throw std::invalid_argument("image_channels must be positive");
    if (latent_channels <= 0) throw std::invalid_argument("latent_channels must be positive");
    if (!(kl_weight >= 0.0)) throw std::invalid_argument("kl_weight must be non-negative");
    if (kind == CodecKind::TrainedAutoencoder && (train_steps < 0 || batch_size < 1 || hidden_channels < 1))
      throw std::invalid_argument("invalid autoencoder training settings");
    if (kind == CodecKind::ExternalPretrained && external_dir.empty())
      throw std::invalid_argument("external-pretrained codec needs external_dir");
  }
};

// ------------------------------------------------------------------ patchify

/// Space-to-depth: latent channel (c, dy, dx) at cell (y, x) holds image pixel
/// (c, y*f + dy, x*f + dx). A pure permutation, so decode(encode(x)) == x.
inline LatentTensor patchify_encode(const ImageTensor& img, int f) {
  if (img.height % f != 0 || img.width % f != 0)
    throw ShapeError("image " + img.shape_str() + " not divisible by factor " + std::to_string(f));
  LatentTensor z(img.channels * f * f, img.height / f, img.width / f);
  for (int c = 0; c < img.channels; ++c)
    for (int dy = 0; dy < f; ++dy)
      for (int dx = 0; dx < f; ++dx) {
        const int lc = (c * f + dy) * f + dx;
        for (int y = 0; y < z.height; ++y)
          for (int x = 0; x < z.width; ++x) z.at(lc, y, x) = img.at(c, y * f + dy, x * f + dx);
      }
  return z;
}

inline ImageTensor patchify_decode(const LatentTensor& z, int f, int image_channels) {
  if (z.channels != image_channels * f * f)
    throw ShapeError("latent has " + std::to_string(z.channels) + " channels, patchify expects " +
                     std::to_string(image_channels * f * f));
  ImageTensor img(image_channels, z.height * f, z.width * f);
  for (int c = 0; c < image_channels; ++c)
    for (int dy = 0; dy < f; ++dy)
      for (int dx = 0; dx < f; ++dx) {
        const int lc = (c * f + dy) * f + dx;
        for (int y = 0; y < z.height; ++y)
          for (int x = 0; x < z.width; ++x)
            img.at(c, y * f + dy, x * f + dx) = std::clamp(z.at(lc, y, x), 0.0f, 1.0f);
      }
  return img;
}

// ------------------------------------------------------ external latent files

inline constexpr char kLatentMagic[4] = {'D', 'C', 'L', 'T'};

/// Latent file: "DCLT", u32 rank (= 3), u32 dims H', W', C', then float32
/// values in row-major H x W x C order. All integers little-endian.
inline void write_latent_file(const std::filesystem::path& path, const LatentTensor& z) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write latent file " + path.string());
  auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write(kLatentMagic, 4);
  put_u32(3);
  put_u32(static_cast<std::uint32_t>(z.height));
  put_u32(static_cast<std::uint32_t>(z.width));
  put_u32(static_cast<std::uint32_t>(z.channels));
  std::vector<float> hwc(z.size());
  std::size_t k = 0;
  for (int y = 0; y < z.height; ++y)
    for (int x = 0; x < z.width; ++x)
      for (int c = 0; c < z.channels; ++c) hwc[k++] = z.at(c, y, x);
  out.write(reinterpret_cast<const char*>(hwc.data()), static_cast<std::streamsize>(hwc.size() * 4));
}

inline LatentTensor read_latent_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open latent file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != std::string_view(kLatentMagic, 4))
    throw std::runtime_error(path.string() + " is not a latent file");
  auto get_u32 = [&in]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  if (get_u32() != 3) throw std::runtime_error("latent file must have rank 3");
  const int h = static_cast<int>(get_u32()), w = static_cast<int>(get_u32()), c = static_cast<int>(get_u32());
  std::vector<float> hwc(static_cast<std::size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(hwc.data()), static_cast<std::streamsize>(hwc.size() * 4));
  if (!in) throw std::runtime_error("truncated latent file " + path.string());
  LatentTensor z(c, h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) z.at(ch, y, x) = hwc[k++];
  return z;
}

// ------------------------------------------------------- trained autoencoder

/// Small convolutional VAE: strided-conv encoder to (mean, log-variance) and a
/// nearest-upsample decoder with a linear output head.
template <class Real>
class AutoencoderNet {
 public:
  using Var = ag::Var<Real>;

  AutoencoderNet(const CodecConfig& cfg, std::uint64_t seed) : image_channels_(cfg.image_channels),
                                                               latent_channels_(cfg.latent_channels) {
    Rng rng(seed);
    const int h = cfg.hidden_channels;
    int levels = 0;
    for (int f = cfg.downsample_factor; f > 1; f /= 2) ++levels;
    enc_.push_back(nn::Conv2d<Real>::make(ps_, "enc.in", image_channels_, h, 3, 1, rng));
    int ch = h;
    for (int i = 0; i < levels; ++i) {
      int next = std::min(2 * ch, 4 * h);
      enc_.push_back(nn::Conv2d<Real>::make(ps_, "enc.down" + std::to_string(i), ch, next, 3, 2, rng));
      ch = next;
    }
    enc_.push_back(nn::Conv2d<Real>::make(ps_, "enc.mid", ch, ch, 3, 1, rng));
    enc_out_ = nn::Conv2d<Real>::make(ps_, "enc.out", ch, 2 * latent_channels_, 3, 1, rng);
    dec_.push_back(nn::Conv2d<Real>::make(ps_, "dec.in", latent_channels_, ch, 3, 1, rng));
    dec_.push_back(nn::Conv2d<Real>::make(ps_, "dec.mid", ch, ch, 3, 1, rng));
    for (int i = 0; i < levels; ++i) {
      int next = std::max(ch / 2, h);
      dec_up_.push_back(nn::Conv2d<Real>::make(ps_, "dec.up" + std::to_string(i), ch, next, 3, 1, rng));
      ch = next;
    }
    dec_out_ = nn::Conv2d<Real>::make(ps_, "dec.out", ch, image_channels_, 3, 1, rng);
  }

  nn::ParamStore<Real>& params() { return ps_; }
  const nn::ParamStore<Real>& params() const { return ps_; }

  /// Returns (mean, logvar) for a batch of images (C, N, H, W).
  std::pair<Var, Var> encode(const Var& x) const {
    Var h = x;
    for (const auto& c : enc_) h = ag::silu(c(h));
    Var stats = enc_out_(h);
    return {ag::slice_channels(stats, 0, latent_channels_),
            ag::slice_channels(stats, latent_channels_, 2 * latent_channels_)};
  }

  Var decode(const Var& z) const {
    Var h = z;
    for (const auto& c : dec_) h = ag::silu(c(h));
    for (const auto& c : dec_up_) h = ag::silu(c(ag::upsample_nearest2(h)));
    return dec_out_(h);
  }

 private:
  int image_channels_;
  int latent_channels_;
  nn::ParamStore<Real> ps_;
  std::vector<nn::Conv2d<Real>> enc_, dec_, dec_up_;
  nn::Conv2d<Real> enc_out_, dec_out_;
};

/// Statistics recorded when an autoencoder is fitted.
struct CodecFitReport {
  double validation_mae = 0.0;       // mean over validation images
  double validation_max_mae = 0.0;   // worst validation image
  double validation_threshold = 0.0; // acceptance bound for held-out reconstructions
  double raw_latent_std = 0.0;       // std of posterior means before standardization
  std::vector<double> loss_history;
};

/// Image <-> latent mapping. Patchify and external codecs carry no weights;
/// the trained autoencoder owns its network plus a per-channel standardization.
class LatentCodec {
 public:
  LatentCodec() = default;

  static LatentCodec patchify(int factor, int image_channels = 3) {
    LatentCodec c;
    c.cfg_.kind = CodecKind::Patchify;
    c.cfg_.downsample_factor = factor;
    c.cfg_.image_channels = image_channels;
    c.cfg_.validate();
    c.ready_ = true;
    return c;
  }

  static LatentCodec external(const CodecConfig& cfg) {
    if (cfg.kind != CodecKind::ExternalPretrained) throw std::invalid_argument("external() needs external kind");
    cfg.validate();
    LatentCodec c;
    c.cfg_ = cfg;
    c.ready_ = true;
    return c;
  }

  /// Unfitted trained-autoencoder codec; encode/decode fail until fitted or loaded.
  static LatentCodec untrained(const CodecConfig& cfg) {
    cfg.validate();
    LatentCodec c;
    c.cfg_ = cfg;
    return c;
  }

  const CodecConfig& config() const { return cfg_; }
  CodecKind kind() const { return cfg_.kind; }
  int factor() const { return cfg_.downsample_factor; }
  int latent_channels() const { return cfg_.effective_latent_channels(); }
  bool ready() const { return ready_; }
  const CodecFitReport& fit_report() const { return report_; }

  LatentTensor encode(const ImageTensor& img) const {
    return encode_batch(std::vector<ImageTensor>{img}).front();
  }

  ImageTensor decode(const LatentTensor& z) const { return decode_batch(std::vector<LatentTensor>{z}).front(); }

  std::vector<LatentTensor> encode_batch(const std::vector<ImageTensor>& imgs) const {
    require_ready();
    std::vector<LatentTensor> out;
    out.reserve(imgs.size());
    for (const auto& im : imgs) check_image(im);
    switch (cfg_.kind) {
      case CodecKind::Patchify:
        for (const auto& im : imgs) out.push_back(patchify_encode(im, cfg_.downsample_factor));
        return out;
      case CodecKind::ExternalPretrained:
        throw std::logic_error("external-pretrained latents are looked up by key; use encode_key()");
      case CodecKind::TrainedAutoencoder: break;
    }
    ag::NoGradGuard guard;
    auto [mu, _] = net_->encode(ag::constant(stack<float>(imgs)));
    auto latents = unstack<LatentTag>(mu->value);
    for (auto& z : latents) standardize(z);
    return latents;
  }

  std::vector<ImageTensor> decode_batch(const std::vector<LatentTensor>& zs) const {
    require_ready();
    for (const auto& z : zs)
      if (z.channels != latent_channels())
        throw ShapeError("latent " + z.shape_str() + " does not match codec with " +
                         std::to_string(latent_channels()) + " channels");
    std::vector<ImageTensor> out;
    out.reserve(zs.size());
    switch (cfg_.kind) {
      case CodecKind::Patchify:
        for (const auto& z : zs) out.push_back(patchify_decode(z, cfg_.downsample_factor, cfg_.image_channels));
        return out;
      case CodecKind::ExternalPretrained:
        throw std::logic_error("external-pretrained codec has no decoder");
      case CodecKind::TrainedAutoencoder: break;
    }
    std::vector<LatentTensor> raw = zs;
    for (auto& z : raw) destandardize(z);
    ag::NoGradGuard guard;
    auto img = net_->decode(ag::constant(stack<float>(raw)));
    out = unstack<ImageTag>(img->value);
    for (auto& im : out)
      for (auto& v : im.values) v = std::clamp(v, 0.0f, 1.0f);
    return out;
  }

  /// External kind: loads `<external_dir>/<key>.lat`.
  LatentTensor encode_key(const std::string& key) const {
    require_ready();
    if (cfg_.kind != CodecKind::ExternalPretrained) throw std::logic_error("encode_key needs an external codec");
    auto z = read_latent_file(std::filesystem::path(cfg_.external_dir) / (key + ".lat"));
    if (z.channels != cfg_.latent_channels)
      throw ShapeError("external latent " + key + " has " + std::to_string(z.channels) + " channels, expected " +
                       std::to_string(cfg_.latent_channels));
    return z;
  }

  /// Stable hash of configuration and weights; stored in model checkpoints.
  std::uint64_t fingerprint() const {
    std::string cfgtxt = std::string(to_string(cfg_.kind)) + "|" + std::to_string(cfg_.downsample_factor) + "|" +
                         std::to_string(cfg_.image_channels) + "|" + std::to_string(latent_channels());
    std::uint64_t h = fnv1a(cfgtxt.data(), cfgtxt.size());
    if (net_) {
      for (const auto& [name, v] : net_->params().entries())
        h = fnv1a(v->value.data(), v->value.size() * sizeof(float), fnv1a(name.data(), name.size(), h));
      h = fnv1a(shift_.data(), shift_.size() * sizeof(double), h);
      h = fnv1a(scale_.data(), scale_.size() * sizeof(double), h);
    }
    return h;
  }

  void save(const std::filesystem::path& path) const {
    Archive a;
    a.meta["type"] = "codec";
    a.meta["kind"] = std::string(to_string(cfg_.kind));
    a.meta["downsample_factor"] = cfg_.downsample_factor;
    a.meta["image_channels"] = cfg_.image_channels;
    a.meta["latent_channels"] = cfg_.latent_channels;
    a.meta["kl_weight"] = cfg_.kl_weight;
    a.meta["hidden_channels"] = cfg_.hidden_channels;
    a.meta["external_dir"] = cfg_.external_dir;
    a.meta["fitted"] = ready_;
    a.meta["validation_mae"] = report_.validation_mae;
    a.meta["validation_max_mae"] = report_.validation_max_mae;
    a.meta["validation_threshold"] = report_.validation_threshold;
    a.meta["raw_latent_std"] = report_.raw_latent_std;
    if (net_) {
      for (const auto& [name, v] : net_->params().entries()) {
        const auto s = v->value.shape();
        a.put_range("param/" + name, {s[0], s[1], s[2], s[3]}, v->value.values().begin(), v->value.values().end());
      }
      a.put("latent/shift", {static_cast<int>(shift_.size())}, shift_, true);
      a.put("latent/scale", {static_cast<int>(scale_.size())}, scale_, true);
    }
    a.save(path);
  }

  static LatentCodec load(const std::filesystem::path& path) {
    auto a = Archive::load(path);
    if (a.meta.value("type", "") != "codec") throw ArchiveError(path.string() + " is not a codec checkpoint");
    CodecConfig cfg;
    cfg.kind = codec_kind_from_string(a.meta.at("kind").get<std::string>());
    cfg.downsample_factor = a.meta.at("downsample_factor");
    cfg.image_channels = a.meta.at("image_channels");
    cfg.latent_channels = a.meta.at("latent_channels");
    cfg.kl_weight = a.meta.at("kl_weight");
    cfg.hidden_channels = a.meta.at("hidden_channels");
    cfg.external_dir = a.meta.value("external_dir", "");
    cfg.validate();
    LatentCodec c;
    c.cfg_ = cfg;
    c.ready_ = a.meta.value("fitted", false);
    c.report_.validation_mae = a.meta.value("validation_mae", 0.0);
    c.report_.validation_max_mae = a.meta.value("validation_max_mae", 0.0);
    c.report_.validation_threshold = a.meta.value("validation_threshold", 0.0);
    c.report_.raw_latent_std = a.meta.value("raw_latent_std", 0.0);
    if (cfg.kind == CodecKind::TrainedAutoencoder && c.ready_) {
      c.net_ = std::make_shared<AutoencoderNet<float>>(cfg, 0);
      for (auto& [name, v] : c.net_->params().entries()) {
        const auto& blob = a.get("param/" + name);
        if (blob.values.size() != v->value.size()) throw ArchiveError("codec tensor size mismatch for " + name);
        std::copy(blob.values.begin(), blob.values.end(), v->value.values().begin());
      }
      c.shift_ = a.get("latent/shift").values;
      c.scale_ = a.get("latent/scale").values;
    }
    return c;
  }

  template <class Images>
  friend LatentCodec fit_autoencoder(const Images& normal_images, const CodecConfig& cfg, Rng& rng);

 private:
  void require_ready() const {
    if (!ready_) throw UninitializedCodecError("codec has not been fitted or loaded");
  }
  void check_image(const ImageTensor& im) const {
    const int f = cfg_.downsample_factor;
    if (im.channels != cfg_.image_channels || im.height % f != 0 || im.width % f != 0 || im.height < f ||
        im.width < f)
      throw ShapeError("image " + im.shape_str() + " incompatible with codec (factor " + std::to_string(f) + ", " +
                       std::to_string(cfg_.image_channels) + " channels)");
  }
  void standardize(LatentTensor& z) const {
    for (int c = 0; c < z.channels; ++c)
      for (int y = 0; y < z.height; ++y)
        for (int x = 0; x < z.width; ++x)
          z.at(c, y, x) = static_cast<float>((z.at(c, y, x) - shift_[c]) / scale_[c]);
  }
  void destandardize(LatentTensor& z) const {
    for (int c = 0; c < z.channels; ++c)
      for (int y = 0; y < z.height; ++y)
        for (int x = 0; x < z.width; ++x)
          z.at(c, y, x) = static_cast<float>(z.at(c, y, x) * scale_[c] + shift_[c]);
  }

  CodecConfig cfg_{};
  bool ready_ = false;
  std::shared_ptr<AutoencoderNet<float>> net_;
  std::vector<double> shift_, scale_;
  CodecFitReport report_;
};

/// Fits the desk-scale autoencoder on normal images with reconstruction MSE plus
/// a KL term toward a standard normal latent, then records validation error and
/// a per-channel standardization of the posterior means.
template <class Images>
LatentCodec fit_autoencoder(const Images& normal_images, const CodecConfig& cfg, Rng& rng) {
  if (cfg.kind != CodecKind::TrainedAutoencoder) throw std::invalid_argument("fit_autoencoder needs trained kind");
  cfg.validate();
  const std::vector<ImageTensor> images(std::begin(normal_images), std::end(normal_images));
  if (images.empty()) throw std::invalid_argument("fit_autoencoder needs at least one image");

  LatentCodec codec = LatentCodec::untrained(cfg);
  for (const auto& im : images) codec.check_image(im);

  std::vector<int> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  std::vector<ImageTensor> train, val;
  const std::size_t n_val = images.size() >= 5 ? std::max<std::size_t>(1, images.size() / 10) : 0;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(images[order[i]]);
  if (val.empty()) val = train;

  auto net = std::make_shared<AutoencoderNet<float>>(cfg, rng.next());
  nn::AdamW<float> opt(net->params(), {0.9, 0.999, 1e-8, 0.0});
  const int bs = std::min<int>(cfg.batch_size, static_cast<int>(train.size()));
  CodecFitReport report;
  for (int step = 0; step < cfg.train_steps; ++step) {
    std::vector<ImageTensor> batch;
    for (int b = 0; b < bs; ++b) batch.push_back(train[rng.uniform_int(0, static_cast<int>(train.size()) - 1)]);
    Tensor<float> x = stack<float>(batch);
    auto [mu, logvar] = net->encode(ag::constant(x));
    Tensor<float> noise(mu->value.channels(), mu->value.batch(), mu->value.height(), mu->value.width());
    for (auto& v : noise.values()) v = static_cast<float>(rng.normal());
    auto z = ag::reparameterize(mu, logvar, noise);
    auto loss = ag::mse_loss(net->decode(z), x);
    if (cfg.kl_weight > 0) loss = ag::add(loss, ag::scale(ag::kl_standard_normal(mu, logvar), float(cfg.kl_weight)));
    const double lv = loss->value[0];
    if (!std::isfinite(lv)) throw DivergenceError("autoencoder loss became non-finite at step " + std::to_string(step));
    report.loss_history.push_back(lv);
    net->params().zero_grad();
    ag::backward(loss);
    const double lr = cfg.learning_rate * (step < 50 ? (step + 1) / 50.0 : 1.0);
    opt.step(net->params(), lr);
  }

  // Standardize posterior means over the validation set.
  codec.net_ = net;
  codec.ready_ = true;
  const int cl = cfg.latent_channels;
  codec.shift_.assign(cl, 0.0);
  codec.scale_.assign(cl, 1.0);
  std::vector<double> sum(cl, 0.0), sq(cl, 0.0);
  double count = 0, all_sum = 0, all_sq = 0;
  {
    ag::NoGradGuard guard;
    for (const auto& im : val) {
      auto [mu, _] = net->encode(ag::constant(stack<float>(std::vector<ImageTensor>{im})));
      if (!mu->value.all_finite()) throw DivergenceError("autoencoder produced non-finite latents");
      const int plane = mu->value.plane();
      for (int c = 0; c < cl; ++c)
        for (int i = 0; i < plane; ++i) {
          double v = mu->value[static_cast<std::size_t>(c) * plane + i];
          sum[c] += v;
          sq[c] += v * v;
          all_sum += v;
          all_sq += v * v;
        }
      count += plane;
    }
  }
  for (int c = 0; c < cl; ++c) {
    double m = sum[c] / count;
    double var = std::max(sq[c] / count - m * m, 0.0);
    codec.shift_[c] = m;
    codec.scale_[c] = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  }
  const double all_mean = all_sum / (count * cl);
  report.raw_latent_std = std::sqrt(std::max(all_sq / (count * cl) - all_mean * all_mean, 0.0));

  double mae_sum = 0, mae_max = 0;
  for (const auto& im : val) {
    ImageTensor rec = codec.decode(codec.encode(im));
    double e = 0;
    for (std::size_t i = 0; i < im.size(); ++i) e += std::abs(rec.values[i] - im.values[i]);
    e /= static_cast<double>(im.size());
    mae_sum += e;
    mae_max = std::max(mae_max, e);
  }
  report.validation_mae = mae_sum / static_cast<double>(val.size());
  report.validation_max_mae = mae_max;
  report.validation_threshold = 1.5 * mae_max;
  codec.report_ = std::move(report);
  return codec;
}

}  // namespace decodiff
