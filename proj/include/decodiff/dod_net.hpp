#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decodiff/nn.hpp"

namespace decodiff {

struct ModelStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModelSize { XS, S, M, L, XL };

inline constexpr std::array<std::pair<ModelSize, int>, 5> kModelSizes{
    {{ModelSize::XS, 64}, {ModelSize::S, 128}, {ModelSize::M, 192}, {ModelSize::L, 256}, {ModelSize::XL, 320}}};

inline int base_channels(ModelSize s) {
  for (auto [k, c] : kModelSizes)
    if (k == s) return c;
  throw std::invalid_argument("unknown model size");
}

inline std::string_view to_string(ModelSize s) {
  switch (s) {
    case ModelSize::XS: return "XS";
    case ModelSize::S: return "S";
    case ModelSize::M: return "M";
    case ModelSize::L: return "L";
    case ModelSize::XL: return "XL";
  }
  return "?";
}

inline ModelSize model_size_from_string(std::string_view s) {
  for (auto [k, c] : kModelSizes)
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown model size '" + std::string(s) + "'");
}

inline ModelSize model_size_from_channels(int channels) {
  for (auto [k, c] : kModelSizes)
    if (c == channels) return k;
  throw std::invalid_argument("no model size with " + std::to_string(channels) + " channels");
}

struct DoDNetConfig {
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 4};
  std::vector<int> attention_resolutions{4, 2, 1};
  int num_res_blocks = 2;
  double dropout = 0.4;
  int time_embed_dim = 0;  // 0 selects 4 * base_channels
  int latent_channels = 4;
  int head_channels = 64;
  bool zero_init = true;

  int embed_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
  int depth_factor() const { return 1 << (static_cast<int>(channel_mult.size()) - 1); }
  int heads_for(int channels) const { return std::max(1, channels / head_channels); }

  void validate() const {
    if (base_channels <= 0) throw std::invalid_argument("base_channels must be positive");
    if (channel_mult.empty()) throw std::invalid_argument("channel_mult must not be empty");
    if (num_res_blocks < 1) throw std::invalid_argument("num_res_blocks must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
    if (latent_channels <= 0) throw std::invalid_argument("latent_channels must be positive");
    if (embed_dim() % 2 != 0 || base_channels % 2 != 0)
      throw std::invalid_argument("embedding dimensions must be even");
    for (int m : channel_mult) {
      int ch = m * base_channels;
      if (m <= 0 || ch % heads_for(ch) != 0) throw std::invalid_argument("invalid channel_mult entry");
    }
  }
};

/// Sinusoidal embedding: [sin(t * f_i) ..., cos(t * f_i) ...] with
/// f_i = 10000^(-i / (dim/2)).
inline std::vector<double> timestep_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("timestep_embedding needs an even dimension");
  if (t < 0) throw std::invalid_argument("timestep must be non-negative");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

/// Attention UNet predicting the direction of deviation from a corrupted
/// latent and its timestep. Layout follows the latent-diffusion UNet: input
/// blocks with skip outputs, a middle res/attn/res stack, and output blocks
/// that consume the skips in reverse.
template <class Real>
class DoDNet {
 public:
  using Var = ag::Var<Real>;

  explicit DoDNet(DoDNetConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
  }

  const DoDNetConfig& config() const { return cfg_; }
  nn::ParamStore<Real>& params() { return params_; }
  const nn::ParamStore<Real>& params() const { return params_; }

  void check_input(int channels, int height, int width) const {
    if (channels != cfg_.latent_channels)
      throw ShapeError("DoDNet expects " + std::to_string(cfg_.latent_channels) + " latent channels, got " +
                       std::to_string(channels));
    const int f = cfg_.depth_factor();
    if (height % f != 0 || width % f != 0 || height < f || width < f)
      throw ShapeError("latent spatial size must be a multiple of " + std::to_string(f));
  }

  /// Differentiable forward pass. `x` is (C', N, H', W'); `timesteps` has N
  /// entries. Dropout is active only when `training` is set.
  Var forward(const Var& x, const std::vector<int>& timesteps, bool training, Rng& dropout_rng) const {
    const auto& xv = x->value;
    check_input(xv.channels(), xv.height(), xv.width());
    if (static_cast<int>(timesteps.size()) != xv.batch()) throw ShapeError("one timestep per sample required");

    Tensor<Real> temb_in(cfg_.base_channels, xv.batch(), 1, 1);
    for (int n = 0; n < xv.batch(); ++n) {
      auto e = timestep_embedding(timesteps[n], cfg_.base_channels);
      for (int i = 0; i < cfg_.base_channels; ++i) temb_in(i, n, 0, 0) = static_cast<Real>(e[i]);
    }
    Var emb = time_fc2_(ag::silu(time_fc1_(ag::constant(std::move(temb_in)))));

    Ctx ctx{emb, training, dropout_rng};
    std::vector<Var> skips;
    Var h = x;
    for (const auto& b : input_blocks_) {
      h = run(b, h, ctx);
      skips.push_back(h);
    }
    h = run(middle_, h, ctx);
    for (const auto& b : output_blocks_) {
      h = ag::concat_channels(h, skips.back());
      skips.pop_back();
      h = run(b, h, ctx);
    }
    return out_conv_(ag::silu(out_norm_(h)));
  }

  /// Inference-mode prediction for a batch of latents sharing timestep `t`.
  Tensor<Real> predict(const Tensor<Real>& z_t, int t) const {
    ag::NoGradGuard guard;
    Rng unused(0);
    std::vector<int> ts(z_t.batch(), t);
    auto out = forward(ag::constant(z_t), ts, false, unused);
    if (!out->value.all_finite()) throw ModelStateError("non-finite activations in DoD prediction");
    return std::move(out->value);
  }

 private:
  struct ResBlock {
    nn::GroupNorm<Real> norm1, norm2;
    nn::Conv2d<Real> conv1, conv2, emb_proj;
    std::optional<nn::Conv2d<Real>> skip;
  };
  struct AttnBlock {
    nn::GroupNorm<Real> norm;
    nn::Conv2d<Real> qkv, proj;
    int heads = 1;
  };
  struct Block {
    std::optional<nn::Conv2d<Real>> conv;  // stem or strided downsample
    std::vector<ResBlock> res;
    std::vector<AttnBlock> attn;  // applied after res[i] when present (size 0 or res.size())
    std::optional<nn::Conv2d<Real>> upsample;
  };
  struct Ctx {
    const Var& emb;
    bool training;
    Rng& rng;
  };

  ResBlock make_res(const std::string& name, int cin, int cout, Rng& rng) {
    ResBlock r;
    r.norm1 = nn::GroupNorm<Real>::make(params_, name + ".norm1", cin);
    r.conv1 = nn::Conv2d<Real>::make(params_, name + ".conv1", cin, cout, 3, 1, rng);
    r.emb_proj = nn::Conv2d<Real>::make(params_, name + ".emb", cfg_.embed_dim(), cout, 1, 1, rng);
    r.norm2 = nn::GroupNorm<Real>::make(params_, name + ".norm2", cout);
    r.conv2 = nn::Conv2d<Real>::make(params_, name + ".conv2", cout, cout, 3, 1, rng, cfg_.zero_init);
    if (cin != cout) r.skip = nn::Conv2d<Real>::make(params_, name + ".skip", cin, cout, 1, 1, rng);
    return r;
  }

  AttnBlock make_attn(const std::string& name, int ch, Rng& rng) {
    AttnBlock a;
    a.norm = nn::GroupNorm<Real>::make(params_, name + ".norm", ch);
    a.qkv = nn::Conv2d<Real>::make(params_, name + ".qkv", ch, 3 * ch, 1, 1, rng);
    a.proj = nn::Conv2d<Real>::make(params_, name + ".proj", ch, ch, 1, 1, rng, cfg_.zero_init);
    a.heads = cfg_.heads_for(ch);
    return a;
  }

  bool attends_at(int ds) const {
    const auto& a = cfg_.attention_resolutions;
    return std::find(a.begin(), a.end(), ds) != a.end();
  }

  void build(Rng& rng) {
    const int base = cfg_.base_channels;
    const int ed = cfg_.embed_dim();
    time_fc1_ = nn::Conv2d<Real>::make(params_, "time.fc1", base, ed, 1, 1, rng);
    time_fc2_ = nn::Conv2d<Real>::make(params_, "time.fc2", ed, ed, 1, 1, rng);

    Block stem;
    stem.conv = nn::Conv2d<Real>::make(params_, "in.conv", cfg_.latent_channels, base, 3, 1, rng);
    input_blocks_.push_back(std::move(stem));

    std::vector<int> skip_ch{base};
    int ch = base;
    int ds = 1;
    const int levels = static_cast<int>(cfg_.channel_mult.size());
    for (int lvl = 0; lvl < levels; ++lvl) {
      const int out = cfg_.channel_mult[lvl] * base;
      for (int i = 0; i < cfg_.num_res_blocks; ++i) {
        const std::string name = "down." + std::to_string(lvl) + "." + std::to_string(i);
        Block b;
        b.res.push_back(make_res(name + ".res", ch, out, rng));
        ch = out;
        if (attends_at(ds)) b.attn.push_back(make_attn(name + ".attn", ch, rng));
        input_blocks_.push_back(std::move(b));
        skip_ch.push_back(ch);
      }
      if (lvl + 1 < levels) {
        Block d;
        d.conv = nn::Conv2d<Real>::make(params_, "down." + std::to_string(lvl) + ".downsample", ch, ch, 3, 2, rng);
        input_blocks_.push_back(std::move(d));
        skip_ch.push_back(ch);
        ds *= 2;
      }
    }

    middle_.res.push_back(make_res("mid.res0", ch, ch, rng));
    middle_.attn.push_back(make_attn("mid.attn", ch, rng));
    middle_.res.push_back(make_res("mid.res1", ch, ch, rng));

    for (int lvl = levels - 1; lvl >= 0; --lvl) {
      const int out = cfg_.channel_mult[lvl] * base;
      for (int i = 0; i <= cfg_.num_res_blocks; ++i) {
        const std::string name = "up." + std::to_string(lvl) + "." + std::to_string(i);
        Block b;
        const int sc = skip_ch.back();
        skip_ch.pop_back();
        b.res.push_back(make_res(name + ".res", ch + sc, out, rng));
        ch = out;
        if (attends_at(ds)) b.attn.push_back(make_attn(name + ".attn", ch, rng));
        if (lvl > 0 && i == cfg_.num_res_blocks) {
          b.upsample = nn::Conv2d<Real>::make(params_, name + ".upsample", ch, ch, 3, 1, rng);
          ds /= 2;
        }
        output_blocks_.push_back(std::move(b));
      }
    }
    out_norm_ = nn::GroupNorm<Real>::make(params_, "out.norm", ch);
    out_conv_ = nn::Conv2d<Real>::make(params_, "out.conv", ch, cfg_.latent_channels, 3, 1, rng, cfg_.zero_init);
  }

  Var run_res(const ResBlock& r, const Var& x, const Ctx& ctx) const {
    Var h = r.conv1(ag::silu(r.norm1(x)));
    h = ag::add_channel_bias(h, r.emb_proj(ag::silu(ctx.emb)));
    h = ag::silu(r.norm2(h));
    h = ag::dropout(h, cfg_.dropout, ctx.training, ctx.rng);
    h = r.conv2(h);
    return ag::add(r.skip ? (*r.skip)(x) : x, h);
  }

  Var run_attn(const AttnBlock& a, const Var& x) const {
    Var h = ag::spatial_attention(a.qkv(a.norm(x)), a.heads);
    return ag::add(x, a.proj(h));
  }

  Var run(const Block& b, Var h, const Ctx& ctx) const {
    if (b.conv) h = (*b.conv)(h);
    for (std::size_t i = 0; i < b.res.size(); ++i) {
      h = run_res(b.res[i], h, ctx);
      if (i < b.attn.size()) h = run_attn(b.attn[i], h);
    }
    if (b.upsample) h = (*b.upsample)(ag::upsample_nearest2(h));
    return h;
  }

  DoDNetConfig cfg_;
  nn::ParamStore<Real> params_;
  nn::Conv2d<Real> time_fc1_, time_fc2_;
  std::vector<Block> input_blocks_;
  Block middle_;
  std::vector<Block> output_blocks_;
  nn::GroupNorm<Real> out_norm_;
  nn::Conv2d<Real> out_conv_;
};

}  // namespace decodiff
