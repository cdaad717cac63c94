#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/codec.hpp"
#include "decodiff/corrector.hpp"
#include "decodiff/datasets.hpp"
#include "decodiff/scoring.hpp"
#include "decodiff/trainer.hpp"

namespace decodiff {

namespace fs = std::filesystem;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kOutputRootEnv = "DECODIFF_OUTPUT_ROOT";

struct ConfigKey {
  std::string name;
  nlohmann::json default_value;
  std::string help;
};

/// Every tunable of a run, as flat dotted keys. Config files use the nested
/// form ({"train": {"epochs": 5}}); flags use the flat name (--train.epochs 5).
inline const std::vector<ConfigKey>& config_keys() {
  using J = nlohmann::json;
  static const std::vector<ConfigKey> keys{
      {"seed", 0, "root seed for every random stream"},
      {"output_dir", "runs/default", "run directory (relative paths resolve under $DECODIFF_OUTPUT_ROOT when set)"},
      {"dataset.root", "", "MVTec-layout dataset root"},
      {"dataset.categories", J::array(), "categories to use (empty: all)"},
      {"dataset.resolution", 256, "working image resolution"},
      {"codec.kind", "patchify", "patchify | trained-autoencoder | external-pretrained"},
      {"codec.downsample_factor", 8, "spatial factor f (4 or 8)"},
      {"codec.latent_channels", 4, "latent channels of trained/external codecs"},
      {"codec.kl_weight", 1e-3, "KL weight of the trained autoencoder"},
      {"codec.hidden_channels", 32, "autoencoder width"},
      {"codec.train_steps", 1500, "autoencoder optimization steps"},
      {"codec.batch_size", 16, "autoencoder batch size"},
      {"codec.learning_rate", 2e-3, "autoencoder learning rate"},
      {"codec.external_dir", "", "directory of precomputed latent files"},
      {"codec.checkpoint", "", "codec checkpoint path (default: <output_dir>/codec.dcdf)"},
      {"model.size", "L", "XS | S | M | L | XL"},
      {"model.dropout", 0.4, "UNet dropout"},
      {"model.checkpoint", "", "model checkpoint (default: <output_dir>/checkpoint_last.dcdf)"},
      {"train.epochs", 800, "training epochs"},
      {"train.batch_size", 128, "training batch size"},
      {"train.lr_init", 1e-4, "peak learning rate"},
      {"train.lr_min", 1e-5, "final learning rate"},
      {"train.warmup_steps", -1, "warmup steps (negative: 5% of total)"},
      {"train.weight_decay", 0.01, "AdamW weight decay"},
      {"train.checkpoint_every", 10, "epochs between checkpoints"},
      {"train.resume", false, "continue from model.checkpoint"},
      {"corruption.r_mask", 0.7, "R_mask: visible ratio drawn from U[0, R_mask]"},
      {"corruption.r_shuffle", 0.3, "R_shuffle: shuffled share of noisy patches from U[0, R_shuffle]"},
      {"corruption.patch_sizes", J::array({1, 2, 4, 8}), "latent patch sizes"},
      {"schedule.steps", 10, "diffusion steps T"},
      {"schedule.offset", 0.008, "cosine schedule offset s"},
      {"correction.steps", 5, "reverse correction steps"},
      {"correction.strategy", "progressive", "progressive | direct_replace"},
      {"scoring.fusion", "geometric", "geometric | arithmetic | pixel_only | latent_only"},
      {"scoring.gamma_l", 0.4, "latent threshold (number or \"none\")"},
      {"scoring.gamma_p", 0.4, "pixel threshold (number or \"none\")"},
      {"scoring.sigma", 4.0, "image-score smoothing sigma"},
      {"scoring.channel_norm", "mean_abs", "mean_abs | l2"},
      {"scoring.upsampling", "bilinear", "bilinear | nearest"},
      {"metrics.fpr_limit", 0.3, "AUPRO integration limit"},
      {"eval.batch_size", 32, "correction batch size"},
      {"eval.write_maps", true, "write per-image maps and overlays"},
      {"eval.oracle_dod", false, "test-only: analytic DoD on corrupted normals"},
      {"synthetic.n_categories", 3, "synthetic categories"},
      {"synthetic.images_per_split", 60, "train images per category"},
      {"synthetic.test_images", 0, "test images per category (0: images_per_split)"},
      {"synthetic.anomaly_kinds", J::array({"rect_occlusion", "color_shift", "patch_swap"}), "defect kinds"},
      {"synthetic.area_frac_min", 0.03, "smallest defect area fraction"},
      {"synthetic.area_frac_max", 0.10, "largest defect area fraction"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  const nlohmann::json& at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  template <class T>
  T get(const std::string& key) const {
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  /// Type-checked assignment; integers are accepted where reals are expected,
  /// and gammas additionally accept "none".
  void set(const std::string& key, nlohmann::json v) {
    const auto& cur = at(key);
    const bool gamma = key == "scoring.gamma_l" || key == "scoring.gamma_p";
    bool ok = false;
    if (gamma && v.is_string()) ok = v == "none";
    else if (cur.is_number_float()) ok = v.is_number();
    else if (cur.is_number_integer()) ok = v.is_number_integer();
    else ok = cur.type() == v.type();
    if (!ok) throw ConfigError("config key '" + key + "' expects " + cur.type_name() + ", got " + v.dump());
    if (cur.is_number_float() && v.is_number()) v = v.get<double>();
    values_[key] = std::move(v);
  }

  /// Flag form: strings are taken verbatim; everything else is parsed as JSON.
  void set_from_string(const std::string& key, const std::string& text) {
    const auto& cur = at(key);
    if (cur.is_string() || text == "none") return set(key, text);
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    }
    set(key, std::move(v));
  }

  void merge_json(const nlohmann::json& nested, const std::string& prefix = "") {
    if (!nested.is_object()) throw ConfigError("config file must contain a JSON object");
    for (const auto& [k, v] : nested.items()) {
      const std::string name = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) merge_json(v, name);
      else set(name, v);
    }
  }

  void merge_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    merge_json(j);
  }

  /// "desk": XS model on a 64 px synthetic benchmark with a patchify codec,
  /// sized to train on one CPU core in minutes. "full": the paper defaults.
  void apply_preset(const std::string& name) {
    if (name == "full") return;
    if (name != "desk") throw ConfigError("unknown preset '" + name + "'");
    set("dataset.resolution", 64);
    set("codec.kind", "patchify");
    set("codec.downsample_factor", 8);
    set("model.size", "XS");
    set("model.dropout", 0.1);
    set("train.epochs", 50);
    set("train.batch_size", 32);
    set("train.lr_init", 5e-4);
    set("train.lr_min", 1e-5);
    set("train.checkpoint_every", 10);
    set("eval.batch_size", 32);
  }

  nlohmann::json nested() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : values_) {
      nlohmann::json* node = &out;
      std::size_t start = 0, dot;
      while ((dot = k.find('.', start)) != std::string::npos) {
        node = &(*node)[k.substr(start, dot - start)];
        start = dot + 1;
      }
      (*node)[k.substr(start)] = v;
    }
    return out;
  }

  // ------------------------------------------------------------ typed views

  /// output_dir, resolved against $DECODIFF_OUTPUT_ROOT when it is relative.
  fs::path output_dir() const {
    fs::path p = get<std::string>("output_dir");
    if (p.is_relative())
      if (const char* root = std::getenv(kOutputRootEnv); root && *root) p = fs::path(root) / p;
    return p;
  }
  fs::path codec_checkpoint() const {
    auto s = get<std::string>("codec.checkpoint");
    return s.empty() ? output_dir() / "codec.dcdf" : fs::path(s);
  }
  fs::path model_checkpoint() const {
    auto s = get<std::string>("model.checkpoint");
    return s.empty() ? output_dir() / "checkpoint_last.dcdf" : fs::path(s);
  }
  fs::path dataset_root() const {
    auto s = get<std::string>("dataset.root");
    return s.empty() ? output_dir() / "data" : fs::path(s);
  }
  std::vector<std::string> categories() const { return get<std::vector<std::string>>("dataset.categories"); }
  int resolution() const { return get<int>("dataset.resolution"); }
  std::uint64_t seed() const { return get<std::uint64_t>("seed"); }

  CodecConfig codec() const {
    CodecConfig c;
    c.kind = codec_kind_from_string(get<std::string>("codec.kind"));
    c.downsample_factor = get<int>("codec.downsample_factor");
    c.latent_channels = get<int>("codec.latent_channels");
    c.kl_weight = get<double>("codec.kl_weight");
    c.hidden_channels = get<int>("codec.hidden_channels");
    c.train_steps = get<int>("codec.train_steps");
    c.batch_size = get<int>("codec.batch_size");
    c.learning_rate = get<double>("codec.learning_rate");
    c.external_dir = get<std::string>("codec.external_dir");
    c.seed = derive_seed(seed(), {0x636f646563ULL});
    return c;
  }

  CorruptionConfig corruption() const {
    CorruptionConfig c;
    c.r_mask_max = get<double>("corruption.r_mask");
    c.r_shuffle_max = get<double>("corruption.r_shuffle");
    c.patch_sizes = get<std::vector<int>>("corruption.patch_sizes");
    return c;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.epochs = get<int>("train.epochs");
    t.batch_size = get<int>("train.batch_size");
    t.lr_init = get<double>("train.lr_init");
    t.lr_min = get<double>("train.lr_min");
    t.warmup_steps = get<int>("train.warmup_steps");
    t.seed = seed();
    t.model_size = model_size_from_string(get<std::string>("model.size"));
    t.corruption = corruption();
    t.checkpoint_every = get<int>("train.checkpoint_every");
    t.adamw.weight_decay = get<double>("train.weight_decay");
    return t;
  }

  DoDNetConfig model(int latent_channels) const {
    DoDNetConfig m = dod_config_for(model_size_from_string(get<std::string>("model.size")), latent_channels);
    m.dropout = get<double>("model.dropout");
    return m;
  }

  CorrectionStrategy strategy() const { return strategy_from_string(get<std::string>("correction.strategy")); }
  int correction_steps() const { return get<int>("correction.steps"); }
  Fusion fusion() const { return fusion_from_string(get<std::string>("scoring.fusion")); }
  std::optional<double> gamma(const std::string& key) const {
    const auto& v = at(key);
    if (v.is_string()) return std::nullopt;
    return v.get<double>();
  }
  ChannelNorm channel_norm() const { return channel_norm_from_string(get<std::string>("scoring.channel_norm")); }
  Upsampling upsampling() const { return upsampling_from_string(get<std::string>("scoring.upsampling")); }

  SyntheticConfig synthetic() const {
    SyntheticConfig s;
    s.n_categories = get<int>("synthetic.n_categories");
    s.images_per_split = get<int>("synthetic.images_per_split");
    s.test_images = get<int>("synthetic.test_images");
    s.resolution = resolution();
    s.anomaly_kinds.clear();
    for (const auto& k : get<std::vector<std::string>>("synthetic.anomaly_kinds"))
      s.anomaly_kinds.push_back(anomaly_kind_from_string(k));
    s.area_frac_min = get<double>("synthetic.area_frac_min");
    s.area_frac_max = get<double>("synthetic.area_frac_max");
    s.seed = derive_seed(seed(), {0x73796e7468ULL});
    return s;
  }

  /// Cross-module consistency checks; every command runs this before any I/O.
  void validate() const {
    try {
      const auto c = codec();
      c.validate();
      const int res = resolution();
      if (res <= 0 || res % c.downsample_factor != 0)
        throw ConfigError("resolution " + std::to_string(res) + " is not divisible by codec factor " +
                          std::to_string(c.downsample_factor));
      const int latent = res / c.downsample_factor;
      const auto m = model(c.effective_latent_channels());
      m.validate();
      if (latent % m.depth_factor() != 0)
        throw ConfigError("latent size " + std::to_string(latent) + " is not divisible by the UNet depth factor " +
                          std::to_string(m.depth_factor()));
      const auto t = train();
      t.validate();
      for (int p : t.corruption.patch_sizes)
        if (latent % p != 0)
          throw ConfigError("patch size " + std::to_string(p) + " does not tile the " + std::to_string(latent) +
                            "x" + std::to_string(latent) + " latent grid");
      const int T = get<int>("schedule.steps");
      build_cosine_schedule(T, get<double>("schedule.offset"));
      const int steps = correction_steps();
      if (steps < 1 || steps > T) throw ConfigError("correction.steps must lie in [1, schedule.steps]");
      strategy();
      fusion();
      for (const auto* k : {"scoring.gamma_l", "scoring.gamma_p"})
        if (auto g = gamma(k); g && !(*g > 0.0)) throw ConfigError(std::string(k) + " must be positive or \"none\"");
      if (!(get<double>("scoring.sigma") >= 0.0)) throw ConfigError("scoring.sigma must be non-negative");
      channel_norm();
      upsampling();
      const double fpr = get<double>("metrics.fpr_limit");
      if (!(fpr > 0.0 && fpr <= 1.0)) throw ConfigError("metrics.fpr_limit must be in (0, 1]");
      if (get<int>("eval.batch_size") < 1) throw ConfigError("eval.batch_size must be positive");
      synthetic().validate(c.downsample_factor);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    } catch (const std::out_of_range& e) {
      throw ConfigError(e.what());
    }
  }

 private:
  std::map<std::string, nlohmann::json> values_;
};

}  // namespace decodiff
