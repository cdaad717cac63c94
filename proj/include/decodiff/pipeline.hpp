#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "decodiff/codec.hpp"
#include "decodiff/config.hpp"
#include "decodiff/corrector.hpp"
#include "decodiff/datasets.hpp"
#include "decodiff/image_io.hpp"
#include "decodiff/metrics.hpp"
#include "decodiff/scoring.hpp"
#include "decodiff/trainer.hpp"

namespace decodiff {

namespace fs = std::filesystem;

inline void record_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.nested().dump(2) << "\n";
}

// ------------------------------------------------------------------- dataset

/// The configured dataset root; an unset root points at <output_dir>/data,
/// which is filled with the synthetic benchmark on first use.
inline fs::path ensure_dataset(const RunConfig& cfg) {
  const fs::path root = cfg.dataset_root();
  if (cfg.get<std::string>("dataset.root").empty() && !fs::exists(root / "manifest.json"))
    synthesize_toy_dataset(cfg.synthetic(), root, cfg.codec().downsample_factor);
  return root;
}

struct Item {
  SampleRecord record;
  ImageTensor x0;
  std::vector<std::uint8_t> mask;  // resolution^2, empty for normal images
  LatentTensor z0;                 // latent fed to the corrector
  std::optional<LatentTensor> oracle_clean;
};

inline std::vector<SampleRecord> select(const std::vector<SampleRecord>& all, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : all)
    if (r.split == split) out.push_back(r);
  return out;
}

inline std::vector<LatentTensor> encode_all(const LatentCodec& codec, const std::vector<Item>& items) {
  std::vector<LatentTensor> out;
  if (codec.kind() == CodecKind::ExternalPretrained) {
    for (const auto& it : items) out.push_back(codec.encode_key(it.record.key()));
    return out;
  }
  constexpr std::size_t chunk = 64;
  for (std::size_t i = 0; i < items.size(); i += chunk) {
    std::vector<ImageTensor> imgs;
    for (std::size_t j = i; j < std::min(items.size(), i + chunk); ++j) imgs.push_back(items[j].x0);
    for (auto& z : codec.encode_batch(imgs)) out.push_back(std::move(z));
  }
  return out;
}

inline std::vector<Item> load_items(const std::vector<SampleRecord>& records, int resolution, const LatentCodec* codec) {
  std::vector<Item> items;
  for (const auto& r : records) {
    Item it{r, preprocess(r.image_path, resolution), {}, {}, std::nullopt};
    if (r.mask_path) {
      it.mask = preprocess_mask(*r.mask_path, resolution);
      if (std::find(it.mask.begin(), it.mask.end(), 1) == it.mask.end())
        throw DatasetError("ground-truth mask is empty after preprocessing: " + r.mask_path->string());
    }
    items.push_back(std::move(it));
  }
  if (codec) {
    auto z = encode_all(*codec, items);
    for (std::size_t i = 0; i < items.size(); ++i) items[i].z0 = std::move(z[i]);
  }
  return items;
}

inline LatentCodec load_codec(const RunConfig& cfg) {
  const auto path = cfg.codec_checkpoint();
  if (!fs::exists(path)) throw ConfigError("codec checkpoint " + path.string() + " not found; run fit-codec first");
  return LatentCodec::load(path);
}

// ------------------------------------------------------------------ commands

inline void cmd_make_synthetic(const RunConfig& cfg) {
  cfg.validate();
  const fs::path root = cfg.dataset_root();
  synthesize_toy_dataset(cfg.synthetic(), root, cfg.codec().downsample_factor);
}

inline LatentCodec cmd_fit_codec(const RunConfig& cfg) {
  cfg.validate();
  const auto cc = cfg.codec();
  LatentCodec codec;
  switch (cc.kind) {
    case CodecKind::Patchify: codec = LatentCodec::patchify(cc.downsample_factor, cc.image_channels); break;
    case CodecKind::ExternalPretrained: codec = LatentCodec::external(cc); break;
    case CodecKind::TrainedAutoencoder: {
      const auto root = ensure_dataset(cfg);
      auto items = load_items(select(load_mvtec_layout(root, cfg.categories()), Split::Train), cfg.resolution(), nullptr);
      std::vector<ImageTensor> imgs;
      for (auto& it : items) imgs.push_back(std::move(it.x0));
      Rng rng(cc.seed);
      codec = fit_autoencoder(imgs, cc, rng);
      break;
    }
  }
  record_config(cfg, cfg.output_dir());
  codec.save(cfg.codec_checkpoint());
  return codec;
}

inline TrainResult cmd_train(const RunConfig& cfg, std::function<void(const LossRecord&)> on_step = {}) {
  cfg.validate();
  const LatentCodec codec = load_codec(cfg);
  const bool resume = cfg.get<bool>("train.resume");
  if (resume && !fs::exists(cfg.model_checkpoint()))
    throw ConfigError("cannot resume: " + cfg.model_checkpoint().string() + " not found");
  if (codec.latent_channels() != cfg.codec().effective_latent_channels() || codec.factor() != cfg.codec().downsample_factor)
    throw ConfigError("codec checkpoint does not match the codec configuration");
  const auto root = ensure_dataset(cfg);
  auto items = load_items(select(load_mvtec_layout(root, cfg.categories()), Split::Train), cfg.resolution(), &codec);
  if (items.empty()) throw DatasetError("no training images under " + root.string());
  std::vector<LatentTensor> latents;
  for (auto& it : items) latents.push_back(std::move(it.z0));

  TrainOptions opts;
  opts.out_dir = cfg.output_dir();
  if (resume) opts.resume_from = cfg.model_checkpoint();
  opts.model = cfg.model(codec.latent_channels());
  opts.schedule_steps = cfg.get<int>("schedule.steps");
  opts.schedule_offset = cfg.get<double>("schedule.offset");
  opts.codec_fingerprint = codec.fingerprint();
  opts.extra = {{"resolution", cfg.resolution()}, {"model_size", cfg.get<std::string>("model.size")}};
  opts.on_step = std::move(on_step);
  record_config(cfg, opts.out_dir);
  return train(latents, cfg.train(), opts);
}

// ---------------------------------------------------------------- evaluation

struct ScoringSettings {
  Fusion fusion = Fusion::Geometric;
  std::optional<double> gamma_l = 0.4, gamma_p = 0.4;
  double sigma = 4.0;
  ChannelNorm norm = ChannelNorm::MeanAbs;
  Upsampling up = Upsampling::Bilinear;

  static ScoringSettings from(const RunConfig& cfg) {
    return {cfg.fusion(), cfg.gamma("scoring.gamma_l"), cfg.gamma("scoring.gamma_p"), cfg.get<double>("scoring.sigma"),
            cfg.channel_norm(), cfg.upsampling()};
  }
};

struct Corrected {
  std::vector<LatentTensor> z;
  std::vector<ImageTensor> x;
};

/// Batched deviation correction of every item followed by decoding.
inline Corrected run_correction(const AnyPredictor& predictor, const LatentCodec& codec, const std::vector<Item>& items,
                                int steps, CorrectionStrategy strategy, const NoiseSchedule& schedule, int batch) {
  Corrected out;
  for (std::size_t i = 0; i < items.size(); i += batch) {
    LatentBatch z;
    for (std::size_t j = i; j < std::min(items.size(), i + batch); ++j) z.push_back(items[j].z0);
    auto [zt, _] = correct(predictor, z, steps, strategy, schedule);
    auto xt = codec.decode_batch(zt);
    for (std::size_t k = 0; k < zt.size(); ++k) {
      out.z.push_back(std::move(zt[k]));
      out.x.push_back(std::move(xt[k]));
    }
  }
  return out;
}

inline std::vector<AnomalyMap> score_items(const std::vector<Item>& items, const Corrected& c, const ScoringSettings& s) {
  std::vector<AnomalyMap> maps;
  for (std::size_t i = 0; i < items.size(); ++i)
    maps.push_back(fuse(compute_discrepancies(items[i].x0, c.x[i], items[i].z0, c.z[i], s.norm, s.up), s.fusion,
                        s.gamma_l, s.gamma_p, s.sigma));
  return maps;
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Metrics over one group of items; undefined metrics (a class missing) are NaN.
inline MetricRow compute_metrics(const std::vector<const Item*>& items, const std::vector<const AnomalyMap*>& maps,
                                 double fpr_limit) {
  MetricRow row{kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};
  LabeledScores img;
  for (std::size_t i = 0; i < items.size(); ++i) {
    img.scores.push_back(maps[i]->image_score);
    img.labels.push_back(items[i]->record.anomalous() ? 1 : 0);
  }
  const auto pos = std::count(img.labels.begin(), img.labels.end(), 1);
  if (pos > 0 && pos < static_cast<long>(img.labels.size())) {
    row.image_auroc = auroc(img);
    row.image_auprc = auprc(img);
    row.image_f1max = f1_max(img);
  }
  LabeledScores px;
  std::vector<PixelEvalCase> cases;
  bool any_pos = false, any_neg = false;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& scores = maps[i]->scores;
    std::vector<std::uint8_t> gt = items[i]->mask.empty() ? std::vector<std::uint8_t>(scores.size(), 0) : items[i]->mask;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      px.scores.push_back(scores.values[k]);
      px.labels.push_back(gt[k]);
      (gt[k] ? any_pos : any_neg) = true;
    }
    cases.push_back({scores, std::move(gt)});
  }
  if (any_pos && any_neg) {
    row.pixel_auroc = auroc(px);
    row.pixel_auprc = auprc(px);
    row.pixel_f1max = f1_max(px);
    row.pixel_aupro = aupro(cases, fpr_limit);
  }
  return row;
}

struct EvaluationReport {
  std::vector<std::pair<std::string, MetricRow>> rows;  // per category, then "average"

  const MetricRow& average() const { return rows.back().second; }
};

inline std::vector<double> metric_values(const MetricRow& r) {
  return {r.image_auroc, r.image_auprc, r.image_f1max, r.pixel_auroc, r.pixel_auprc, r.pixel_f1max, r.pixel_aupro};
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"image_auroc", "image_auprc", "image_f1max", "pixel_auroc",
                                              "pixel_auprc", "pixel_f1max", "pixel_aupro"};
  return names;
}

inline EvaluationReport build_report(const std::vector<Item>& items, const std::vector<AnomalyMap>& maps,
                                     double fpr_limit) {
  std::map<std::string, std::pair<std::vector<const Item*>, std::vector<const AnomalyMap*>>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& g = groups[items[i].record.category];
    g.first.push_back(&items[i]);
    g.second.push_back(&maps[i]);
  }
  EvaluationReport rep;
  std::vector<double> sum(7, 0.0), cnt(7, 0.0);
  for (const auto& [cat, g] : groups) {
    auto row = compute_metrics(g.first, g.second, fpr_limit);
    auto v = metric_values(row);
    for (int k = 0; k < 7; ++k)
      if (!std::isnan(v[k])) sum[k] += v[k], cnt[k] += 1;
    rep.rows.emplace_back(cat, row);
  }
  for (int k = 0; k < 7; ++k) sum[k] = cnt[k] > 0 ? sum[k] / cnt[k] : kNaN;
  rep.rows.emplace_back("average", MetricRow{sum[0], sum[1], sum[2], sum[3], sum[4], sum[5], sum[6]});
  return rep;
}

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_report_csv(const fs::path& path, const std::string& label_column,
                             const std::vector<std::pair<std::string, MetricRow>>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << label_column;
  for (const auto& n : metric_names()) out << "," << n;
  out << "\n";
  for (const auto& [label, row] : rows) {
    out << label;
    for (double v : metric_values(row)) out << "," << format_metric(v);
    out << "\n";
  }
}

/// 16-bit map (scores divided by max(1, peak) so unclipped fusions still fit),
/// a JSON sidecar, and a colour overlay.
inline void write_map_outputs(const fs::path& dir, const Item& item, const AnomalyMap& map, double sigma) {
  const std::string key = item.record.key();
  double peak = 0;
  for (double v : map.scores.values) peak = std::max(peak, v);
  const double scale = std::max(1.0, peak);
  Map2D stored = map.scores;
  for (auto& v : stored.values) v /= scale;
  write_map16(dir / "maps" / (key + ".png"), stored);
  nlohmann::json side{{"image_score", map.image_score},
                      {"fusion", std::string(to_string(map.fusion))},
                      {"gamma_l", map.gamma_l ? nlohmann::json(*map.gamma_l) : nlohmann::json("none")},
                      {"gamma_p", map.gamma_p ? nlohmann::json(*map.gamma_p) : nlohmann::json("none")},
                      {"sigma", sigma},
                      {"scale", scale},
                      {"label", item.record.anomalous() ? 1 : 0}};
  std::ofstream(dir / "maps" / (key + ".json")) << side.dump(2) << "\n";
  write_png(dir / "overlays" / (key + ".png"), overlay(item.x0, stored));
}

/// Oracle benchmark: each normal test image is kept clean or has a random set
/// of latent cells replaced by heavy Gaussian corruption at t = T; the ground
/// truth is exactly the corrupted cells and the predictor knows the clean latent.
inline std::vector<Item> make_oracle_items(const std::vector<Item>& normals, const LatentCodec& codec,
                                           const NoiseSchedule& schedule, std::uint64_t seed) {
  std::vector<Item> out;
  const int f = codec.factor();
  for (std::size_t i = 0; i < normals.size(); ++i) {
    Item it = normals[i];
    it.oracle_clean = it.z0;
    if (i % 2 == 1) {
      Rng rng(derive_seed(seed, {0x6f7261636c65ULL, i}));
      auto mask = sample_mask(it.z0.height, it.z0.width, 1, 0.75, rng);
      auto s = forward_corrupt(it.z0, schedule.steps(), mask, schedule, rng, {}, 0.0);
      it.z0 = s.z_t;
      it.x0 = codec.decode(s.z_t);
      it.mask.assign(static_cast<std::size_t>(it.x0.height) * it.x0.width, 0);
      for (int y = 0; y < it.x0.height; ++y)
        for (int x = 0; x < it.x0.width; ++x)
          it.mask[static_cast<std::size_t>(y) * it.x0.width + x] = mask.cell_visible(y / f, x / f) ? 0 : 1;
      it.record.defect_type = "oracle_corruption";
    }
    out.push_back(std::move(it));
  }
  return out;
}

struct EvalSetup {
  LatentCodec codec;
  std::unique_ptr<DoDNet<float>> model;  // null in oracle mode
  NoiseSchedule schedule;
  std::vector<Item> items;
};

inline EvalSetup prepare_evaluation(const RunConfig& cfg, const std::optional<fs::path>& checkpoint = std::nullopt) {
  cfg.validate();
  const bool oracle = cfg.get<bool>("eval.oracle_dod");
  EvalSetup s{load_codec(cfg), nullptr, build_cosine_schedule(cfg.get<int>("schedule.steps"), cfg.get<double>("schedule.offset")), {}};
  if (s.codec.kind() == CodecKind::ExternalPretrained && cfg.fusion() != Fusion::LatentOnly)
    throw ConfigError("external-pretrained codecs have no decoder; use scoring.fusion=latent_only");
  if (!oracle) {
    const fs::path ck = checkpoint.value_or(cfg.model_checkpoint());
    if (!fs::exists(ck)) throw ConfigError("model checkpoint " + ck.string() + " not found");
    auto loaded = load_checkpoint(ck);
    if (loaded.info.codec_fingerprint != s.codec.fingerprint())
      throw ConfigError("model checkpoint was trained with a different codec");
    s.schedule = build_cosine_schedule(loaded.info.schedule_steps, loaded.info.schedule_offset);
    if (cfg.correction_steps() > s.schedule.steps()) throw ConfigError("correction.steps exceeds the model's T");
    s.model = std::move(loaded.model);
  }
  const auto root = ensure_dataset(cfg);
  auto records = select(load_mvtec_layout(root, cfg.categories()), Split::Test);
  if (records.empty()) throw DatasetError("empty test split under " + root.string());
  if (oracle) {
    std::vector<SampleRecord> normals;
    for (auto& r : records)
      if (!r.anomalous()) normals.push_back(r);
    s.items = make_oracle_items(load_items(normals, cfg.resolution(), &s.codec), s.codec, s.schedule, cfg.seed());
  } else {
    s.items = load_items(records, cfg.resolution(), &s.codec);
  }
  if (s.model && !s.items.empty()) s.model->check_input(s.items[0].z0.channels, s.items[0].z0.height, s.items[0].z0.width);
  return s;
}

inline Corrected correct_items(const EvalSetup& s, int steps, CorrectionStrategy strategy, int batch) {
  if (s.model) return run_correction(NetworkPredictor(*s.model), s.codec, s.items, steps, strategy, s.schedule, batch);
  // The oracle needs each batch's clean latents, so correct batch by batch.
  Corrected out;
  for (std::size_t i = 0; i < s.items.size(); i += batch) {
    LatentBatch z, clean;
    for (std::size_t j = i; j < std::min(s.items.size(), i + batch); ++j) {
      z.push_back(s.items[j].z0);
      clean.push_back(*s.items[j].oracle_clean);
    }
    auto [zt, _] = correct(OraclePredictor(clean, s.schedule), z, steps, strategy, s.schedule);
    auto xt = s.codec.decode_batch(zt);
    for (std::size_t k = 0; k < zt.size(); ++k) {
      out.z.push_back(std::move(zt[k]));
      out.x.push_back(std::move(xt[k]));
    }
  }
  return out;
}

inline EvaluationReport cmd_evaluate(const RunConfig& cfg) {
  auto s = prepare_evaluation(cfg);
  const auto settings = ScoringSettings::from(cfg);
  auto corrected = correct_items(s, cfg.correction_steps(), cfg.strategy(), cfg.get<int>("eval.batch_size"));
  auto maps = score_items(s.items, corrected, settings);
  auto report = build_report(s.items, maps, cfg.get<double>("metrics.fpr_limit"));
  const fs::path dir = cfg.output_dir() / "eval";
  record_config(cfg, dir);
  write_report_csv(dir / "report.csv", "category", report.rows);
  if (cfg.get<bool>("eval.write_maps"))
    for (std::size_t i = 0; i < s.items.size(); ++i) write_map_outputs(dir, s.items[i], maps[i], settings.sigma);
  return report;
}

// ------------------------------------------------------------------ ablation

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"strategy_steps", "fusion", "gamma", "model_size", "r_mask", "r_shuffle"};
  return axes;
}

inline std::vector<std::string> default_axis_values(const std::string& axis) {
  if (axis == "strategy_steps") return {"1", "2", "5", "10"};
  if (axis == "fusion") return {"geometric", "arithmetic", "pixel_only", "latent_only"};
  if (axis == "gamma") return {"0.2:0.4", "0.4:0.2", "0.4:0.4", "0.4:0.6", "0.4:none", "0.6:0.4", "none:0.4", "none:none"};
  if (axis == "model_size") return {"XS", "S", "M", "L", "XL"};
  if (axis == "r_mask") return {"0.3", "0.5", "0.7"};
  if (axis == "r_shuffle") return {"0.0", "0.3", "0.6"};
  throw ConfigError("unknown ablation axis '" + axis + "' (expected one of strategy_steps, fusion, gamma, model_size, "
                    "r_mask, r_shuffle)");
}

struct AblationRow {
  std::string setting;
  MetricRow metrics;
};

namespace detail {

inline std::optional<double> parse_gamma(const std::string& s) {
  if (s == "none") return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !(v > 0.0)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid gamma value '" + s + "'");
  }
}

inline double parse_unit(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid " + what + " value '" + s + "'");
  }
}

}  // namespace detail

/// One report row per grid cell, averaged over categories. Inference-only axes
/// reuse the configured checkpoint; training axes retrain under
/// <output_dir>/ablate/<axis>/<value>/ with the run's training settings.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::string& axis,
                                           std::vector<std::string> values = {}) {
  if (values.empty()) values = default_axis_values(axis);
  else default_axis_values(axis);  // rejects unknown axes
  // Validate every grid cell before doing any work.
  std::vector<RunConfig> cells;
  for (const auto& v : values) {
    RunConfig c = cfg;
    if (axis == "strategy_steps") {
      c.set_from_string("correction.steps", v);
    } else if (axis == "fusion") {
      c.set("scoring.fusion", v);
    } else if (axis == "gamma") {
      auto colon = v.find(':');
      if (colon == std::string::npos) throw ConfigError("gamma values are written gamma_p:gamma_l, got '" + v + "'");
      auto gp = detail::parse_gamma(v.substr(0, colon)), gl = detail::parse_gamma(v.substr(colon + 1));
      c.set("scoring.gamma_p", gp ? nlohmann::json(*gp) : nlohmann::json("none"));
      c.set("scoring.gamma_l", gl ? nlohmann::json(*gl) : nlohmann::json("none"));
    } else if (axis == "model_size") {
      c.set("model.size", v);
    } else if (axis == "r_mask") {
      c.set("corruption.r_mask", detail::parse_unit(v, "r_mask"));
    } else if (axis == "r_shuffle") {
      c.set("corruption.r_shuffle", detail::parse_unit(v, "r_shuffle"));
    }
    c.validate();
    cells.push_back(std::move(c));
  }

  const bool retrain = axis == "model_size" || axis == "r_mask" || axis == "r_shuffle";
  const double fpr = cfg.get<double>("metrics.fpr_limit");
  const int batch = cfg.get<int>("eval.batch_size");
  std::vector<AblationRow> rows;
  if (!retrain) {
    auto s = prepare_evaluation(cfg);
    std::optional<Corrected> shared;
    if (axis != "strategy_steps") shared = correct_items(s, cfg.correction_steps(), cfg.strategy(), batch);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (axis == "strategy_steps") {
        for (auto strat : {CorrectionStrategy::Progressive, CorrectionStrategy::DirectReplace}) {
          auto corr = correct_items(s, c.correction_steps(), strat, batch);
          auto rep = build_report(s.items, score_items(s.items, corr, ScoringSettings::from(c)), fpr);
          rows.push_back({std::string(to_string(strat)) + "/steps=" + values[i], rep.average()});
        }
        continue;
      }
      auto rep = build_report(s.items, score_items(s.items, *shared, ScoringSettings::from(c)), fpr);
      rows.push_back({axis + "=" + values[i], rep.average()});
    }
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      RunConfig c = cells[i];
      const fs::path sub = cfg.output_dir() / "ablate" / axis / values[i];
      c.set("output_dir", sub.string());
      c.set("model.checkpoint", "");
      c.set("train.resume", false);
      c.set("codec.checkpoint", cfg.codec_checkpoint().string());
      c.set("dataset.root", cfg.dataset_root().string());
      ensure_dataset(cfg);
      cmd_train(c);
      auto s = prepare_evaluation(c);
      auto corr = correct_items(s, c.correction_steps(), c.strategy(), batch);
      auto rep = build_report(s.items, score_items(s.items, corr, ScoringSettings::from(c)), fpr);
      rows.push_back({axis + "=" + values[i], rep.average()});
    }
  }
  std::vector<std::pair<std::string, MetricRow>> table;
  for (const auto& r : rows) table.emplace_back(r.setting, r.metrics);
  const fs::path dir = cfg.output_dir() / "ablate";
  record_config(cfg, dir);
  write_report_csv(dir / (axis + ".csv"), "setting", table);
  return rows;
}

// ------------------------------------------------------------- visualization

/// Panels of input | reconstruction | ground truth | anomaly map for the first
/// `per_category` test images of each category (anomalous ones first). With
/// `trace`, every intermediate latent of the correction is decoded as well.
inline std::vector<fs::path> cmd_visualize(const RunConfig& cfg, int per_category, bool trace) {
  if (per_category < 1) throw ConfigError("visualize needs a positive image count");
  auto s = prepare_evaluation(cfg);
  std::map<std::string, int> taken;
  std::vector<Item> chosen;
  for (bool want_anomalous : {true, false})
    for (const auto& it : s.items)
      if (it.record.anomalous() == want_anomalous && taken[it.record.category] < per_category) {
        ++taken[it.record.category];
        chosen.push_back(it);
      }
  EvalSetup sub{s.codec, std::move(s.model), s.schedule, std::move(chosen)};
  const auto settings = ScoringSettings::from(cfg);
  auto corrected = correct_items(sub, cfg.correction_steps(), cfg.strategy(), cfg.get<int>("eval.batch_size"));
  auto maps = score_items(sub.items, corrected, settings);
  const fs::path dir = cfg.output_dir() / "viz";
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < sub.items.size(); ++i) {
    const auto& it = sub.items[i];
    ImageTensor gt(3, it.x0.height, it.x0.width, 0.0f);
    for (int y = 0; y < gt.height; ++y)
      for (int x = 0; x < gt.width; ++x)
        if (!it.mask.empty() && it.mask[static_cast<std::size_t>(y) * gt.width + x])
          for (int c = 0; c < 3; ++c) gt.at(c, y, x) = 1.0f;
    Map2D shown = maps[i].scores;
    double peak = 1.0;
    for (double v : shown.values) peak = std::max(peak, v);
    for (auto& v : shown.values) v /= peak;
    cv::Mat heat;
    cv::applyColorMap(map_to_gray8(shown), heat, cv::COLORMAP_JET);
    cv::Mat panel;
    cv::hconcat(std::vector<cv::Mat>{to_mat8(it.x0), to_mat8(corrected.x[i]), to_mat8(gt), heat}, panel);
    const fs::path out = dir / (it.record.key() + ".png");
    write_png(out, panel);
    written.push_back(out);
    if (trace) {
      LatentBatch z{it.z0};
      ReverseTrace tr;
      if (sub.model) tr = correct(NetworkPredictor(*sub.model), z, cfg.correction_steps(), cfg.strategy(), sub.schedule).second;
      else
        tr = correct(OraclePredictor({*it.oracle_clean}, sub.schedule), z, cfg.correction_steps(), cfg.strategy(),
                     sub.schedule).second;
      for (std::size_t k = 0; k < tr.latents.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "_step%02zu.png", k);
        write_image(dir / (it.record.key() + name), sub.codec.decode(tr.latents[k].front()));
      }
    }
  }
  return written;
}

}  // namespace decodiff
