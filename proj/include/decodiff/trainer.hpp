#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/archive.hpp"
#include "decodiff/corruption.hpp"
#include "decodiff/dod_net.hpp"
#include "decodiff/nn.hpp"
#include "decodiff/schedule.hpp"

namespace decodiff {

namespace fs = std::filesystem;

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr_init = 1e-4;
  double lr_min = 1e-5;
  int warmup_steps = -1;  // negative: 5% of total steps
  std::uint64_t seed = 0;
  ModelSize model_size = ModelSize::XS;
  CorruptionConfig corruption;
  int checkpoint_every = 10;  // epochs; the final epoch is always saved
  nn::AdamW<float>::Options adamw{};

  int effective_warmup(long long total_steps) const {
    if (warmup_steps >= 0) return warmup_steps;
    return static_cast<int>(std::llround(0.05 * static_cast<double>(total_steps)));
  }

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (!(lr_init > 0.0 && lr_min >= 0.0 && lr_min <= lr_init))
      throw std::invalid_argument("learning rates must satisfy 0 <= lr_min <= lr_init, lr_init > 0");
    if (batch_size < 2 && corruption.r_shuffle_max > 0.0)
      throw std::invalid_argument("patch shuffling needs batch_size >= 2");
    if (checkpoint_every < 1) throw std::invalid_argument("checkpoint_every must be positive");
    corruption.validate();
  }
};

/// Linear warmup from 0 to lr_init, then cosine decay to lr_min at total_steps.
inline double lr_at(long long step, const TrainConfig& cfg, long long total_steps) {
  total_steps = std::max<long long>(total_steps, 0);
  step = std::clamp<long long>(step, 0, total_steps);
  const long long warm = std::min<long long>(cfg.effective_warmup(total_steps), total_steps);
  if (step < warm) return cfg.lr_init * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return cfg.lr_init;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Mean squared error between the network output and the deviation targets,
/// without touching parameters. Returns the graph root.
template <class Real>
ag::Var<Real> deviation_loss(const DoDNet<Real>& model, const std::vector<CorruptionSample>& batch, bool training,
                             Rng& dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("training batch must not be empty");
  std::vector<LatentTensor> zt, target;
  std::vector<int> ts;
  for (const auto& s : batch) {
    zt.push_back(s.z_t);
    target.push_back(s.eta_target);
    ts.push_back(s.t);
  }
  auto out = model.forward(ag::constant(stack<Real>(zt)), ts, training, dropout_rng);
  return ag::mse_loss(out, stack<Real>(target));
}

/// One optimizer update on `batch`; returns the loss before the update. A
/// non-finite loss raises DivergenceError and leaves the parameters untouched.
template <class Real>
double training_step(DoDNet<Real>& model, nn::AdamW<Real>& opt, const std::vector<CorruptionSample>& batch, double lr,
                     Rng& dropout_rng) {
  auto loss = deviation_loss(model, batch, true, dropout_rng);
  const double value = static_cast<double>(loss->value[0]);
  if (!std::isfinite(value)) throw DivergenceError("non-finite training loss");
  model.params().zero_grad();
  ag::backward(loss);
  for (const auto& [name, p] : model.params().entries())
    if (!p->grad.empty() && !p->grad.all_finite()) throw DivergenceError("non-finite gradient in " + name);
  opt.step(model.params(), lr);
  return value;
}

// ---------------------------------------------------------------- checkpoint

inline nlohmann::json to_json(const DoDNetConfig& c) {
  return {{"base_channels", c.base_channels}, {"channel_mult", c.channel_mult},
          {"attention_resolutions", c.attention_resolutions}, {"num_res_blocks", c.num_res_blocks},
          {"dropout", c.dropout}, {"time_embed_dim", c.time_embed_dim}, {"latent_channels", c.latent_channels},
          {"head_channels", c.head_channels}, {"zero_init", c.zero_init}};
}

inline DoDNetConfig dod_config_from_json(const nlohmann::json& j) {
  DoDNetConfig c;
  c.base_channels = j.at("base_channels");
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
  c.num_res_blocks = j.at("num_res_blocks");
  c.dropout = j.at("dropout");
  c.time_embed_dim = j.at("time_embed_dim");
  c.latent_channels = j.at("latent_channels");
  c.head_channels = j.at("head_channels");
  c.zero_init = j.at("zero_init");
  return c;
}

struct CheckpointInfo {
  long long step = 0;
  int epoch = 0;  // completed epochs
  int schedule_steps = 10;
  double schedule_offset = 0.008;
  std::uint64_t codec_fingerprint = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline void save_checkpoint(const fs::path& path, const DoDNet<float>& model, const nn::AdamW<float>* opt,
                            const CheckpointInfo& info) {
  Archive a;
  a.meta["kind"] = "dod_model";
  a.meta["model"] = to_json(model.config());
  a.meta["step"] = info.step;
  a.meta["epoch"] = info.epoch;
  a.meta["schedule"] = {{"steps", info.schedule_steps}, {"offset", info.schedule_offset}};
  a.meta["codec_fingerprint"] = std::to_string(info.codec_fingerprint);
  a.meta["extra"] = info.extra;
  const auto& entries = model.params().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& v = entries[k].second->value;
    a.put_range("param/" + entries[k].first, {v.channels(), v.batch(), v.height(), v.width()}, v.values().begin(),
                v.values().end());
    if (opt && !opt->first_moments().empty()) {
      const auto& m = opt->first_moments()[k];
      const auto& s = opt->second_moments()[k];
      a.put_range("adam_m/" + entries[k].first, {static_cast<int>(m.size())}, m.begin(), m.end(), true);
      a.put_range("adam_v/" + entries[k].first, {static_cast<int>(s.size())}, s.begin(), s.end(), true);
    }
  }
  if (opt) a.meta["adam_steps"] = opt->steps();
  a.save(path);
}

struct LoadedCheckpoint {
  std::unique_ptr<DoDNet<float>> model;
  std::optional<nn::AdamW<float>> optimizer;  // present when moments were stored
  CheckpointInfo info;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path, nn::AdamW<float>::Options adam = {}) {
  Archive a = Archive::load(path);
  if (a.meta.value("kind", "") != "dod_model") throw ArchiveError(path.string() + " is not a model checkpoint");
  LoadedCheckpoint out;
  out.model = std::make_unique<DoDNet<float>>(dod_config_from_json(a.meta.at("model")), 0);
  out.info.step = a.meta.at("step");
  out.info.epoch = a.meta.at("epoch");
  out.info.schedule_steps = a.meta.at("schedule").at("steps");
  out.info.schedule_offset = a.meta.at("schedule").at("offset");
  out.info.codec_fingerprint = std::stoull(a.meta.at("codec_fingerprint").get<std::string>());
  out.info.extra = a.meta.value("extra", nlohmann::json::object());
  auto& entries = out.model->params().entries();
  bool has_moments = a.meta.contains("adam_steps");
  for (const auto& [name, p] : entries) {
    const auto& b = a.get("param/" + name);
    if (b.values.size() != p->value.size()) throw ArchiveError("parameter '" + name + "' has the wrong size");
    std::copy(b.values.begin(), b.values.end(), p->value.values().begin());
    has_moments = has_moments && a.has("adam_m/" + name);
  }
  if (has_moments) {
    nn::AdamW<float> opt(out.model->params(), adam);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      opt.first_moments()[k] = a.get("adam_m/" + entries[k].first).values;
      opt.second_moments()[k] = a.get("adam_v/" + entries[k].first).values;
    }
    opt.set_steps(a.meta.at("adam_steps"));
    out.optimizer = std::move(opt);
  }
  return out;
}

// ---------------------------------------------------------------------- loop

struct LossRecord {
  long long step;
  int epoch;
  double loss;
  double lr;
};

struct TrainResult {
  std::vector<LossRecord> history;  // this run plus any resumed prefix
  std::vector<double> epoch_mean_loss;
  long long steps = 0;
  fs::path final_checkpoint;
};

inline DoDNetConfig dod_config_for(ModelSize size, int latent_channels) {
  DoDNetConfig c;
  c.base_channels = base_channels(size);
  c.latent_channels = latent_channels;
  return c;
}

inline std::vector<LossRecord> read_loss_csv(const fs::path& path) {
  std::vector<LossRecord> rows;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    LossRecord r{};
    char c;
    ss >> r.step >> c >> r.epoch >> c >> r.loss >> c >> r.lr;
    rows.push_back(r);
  }
  return rows;
}

inline void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "step,epoch,loss,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g\n", r.step, r.epoch, r.loss, r.lr);
    out << buf;
  }
}

inline std::vector<double> epoch_means(const std::vector<LossRecord>& rows) {
  std::vector<double> sum, cnt;
  for (const auto& r : rows) {
    if (r.epoch >= static_cast<int>(sum.size())) sum.resize(r.epoch + 1, 0.0), cnt.resize(r.epoch + 1, 0.0);
    sum[r.epoch] += r.loss;
    cnt[r.epoch] += 1;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = cnt[i] > 0 ? sum[i] / cnt[i] : 0.0;
  return sum;
}

struct TrainOptions {
  fs::path out_dir;                    // checkpoints and loss.csv
  std::optional<fs::path> resume_from;  // checkpoint to continue from
  DoDNetConfig model;                  // architecture for a fresh run
  int schedule_steps = 10;
  double schedule_offset = 0.008;
  std::uint64_t codec_fingerprint = 0;
  nlohmann::json extra = nlohmann::json::object();  // recorded into every checkpoint
  std::function<void(const LossRecord&)> on_step;  // progress hook
};

/// Trains the deviation predictor on the latents of normal images. Each step
/// draws its batch corruption and dropout from streams derived from
/// (seed, step), so a resumed run continues exactly where it stopped.
inline TrainResult train(const std::vector<LatentTensor>& latents, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (latents.empty()) throw std::invalid_argument("training set is empty");
  const auto schedule = build_cosine_schedule(opts.schedule_steps, opts.schedule_offset);
  const int n = static_cast<int>(latents.size());
  const int bs = std::min(cfg.batch_size, n);
  if (bs < 2 && cfg.corruption.r_shuffle_max > 0.0) throw std::invalid_argument("patch shuffling needs two images");
  // A trailing singleton batch would leave shuffling without a pool; fold it away.
  const int steps_per_epoch = n % bs == 1 && n > bs ? n / bs : (n + bs - 1) / bs;
  const long long total = static_cast<long long>(steps_per_epoch) * cfg.epochs;

  std::unique_ptr<DoDNet<float>> model;
  nn::AdamW<float> opt;
  TrainResult res;
  int start_epoch = 0;
  if (opts.resume_from) {
    auto ck = load_checkpoint(*opts.resume_from, cfg.adamw);
    if (ck.info.codec_fingerprint != opts.codec_fingerprint)
      throw std::invalid_argument("checkpoint was trained with a different codec");
    model = std::move(ck.model);
    opt = ck.optimizer ? std::move(*ck.optimizer) : nn::AdamW<float>(model->params(), cfg.adamw);
    start_epoch = ck.info.epoch;
    for (const auto& r : read_loss_csv(opts.out_dir / "loss.csv"))
      if (r.step < ck.info.step) res.history.push_back(r);
  } else {
    model = std::make_unique<DoDNet<float>>(opts.model, derive_seed(cfg.seed, {0x6d6f64656cULL}));
    opt = nn::AdamW<float>(model->params(), cfg.adamw);
  }
  model->check_input(latents.front().channels, latents.front().height, latents.front().width);

  auto checkpoint = [&](int epoch) {
    CheckpointInfo info{static_cast<long long>(epoch) * steps_per_epoch, epoch, opts.schedule_steps,
                        opts.schedule_offset, opts.codec_fingerprint, opts.extra};
    res.final_checkpoint = opts.out_dir / "checkpoint_last.dcdf";
    save_checkpoint(res.final_checkpoint, *model, &opt, info);
    write_loss_csv(opts.out_dir / "loss.csv", res.history);
  };
  if (!opts.resume_from) checkpoint(0);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng perm_rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}));
    const auto order = perm_rng.choose(n, n);
    for (int b = 0; b < steps_per_epoch; ++b) {
      const long long step = static_cast<long long>(epoch) * steps_per_epoch + b;
      const int lo = b * bs;
      const int hi = b + 1 == steps_per_epoch ? n : std::min(n, lo + bs);
      std::vector<LatentTensor> z0;
      for (int i = lo; i < hi; ++i) z0.push_back(latents[order[i]]);
      Rng step_rng(derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(step)}));
      auto batch = sample_training_corruption(z0, cfg.corruption, schedule, step_rng);
      const double lr = lr_at(step, cfg, total);
      const double loss = training_step(*model, opt, batch, lr, step_rng);
      res.history.push_back({step, epoch, loss, lr});
      if (opts.on_step) opts.on_step(res.history.back());
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) checkpoint(epoch + 1);
  }
  if (cfg.epochs == 0 || start_epoch >= cfg.epochs) checkpoint(std::max(start_epoch, cfg.epochs));
  res.steps = static_cast<long long>(cfg.epochs) * steps_per_epoch;
  res.epoch_mean_loss = epoch_means(res.history);
  return res;
}

}  // namespace decodiff
