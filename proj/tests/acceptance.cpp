// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if any
// criterion fails. The end-to-end criteria share one desk-scale run written to
// $DECODIFF_ACCEPTANCE_DIR (default: <tmp>/decodiff_acceptance).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "decodiff/corrector.hpp"
#include "decodiff/corruption.hpp"
#include "decodiff/dod_net.hpp"
#include "decodiff/metrics.hpp"
#include "decodiff/pipeline.hpp"
#include "decodiff/scoring.hpp"
#include "decodiff/trainer.hpp"
#include "oracles.hpp"

using namespace decodiff;
namespace fs = std::filesystem;

namespace {

const NoiseSchedule kSchedule = build_cosine_schedule(10);
constexpr int kPatchSizes[] = {1, 2, 4, 8};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

LatentTensor random_latent(int c, int h, int w, Rng& rng, double scale = 1.0) {
  LatentTensor z(c, h, w);
  for (auto& v : z.values) v = static_cast<float>(scale * rng.normal());
  return z;
}

// ------------------------------------------------------------- criteria 1-6

// The identity is checked in float64; the stored float32 tensors must then be
// exactly the rounded float64 values, which ties the check to the code path.
Outcome algebraic_equivalence() {
  Rng rng(101);
  double worst = 0;
  long long rounding_mismatches = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    auto z0 = random_latent(4, 8, 8, rng, rng.uniform(0.1, 3.0));
    const int t = rng.uniform_int(1, 10);
    std::vector<double> eps(z0.size());
    for (auto& e : eps) e = rng.normal();
    auto mask = sample_mask(8, 8, kPatchSizes[draw % 4], 0.0, rng);
    auto s = forward_corrupt_with_noise(z0, t, mask, kSchedule, eps, rng, {}, 0.0);
    const double a = std::sqrt(kSchedule.alpha_bar(t)), dev = kSchedule.deviation_scale(t);
    const double shift = kSchedule.dod_shift_coeff(t);
    for (std::size_t i = 0; i < z0.size(); ++i) {
      const double z = z0.values[i];
      const double marginal = a * z + dev * eps[i];
      const double eta = gaussian_deviation(z, eps[i], shift);
      const double deviation = z + dev * eta;
      worst = std::max(worst, std::abs(deviation - marginal) / std::max(std::abs(marginal), 1e-300));
      rounding_mismatches += s.eta_target.values[i] != static_cast<float>(eta);
      rounding_mismatches += s.z_t.values[i] != static_cast<float>(marginal);
    }
  }
  return {worst < 1e-6 && rounding_mismatches == 0, "max rel err " + fmt("%.2e", worst) + " over 1000 draws, " +
                                                        std::to_string(rounding_mismatches) + " stored-value mismatches"};
}

Outcome masked_exactness() {
  Rng rng(102);
  std::vector<LatentTensor> pool;
  for (int i = 0; i < 4; ++i) pool.push_back(random_latent(4, 8, 8, rng));
  long long visible = 0, violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto z0 = random_latent(4, 8, 8, rng);
    auto m = sample_mask(8, 8, kPatchSizes[trial % 4], rng.uniform(), rng);
    auto s = forward_corrupt(z0, rng.uniform_int(1, 10), m, kSchedule, rng, pool, rng.uniform(0.0, 0.6));
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (!m.cell_visible(y, x)) continue;
          ++visible;
          violations += s.z_t.at(c, y, x) != z0.at(c, y, x) || s.eta_target.at(c, y, x) != 0.0f;
        }
  }
  return {violations == 0 && visible > 0,
          std::to_string(violations) + " violations in " + std::to_string(visible) + " visible elements, 100 masks"};
}

double rel_dist(const LatentBatch& a, const LatentBatch& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      const double d = double(a[i].values[k]) - b[i].values[k];
      num += d * d;
      den += double(b[i].values[k]) * b[i].values[k];
    }
  return std::sqrt(num / den);
}

Outcome oracle_closure() {
  Rng rng(103);
  LatentBatch z0{random_latent(4, 8, 8, rng), random_latent(4, 8, 8, rng)};
  OraclePredictor oracle(z0, kSchedule);
  double worst = 0;
  bool agree = true;
  for (int t = 1; t <= 10; ++t) {
    LatentBatch zt;
    for (const auto& z : z0) zt.push_back(forward_corrupt(z, t, sample_mask(8, 8, 1, 0.0, rng), kSchedule, rng, {}, 0.0).z_t);
    for (int steps : {1, 2, 5, 10})
      for (auto s : {CorrectionStrategy::Progressive, CorrectionStrategy::DirectReplace})
        worst = std::max(worst, rel_dist(correct(oracle, zt, steps, s, kSchedule).first, z0));
    agree = agree && correct(oracle, zt, 1, CorrectionStrategy::Progressive, kSchedule).first ==
                         correct(oracle, zt, 1, CorrectionStrategy::DirectReplace, kSchedule).first;
  }
  return {worst < 1e-5 && agree,
          "max rel err " + fmt("%.2e", worst) + ", strategies " + (agree ? "agree" : "differ") + " at steps=1"};
}

Outcome gradient_check() {
  DoDNetConfig cfg;
  cfg.base_channels = 8;
  cfg.dropout = 0.0;
  cfg.zero_init = false;
  cfg.latent_channels = 4;
  DoDNet<double> net(cfg, 104);
  Rng rng(105);
  std::vector<LatentTensor> clean{random_latent(4, 8, 8, rng), random_latent(4, 8, 8, rng)};
  auto batch = sample_training_corruption(clean, CorruptionConfig{}, kSchedule, rng);
  Rng drop(0);
  auto loss = deviation_loss(net, batch, false, drop);
  net.params().zero_grad();
  ag::backward(loss);
  auto eval = [&] {
    ag::NoGradGuard guard;
    Rng r(0);
    return deviation_loss(net, batch, false, r)->value[0];
  };
  const auto& entries = net.params().entries();
  const double h = 1e-4;
  double worst = 0;
  for (int k = 0; k < 10; ++k) {
    auto& p = entries[rng.uniform_int(0, static_cast<int>(entries.size()) - 1)].second;
    const std::size_t i = rng.uniform_int(0, static_cast<int>(p->value.size()) - 1);
    const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
    const double w = p->value[i];
    p->value[i] = w + h;
    const double up = eval();
    p->value[i] = w - h;
    const double down = eval();
    p->value[i] = w;
    const double numeric = (up - down) / (2 * h);
    // Structurally zero gradients leave only rounding noise in the quotient.
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst) + " on 10 parameters (float64)"};
}

Outcome metric_oracles() {
  Rng rng(106);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto d = oracle::random_instance(rng, rng.uniform_int(2, 64));
    mismatches += auroc(d) != oracle::brute_auroc(d);
    mismatches += std::abs(auprc(d) - oracle::brute_auprc(d)) > 1e-12;
    mismatches += f1_max(d) != oracle::brute_f1(d);
  }
  double worst_pro = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PixelEvalCase> cases{oracle::random_case(rng, 16, 16, 0.15)};
    const double limit = trial % 2 ? 0.3 : rng.uniform(0.05, 1.0);
    worst_pro = std::max(worst_pro, std::abs(aupro(cases, limit) - oracle::brute_aupro(cases, limit)));
  }
  return {mismatches == 0 && worst_pro <= 1e-12, std::to_string(mismatches) + " mismatches in 300 curve metrics, AUPRO max diff " +
                                                    fmt("%.1e", worst_pro) + " over 20 cases"};
}

DiscrepancyMaps uniform_maps(int n, double dz, double dx) {
  DiscrepancyMaps m{Map2D(n, n), Map2D(n, n)};
  std::fill(m.delta_z.values.begin(), m.delta_z.values.end(), dz);
  std::fill(m.delta_x.values.begin(), m.delta_x.values.end(), dx);
  return m;
}

Outcome scoring_contracts() {
  int failures = 0;
  for (double v : fuse(uniform_maps(8, 0.9, 0.5), Fusion::Geometric).scores.values) failures += v != 1.0;
  for (double v : fuse(uniform_maps(8, 0.1, 0.4), Fusion::Geometric, 0.4, 0.4).scores.values) failures += std::abs(v - 0.5) > 1e-15;
  AnomalyMap defaults;
  failures += defaults.gamma_l != 0.4 || defaults.gamma_p != 0.4;
  const int identities = failures;

  Rng rng(107);
  int out_of_range = 0, non_monotone = 0;
  const std::optional<double> gammas[] = {0.4, 0.1, std::nullopt};
  for (int trial = 0; trial < 100; ++trial) {
    DiscrepancyMaps base{Map2D(8, 8), Map2D(8, 8)};
    for (auto& v : base.delta_z.values) v = rng.uniform(0.0, 2.0);
    for (auto& v : base.delta_x.values) v = rng.uniform(0.0, 2.0);
    const double gl = rng.uniform(0.01, 1.0), gp = rng.uniform(0.01, 1.0);
    for (double v : fuse(base, Fusion::Geometric, gl, gp).scores.values) out_of_range += v < 0.0 || v > 1.0;
    DiscrepancyMaps bumped = base;
    (rng.bernoulli(0.5) ? bumped.delta_z : bumped.delta_x).values[rng.uniform_int(0, 63)] += rng.uniform(0.0, 0.5);
    for (auto f : {Fusion::Geometric, Fusion::Arithmetic, Fusion::PixelOnly, Fusion::LatentOnly})
      for (const auto& g : gammas) {
        auto a = fuse(base, f, g, g), b = fuse(bumped, f, g, g);
        for (std::size_t k = 0; k < a.scores.size(); ++k) non_monotone += b.scores.values[k] < a.scores.values[k];
        non_monotone += b.image_score < a.image_score;
      }
  }
  return {identities == 0 && out_of_range == 0 && non_monotone == 0,
          std::to_string(identities) + " identity failures, " + std::to_string(out_of_range) + " out-of-range scores, " +
              std::to_string(non_monotone) + " monotonicity violations over 100 pairs"};
}

// ------------------------------------------------------------- criteria 7-9

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

bool same_metrics(const MetricRow& a, const MetricRow& b) {
  auto x = metric_values(a), y = metric_values(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
  return true;
}

struct DeskRun {
  RunConfig cfg;
  std::optional<EvaluationReport> report;
  TrainResult train;
  double wall_s = 0, cpu_s = 0;
  std::string error;
};

DeskRun desk_run(const fs::path& dir) {
  DeskRun run;
  run.cfg.apply_preset("desk");
  run.cfg.set("seed", 0);
  run.cfg.set("output_dir", dir.string());
  const auto w0 = std::chrono::steady_clock::now();
  const std::clock_t c0 = std::clock();
  try {
    cmd_fit_codec(run.cfg);
    run.train = cmd_train(run.cfg);
    run.report = cmd_evaluate(run.cfg);
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - w0).count();
  run.cpu_s = double(std::clock() - c0) / CLOCKS_PER_SEC;
  return run;
}

Outcome desk_end_to_end(const DeskRun& run) {
  if (!run.report) return {false, "pipeline error: " + run.error};
  const auto& avg = run.report->average();
  const int epochs = run.cfg.get<int>("train.epochs");
  const bool ok = avg.pixel_auroc >= 0.90 && avg.image_auroc >= 0.95 && run.cpu_s <= 1800 && run.wall_s <= 1800 &&
                  epochs <= 50;
  return {ok, "image AUROC " + fmt("%.4f", avg.image_auroc) + ", pixel AUROC " + fmt("%.4f", avg.pixel_auroc) +
                  ", pixel AUPRO " + fmt("%.4f", avg.pixel_aupro) + ", " + std::to_string(epochs) + " epochs, cpu " +
                  fmt("%.0f", run.cpu_s) + " s, wall " + fmt("%.0f", run.wall_s) + " s"};
}

Outcome loss_trend(const DeskRun& run) {
  const auto& m = run.train.epoch_mean_loss;
  if (m.size() < 10) return {false, "fewer than 10 epochs recorded"};
  int rises = 0;
  std::string seq;
  for (int e = 0; e < 10; ++e) {
    if (e > 0) rises += !(m[e] < m[e - 1]);
    seq += (e ? " " : "") + fmt("%.3f", m[e]);
  }
  return {rises == 0, std::to_string(rises) + " non-decreasing transitions: " + seq};
}

Outcome evaluate_determinism(const DeskRun& run) {
  if (!run.report) return {false, "no trained run"};
  try {
    const fs::path eval = run.cfg.output_dir() / "eval";
    auto first = read_tree(eval);
    fs::remove_all(eval);
    cmd_evaluate(run.cfg);
    auto second = read_tree(eval);
    long long maps = std::count_if(first.begin(), first.end(), [](const auto& kv) {
      return kv.first.rfind("maps", 0) == 0 && fs::path(kv.first).extension() == ".png";
    });
    const bool same = first == second;
    return {same && maps > 0 && first.count("report.csv"),
            std::to_string(first.size()) + " files (" + std::to_string(maps) + " 16-bit maps) " +
                (same ? "byte-identical" : "differ")};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

Outcome ablation_structure(const DeskRun& run) {
  if (!run.report) return {false, "no trained run"};
  try {
    auto strat = cmd_ablate(run.cfg, "strategy_steps");
    auto fusion = cmd_ablate(run.cfg, "fusion");
    std::map<std::string, MetricRow> rows;
    for (const auto& r : strat) rows[r.setting] = r.metrics;
    bool names = strat.size() == 8;
    for (auto s : {"progressive", "direct_replace"})
      for (auto n : {"1", "2", "5", "10"}) names = names && rows.count(std::string(s) + "/steps=" + n);
    const bool coincide = names && same_metrics(rows["progressive/steps=1"], rows["direct_replace/steps=1"]);
    bool fusion_ok = fusion.size() == 4;
    for (std::size_t i = 0; fusion_ok && i < 4; ++i)
      fusion_ok = fusion[i].setting == "fusion=" + default_axis_values("fusion")[i];
    std::string detail = std::to_string(strat.size()) + " strategy rows (steps=1 rows " +
                         (coincide ? "coincide" : "differ") + "), " + std::to_string(fusion.size()) + " fusion rows;";
    for (const auto& r : strat) detail += " " + r.setting + " px " + fmt("%.3f", r.metrics.pixel_auroc);
    for (const auto& r : fusion) detail += " " + r.setting + " px " + fmt("%.3f", r.metrics.pixel_auroc);
    return {names && coincide && fusion_ok, detail};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

bool report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o = check();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += " (over the " + fmt("%.0f", limit_s) + " s limit)";
  }
  std::printf("criterion %d %-28s %s  %s [%.2f s]\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

// Optional arguments restrict the run to the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  bool ok = true;
  auto check = [&](int id, const std::string& name, double limit_s, const std::function<Outcome()>& f) {
    if (wanted(id)) ok &= report(id, name, limit_s, f);
  };
  check(1, "algebraic-equivalence", 5, algebraic_equivalence);
  check(2, "masked-forward-exactness", 5, masked_exactness);
  check(3, "oracle-reverse-closure", 10, oracle_closure);
  check(4, "gradient-check", 60, gradient_check);
  check(5, "metric-oracles", 60, metric_oracles);
  check(6, "scoring-contracts", 5, scoring_contracts);

  if (wanted(7) || wanted(8) || wanted(9)) {
    const char* env = std::getenv("DECODIFF_ACCEPTANCE_DIR");
    const fs::path dir = env && *env ? fs::path(env) : fs::temp_directory_path() / "decodiff_acceptance";
    fs::remove_all(dir);
    DeskRun run = desk_run(dir);
    check(7, "desk-end-to-end", 0, [&] { return desk_end_to_end(run); });
    check(8, "evaluate-determinism", 0, [&] { return evaluate_determinism(run); });
    check(9, "ablation-structure", 0, [&] { return ablation_structure(run); });
    // Reported alongside the criteria; see the README for why it is not gating.
    const Outcome trend = loss_trend(run);
    std::printf("extra       %-28s %s  %s\n", "epoch-loss-trend", trend.pass ? "PASS" : "FAIL", trend.detail.c_str());
  }
  std::printf("%s\n", ok ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: some criteria failed");
  return ok ? 0 : 1;
}
