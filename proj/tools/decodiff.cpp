// Command-line front end: fit-codec, train, evaluate, ablate, visualize,
// make-synthetic and convert-visa. Every config key is also a flag
// (--train.epochs 5).
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "decodiff/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_file;
  std::string preset;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON run configuration");
  cmd->add_option("--preset", c.preset, "desk | full");
  for (const auto& key : decodiff::config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key.name, [&c, name = key.name](const std::string& v) { c.overrides[name] = v; },
        key.help + " (default " + key.default_value.dump() + ")")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

decodiff::RunConfig resolve(const Common& c) {
  decodiff::RunConfig cfg;
  if (!c.preset.empty()) cfg.apply_preset(c.preset);
  if (!c.config_file.empty()) cfg.merge_file(c.config_file);
  for (const auto& [k, v] : c.overrides) cfg.set_from_string(k, v);
  cfg.validate();
  return cfg;
}

void print_report(const std::vector<std::pair<std::string, decodiff::MetricRow>>& rows, const std::string& label) {
  std::printf("%-24s", label.c_str());
  for (const auto& n : decodiff::metric_names()) std::printf(" %12s", n.c_str());
  std::printf("\n");
  for (const auto& [name, row] : rows) {
    std::printf("%-24s", name.c_str());
    for (double v : decodiff::metric_values(row)) std::printf(" %12s", decodiff::format_metric(v).c_str());
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeCo-Diff deviation-correction anomaly detection"};
  app.require_subcommand(1);
  Common common;

  auto* fit = app.add_subcommand("fit-codec", "fit or materialize the latent codec");
  auto* train = app.add_subcommand("train", "train the deviation predictor");
  auto* eval = app.add_subcommand("evaluate", "correct and score the test split");
  auto* ablate = app.add_subcommand("ablate", "sweep one ablation axis");
  auto* viz = app.add_subcommand("visualize", "write qualitative panels");
  auto* synth = app.add_subcommand("make-synthetic", "write the synthetic benchmark");
  for (auto* cmd : {fit, train, eval, ablate, viz, synth}) add_common(cmd, common);

  bool oracle = false;
  eval->add_flag("--oracle-dod", oracle, "test-only: analytic DoD on corrupted normal images");
  std::string axis;
  std::vector<std::string> values;
  ablate->add_option("--axis", axis, "strategy_steps | fusion | gamma | model_size | r_mask | r_shuffle")->required();
  ablate->add_option("--values", values, "grid values (default: the paper's grid)")->delimiter(',');
  int count = 2;
  bool trace = false;
  viz->add_option("--count", count, "images per category");
  viz->add_flag("--trace", trace, "also decode every correction step");
  auto* visa = app.add_subcommand("convert-visa", "rewrite a VisA release into the MVTec layout");
  std::string visa_root, visa_csv, visa_dest;
  visa->add_option("--source", visa_root, "VisA root directory")->required();
  visa->add_option("--split-csv", visa_csv, "split file, e.g. split_csv/1cls.csv")->required();
  visa->add_option("--dest", visa_dest, "output root in MVTec layout")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), kExitConfig);
  }

  try {
    if (visa->parsed()) {
      const int n = decodiff::convert_visa(visa_root, visa_csv, visa_dest);
      std::printf("converted %d images into %s\n", n, visa_dest.c_str());
      return 0;
    }
    auto cfg = resolve(common);
    if (oracle) cfg.set("eval.oracle_dod", true);
    if (fit->parsed()) {
      auto codec = decodiff::cmd_fit_codec(cfg);
      std::printf("codec %s written to %s (fingerprint %016llx)\n", std::string(decodiff::to_string(codec.kind())).c_str(),
                  cfg.codec_checkpoint().string().c_str(), static_cast<unsigned long long>(codec.fingerprint()));
      if (codec.kind() == decodiff::CodecKind::TrainedAutoencoder)
        std::printf("validation MAE %.5f (max %.5f)\n", codec.fit_report().validation_mae,
                    codec.fit_report().validation_max_mae);
    } else if (train->parsed()) {
      auto res = decodiff::cmd_train(cfg, [](const decodiff::LossRecord& r) {
        if (r.step % 50 == 0) std::fprintf(stderr, "step %lld epoch %d loss %.5f lr %.2e\n", r.step, r.epoch, r.loss, r.lr);
      });
      std::printf("trained %lld steps; checkpoint %s\n", res.steps, res.final_checkpoint.string().c_str());
    } else if (eval->parsed()) {
      auto rep = decodiff::cmd_evaluate(cfg);
      print_report(rep.rows, "category");
    } else if (ablate->parsed()) {
      auto rows = decodiff::cmd_ablate(cfg, axis, values);
      std::vector<std::pair<std::string, decodiff::MetricRow>> table;
      for (const auto& r : rows) table.emplace_back(r.setting, r.metrics);
      print_report(table, "setting");
    } else if (viz->parsed()) {
      for (const auto& p : decodiff::cmd_visualize(cfg, count, trace)) std::printf("%s\n", p.string().c_str());
    } else if (synth->parsed()) {
      decodiff::cmd_make_synthetic(cfg);
      std::printf("synthetic dataset written to %s\n", cfg.dataset_root().string().c_str());
    }
  } catch (const decodiff::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
