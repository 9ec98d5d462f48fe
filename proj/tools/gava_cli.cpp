#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "gava/checkpoint.hpp"
#include "gava/gradcheck_suite.hpp"
#include "gava/train.hpp"

namespace fs = std::filesystem;
using namespace gava;

namespace {

enum Exit { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4 };

/// Every config key as a `--key value` flag; applied on top of the config file.
struct Overrides {
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    for (const auto& key : TrainConfig::keys())
      cmd->add_option("--" + key, values[key], "override config key " + key)->group("Config overrides");
  }
  void apply(TrainConfig& cfg) const {
    for (const auto& [key, value] : values)
      if (!value.empty()) cfg.set(key, value);
  }
};

TrainConfig base_config(const std::string& path, const Overrides& overrides) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::load(path);
  overrides.apply(cfg);
  cfg.validate();
  return cfg;
}

std::unique_ptr<GavaModel> model_from_checkpoint(const std::string& path, const Overrides& overrides) {
  TrainConfig cfg = checkpoint_config(path);
  overrides.apply(cfg);
  cfg.validate();
  auto model = std::make_unique<GavaModel>(cfg);
  load_parameters(*model, path, &std::cerr);
  return model;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

const std::vector<SceneSample>& eval_part(const DatasetSplit& split) {
  if (!split.test.empty()) return split.test;
  if (!split.val.empty()) return split.val;
  return split.train;
}

int cmd_synth(const std::string& scenario, std::size_t n, std::uint64_t seed, const std::string& out_dir,
              const TrainConfig& cfg) {
  ensure_dir(out_dir);
  const auto scenes = synth_scenes(parse_scenario(scenario), n, seed, synth_config(cfg));
  for (const auto& scene : scenes) {
    auto out = open_out((fs::path(out_dir) / (scene.table.recording + ".csv")).string());
    write_csv(scene.table, out);
  }
  std::cout << "event=synth scenario=" << scenario << " scenes=" << scenes.size() << " out=" << out_dir << '\n';
  return kOk;
}

int cmd_train(const TrainConfig& cfg, const std::string& data, const std::string& out_dir) {
  ensure_dir(out_dir);
  BuildStats stats;
  auto samples = load_samples(data, cfg, &stats);
  DatasetSplit split = split_dataset(std::move(samples), cfg.train_fraction, cfg.val_fraction, cfg.seed);
  auto log_file = open_out((fs::path(out_dir) / "train.log").string());
  LogWriter log(&log_file);
  log.record("data", {{"samples", std::to_string(stats.samples)},
                      {"skipped_short", std::to_string(stats.skipped_short)},
                      {"dropped_incomplete", std::to_string(stats.dropped_incomplete)},
                      {"train", std::to_string(split.train.size())},
                      {"val", std::to_string(split.val.size())},
                      {"test", std::to_string(split.test.size())}});
  {
    auto cfg_out = open_out((fs::path(out_dir) / "config.txt").string());
    cfg_out << cfg.serialize();
  }
  GavaModel model(cfg);
  model.set_stats(split.stats);
  TrainOptions opts;
  opts.log = log;
  opts.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
  train(model, split.train, split.val, opts);
  const RmseTable table = rmse_eval(model, eval_part(split));
  const std::string text = format_rmse_table({{variant_label(cfg.variant), table}});
  auto rmse_out = open_out((fs::path(out_dir) / "rmse.txt").string());
  rmse_out << text;
  std::vector<std::pair<std::string, std::string>> fields;
  for (std::size_t k = 0; k < table.rmse.size(); ++k)
    fields.emplace_back("rmse_" + std::to_string(k + 1) + "s", LogWriter::num(table.rmse[k]));
  log.record("eval", fields);
  std::cout << text;
  return kOk;
}

int cmd_eval(GavaModel& model, const std::string& data, const std::string& records_path) {
  const auto samples = load_samples(data, model.config());
  const auto records = predict_all(model, samples);
  if (!records_path.empty()) {
    auto out = open_out(records_path);
    write_predictions(records, out);
  }
  const RmseTable table = rmse_from_records(records, model.config().dt,
                                            model.config().point_mode == PointMode::WeightedMean);
  std::cout << format_rmse_table({{variant_label(model.config().variant), table}});
  return kOk;
}

int cmd_predict(GavaModel& model, const std::string& csv, const std::string& out_path, const std::string& plot_path) {
  const auto samples = load_samples(csv, model.config());
  const auto records = predict_all(model, samples);
  auto out = open_out(out_path);
  write_predictions(records, out);
  if (!plot_path.empty()) {
    auto plot = open_out(plot_path);
    emit_plot_data(records, plot);
  }
  std::cout << "event=predict samples=" << records.size() << " out=" << out_path << '\n';
  return kOk;
}

int cmd_ablate(const TrainConfig& cfg, const std::string& data, const std::string& out_dir) {
  ensure_dir(out_dir);
  auto samples = load_samples(data, cfg);
  DatasetSplit split = split_dataset(std::move(samples), cfg.train_fraction, cfg.val_fraction, cfg.seed);
  auto log_file = open_out((fs::path(out_dir) / "ablation.log").string());
  const auto rows = run_ablation(cfg, split, LogWriter(&log_file));
  std::vector<std::pair<std::string, RmseTable>> named;
  for (const auto& r : rows) named.emplace_back(variant_label(r.variant), r.table);
  const std::string text = format_rmse_table(named);
  auto out = open_out((fs::path(out_dir) / "ablation.txt").string());
  out << text;
  std::cout << text;
  return kOk;
}

int cmd_gradcheck(double tol, std::uint64_t seed, bool skip_model) {
  auto cases = run_op_gradchecks(tol, seed);
  auto layers = run_layer_gradchecks(tol, seed);
  cases.insert(cases.end(), layers.begin(), layers.end());
  if (!skip_model) cases.push_back(run_model_gradcheck(tol, seed));
  std::size_t failed = 0;
  for (const auto& c : cases) {
    failed += !c.report.passed;
    std::cout << (c.report.passed ? "PASS " : "FAIL ") << c.name << " max_rel=" << c.report.max_rel_error
              << " entries=" << c.report.checked << " worst=" << c.report.worst << '\n';
  }
  std::cout << "event=gradcheck cases=" << cases.size() << " failed=" << failed << '\n';
  return failed == 0 ? kOk : kNumericError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GaVa trajectory prediction: synthesize, train, evaluate, predict, ablate, gradcheck"};
  app.require_subcommand(1);

  std::string config_path, data, out_dir, checkpoint, records, plot, scenario = "constant_velocity";
  std::size_t n = 256;
  std::uint64_t seed = 1;
  double tol = 1e-4;
  bool skip_model = false;

  Overrides synth_o, train_o, eval_o, predict_o, ablate_o;
  auto* synth = app.add_subcommand("synth", "Write synthetic scenes as CSV (one file per scene)");
  synth->add_option("--scenario", scenario, "constant_velocity | lane_change | car_following")->required();
  synth->add_option("--n", n, "number of scenes");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--config", config_path, "config file (protocol and grid keys are used)");
  synth_o.attach(synth);

  auto* train_cmd = app.add_subcommand("train", "Train on CSV data and write a checkpoint");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--data", data, "CSV file or directory")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_o.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Horizon RMSE of a checkpoint on CSV data");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--data", data, "CSV file or directory")->required();
  eval_cmd->add_option("--records", records, "also write prediction records here");
  eval_o.attach(eval_cmd);

  auto* predict_cmd = app.add_subcommand("predict", "Write per-mode Gaussian predictions for a CSV");
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  predict_cmd->add_option("--csv", data, "input CSV file or directory")->required();
  predict_cmd->add_option("--out", records, "prediction records output")->required();
  predict_cmd->add_option("--plot", plot, "plot data output");
  predict_o.attach(predict_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate all four variants");
  ablate_cmd->add_option("--config", config_path, "config file");
  ablate_cmd->add_option("--data", data, "CSV file or directory")->required();
  ablate_cmd->add_option("--out", out_dir, "output directory")->required();
  ablate_o.attach(ablate_cmd);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op, layer, and the tiny model");
  grad_cmd->add_option("--tol", tol, "relative error tolerance");
  grad_cmd->add_option("--seed", seed, "input seed");
  grad_cmd->add_flag("--skip-model", skip_model, "skip the composed-model check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*synth) return cmd_synth(scenario, n, seed, out_dir, base_config(config_path, synth_o));
    if (*train_cmd) return cmd_train(base_config(config_path, train_o), data, out_dir);
    if (*eval_cmd) {
      auto model = model_from_checkpoint(checkpoint, eval_o);
      return cmd_eval(*model, data, records);
    }
    if (*predict_cmd) {
      auto model = model_from_checkpoint(checkpoint, predict_o);
      return cmd_predict(*model, data, records, plot);
    }
    if (*ablate_cmd) return cmd_ablate(base_config(config_path, ablate_o), data, out_dir);
    if (*grad_cmd) return cmd_gradcheck(tol, seed, skip_model);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ContractError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
