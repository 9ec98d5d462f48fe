#include "gava/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gava/checkpoint.hpp"
#include "gava/optim.hpp"

namespace gava {

namespace {

const double kLog2Pi = std::log(2.0 * M_PI);

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data pipeline

WindowConfig window_config(const TrainConfig& config) {
  WindowConfig wc;
  wc.T = config.T;
  wc.F = config.F;
  wc.stride = config.stride;
  wc.dt = config.dt;
  wc.grid = config.grid;
  return wc;
}

SynthConfig synth_config(const TrainConfig& config) {
  SynthConfig sc;
  sc.T = config.T;
  sc.F = config.F;
  sc.dt = config.dt;
  sc.grid = config.grid;
  sc.lane_width = config.grid.lane_width;
  return sc;
}

std::vector<SceneSample> load_samples(const std::string& path, const TrainConfig& config, BuildStats* stats) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path, ec)) {
    files.push_back(path);
  } else {
    throw DataError("no such data path: " + path);
  }
  if (files.empty()) throw DataError("no .csv files under " + path);
  CsvSchema schema;
  schema.units = config.units;
  schema.frame_dt = config.frame_dt;
  const WindowConfig wc = window_config(config);
  BuildStats total;
  std::vector<SceneSample> out;
  for (const auto& file : files) {
    TrajectoryTable table = load_csv(file, schema);
    table.recording = fs::path(file).stem().string();
    label_maneuvers(table, config.label_horizon_s);
    BuildStats local;
    for (auto& s : build_samples(table, wc, &local)) out.push_back(std::move(s));
    total.samples += local.samples;
    total.skipped_short += local.skipped_short;
    total.dropped_incomplete += local.dropped_incomplete;
  }
  if (stats) *stats = total;
  if (out.empty()) {
    throw DataError("no complete " + std::to_string(config.T + config.F) + "-frame windows in " + path + " (" +
                    std::to_string(total.skipped_short) + " trajectories too short, " +
                    std::to_string(total.dropped_incomplete) + " windows with gaps)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Tensor nll_loss(const Tensor& params, std::span<const double> truth, std::size_t mode) {
  if (params.rank() != 2 || params.dim(1) != kGaussianParams || params.dim(0) % kModes != 0) {
    throw DimensionError("nll_loss: expected [F*6 x 5] parameters, got " + shape_str(params.shape()));
  }
  const std::size_t F = params.dim(0) / kModes;
  if (truth.size() != F * 2) throw DimensionError("nll_loss: truth must be F x 2");
  if (mode >= kModes) throw ContractError("nll_loss: mode out of range");
  std::vector<std::size_t> rows(F);
  for (std::size_t f = 0; f < F; ++f) rows[f] = f * kModes + mode;
  Tensor p = gather_rows(params, rows);
  Tensor mu = slice_cols(p, 0, 2), sigma = slice_cols(p, 2, 4), rho = slice_cols(p, 4, 5);
  Tensor d = mul(sub(Tensor({F, 2}, std::vector<double>(truth.begin(), truth.end())), mu), reciprocal(sigma));
  Tensor one_minus = add_scalar(scale(square(rho), -1.0), 1.0);
  Tensor z = sub(sum_cols(square(d)), scale(mul(rho, mul(slice_cols(d, 0, 1), slice_cols(d, 1, 2))), 2.0));
  Tensor per_step = add(add(sum_cols(log(sigma)), scale(log(one_minus), 0.5)),
                        scale(mul(z, reciprocal(one_minus)), 0.5));
  return add_scalar(mean(per_step), kLog2Pi);
}

double nll_loss(const GaussianTrajectory& traj, std::span<const double> truth, std::size_t mode) {
  if (truth.size() != traj.F * 2) throw DimensionError("nll_loss: truth must be F x 2");
  double acc = 0.0;
  for (std::size_t f = 0; f < traj.F; ++f)
    acc -= bivariate_log_density(traj.modes.at(mode)[f], truth[2 * f], truth[2 * f + 1]);
  return acc / static_cast<double>(traj.F);
}

Tensor maneuver_loss(const Tensor& p_lateral, const Tensor& p_longitudinal, LateralManeuver la,
                     LongitudinalManeuver lo) {
  const auto i = static_cast<std::size_t>(la), j = static_cast<std::size_t>(lo);
  Tensor picked = concat_cols({slice_cols(p_lateral, i, i + 1), slice_cols(p_longitudinal, j, j + 1)});
  return scale(sum(log(picked)), -1.0);
}

double maneuver_loss(const ManeuverDistribution& dist, LateralManeuver la, LongitudinalManeuver lo) {
  return -std::log(dist.p_lateral[static_cast<std::size_t>(la)]) -
         std::log(dist.p_longitudinal[static_cast<std::size_t>(lo)]);
}

LossParts sample_loss(GavaModel& model, const SceneSample& sample, bool training) {
  DecoderOutput out = model.forward(sample, training);
  const auto s = model.position_scale();
  std::vector<double> truth(sample.future_truth);
  for (std::size_t f = 0; f < sample.F; ++f) {
    truth[2 * f] /= s[0];
    truth[2 * f + 1] /= s[1];
  }
  Tensor nll = nll_loss(out.params, truth, sample.mode());
  Tensor man = maneuver_loss(out.p_lateral, out.p_longitudinal, sample.lateral, sample.longitudinal);
  const auto& cfg = model.config();
  LossParts parts;
  parts.nll = nll.item();
  parts.maneuver = man.item();
  parts.total = add(scale(nll, cfg.lambda_nll), scale(man, cfg.lambda_man));
  return parts;
}

// ---------------------------------------------------------------------------
// Training

std::string LogWriter::num(double v) { return g17(v); }

void LogWriter::record(const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields) {
  if (!out_) return;
  *out_ << "event=" << event;
  for (const auto& [k, v] : fields) *out_ << ' ' << k << '=' << v;
  *out_ << '\n';
  out_->flush();
}

double evaluate_loss(GavaModel& model, std::span<const SceneSample> samples) {
  if (samples.empty()) return 0.0;
  NoGradGuard guard;
  double acc = 0.0;
  for (const auto& s : samples) acc += sample_loss(model, s, false).total.item();
  return acc / static_cast<double>(samples.size());
}

std::vector<EpochRecord> train(GavaModel& model, std::span<const SceneSample> train_set,
                               std::span<const SceneSample> val_set, TrainOptions options) {
  const TrainConfig& cfg = model.config();
  if (train_set.empty()) throw DataError("training set is empty");
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  adam_cfg.clip_norm = cfg.clip_norm;
  Adam adam(model.store().parameter_list(), adam_cfg);
  std::mt19937_64 shuffle_rng(cfg.seed * 0x2545f4914f6cdd1dULL + 1);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::string& ckpt = options.checkpoint_path;
  if (!ckpt.empty()) save_checkpoint(model, ckpt);

  options.log.record("train_start", {{"samples", std::to_string(train_set.size())},
                                     {"val_samples", std::to_string(val_set.size())},
                                     {"parameters", std::to_string(model.store().parameter_count())},
                                     {"fingerprint", cfg.fingerprint()}});
  std::vector<EpochRecord> trace;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(end - begin);
        adam.zero_grad();
        for (std::size_t i = begin; i < end; ++i) {
          LossParts parts = sample_loss(model, train_set[order[i]], true);
          if (!std::isfinite(parts.total.item())) throw NumericError("non-finite loss");
          rec.train_loss += parts.total.item();
          rec.train_nll += parts.nll;
          rec.train_maneuver += parts.maneuver;
          backward(scale(parts.total, inv));
        }
        for (const auto& p : model.store().params()) {
          if (!p.value.has_grad()) continue;
          for (double g : p.value.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        }
        adam.step();
      }
      if (!val_set.empty()) rec.val_loss = evaluate_loss(model, val_set);
    } catch (const NumericError& e) {
      clear_tape();
      options.log.record("abort", {{"epoch", std::to_string(epoch)}, {"reason", std::string("\"") + e.what() + "\""},
                                   {"last_good", ckpt.empty() ? "none" : ckpt}});
      throw TrainingAborted(std::string("training aborted at epoch ") + std::to_string(epoch) + ": " + e.what() +
                                (ckpt.empty() ? "" : "; last good checkpoint: " + ckpt),
                            ckpt);
    }
    const double n = static_cast<double>(train_set.size());
    rec.train_loss /= n;
    rec.train_nll /= n;
    rec.train_maneuver /= n;
    std::vector<std::pair<std::string, std::string>> fields{{"epoch", std::to_string(epoch)},
                                                            {"train_loss", LogWriter::num(rec.train_loss)},
                                                            {"train_nll", LogWriter::num(rec.train_nll)},
                                                            {"train_maneuver", LogWriter::num(rec.train_maneuver)}};
    if (rec.val_loss) fields.emplace_back("val_loss", LogWriter::num(*rec.val_loss));
    options.log.record("epoch", fields);
    trace.push_back(rec);
    adam.config().learning_rate *= cfg.lr_decay;
    if (!ckpt.empty()) save_checkpoint(model, ckpt);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Evaluation

std::size_t horizon_bucket(std::size_t f, double dt) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(f + 1) * dt - 1e-9));
}

RmseTable rmse_from_points(const std::vector<std::vector<double>>& predictions,
                           const std::vector<std::vector<double>>& truths, double dt) {
  if (predictions.size() != truths.size()) throw DimensionError("rmse: prediction/truth count mismatch");
  RmseTable table;
  std::vector<double> acc;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const auto& t = truths[i];
    if (p.size() != t.size() || p.size() % 2 != 0) throw DimensionError("rmse: prediction/truth length mismatch");
    for (std::size_t f = 0; f < p.size() / 2; ++f) {
      const std::size_t b = horizon_bucket(f, dt);
      if (acc.size() < b) {
        acc.resize(b, 0.0);
        table.count.resize(b, 0);
      }
      const double dx = p[2 * f] - t[2 * f], dy = p[2 * f + 1] - t[2 * f + 1];
      acc[b - 1] += dx * dx + dy * dy;
      table.count[b - 1] += 1;
    }
  }
  table.rmse.resize(acc.size());
  for (std::size_t b = 0; b < acc.size(); ++b)
    table.rmse[b] = table.count[b] ? std::sqrt(acc[b] / static_cast<double>(table.count[b])) : 0.0;
  return table;
}

std::vector<PredictionRecord> predict_all(GavaModel& model, std::span<const SceneSample> samples) {
  std::vector<PredictionRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PredictionRecord r;
    r.recording = s.recording;
    r.agent_id = s.agent_id;
    r.start_frame = s.start_frame;
    for (std::size_t t = 0; t < s.T; ++t) {
      r.history.push_back(s.target(t, kFeatX));
      r.history.push_back(s.target(t, kFeatY));
    }
    r.truth = s.future_truth;
    r.trajectory = model.predict(s);
    out.push_back(std::move(r));
  }
  return out;
}

RmseTable rmse_from_records(const std::vector<PredictionRecord>& records, double dt, bool weighted_mean) {
  std::vector<std::vector<double>> preds, truths;
  for (const auto& r : records) {
    preds.push_back(point_prediction(r.trajectory, weighted_mean));
    truths.push_back(r.truth);
  }
  return rmse_from_points(preds, truths, dt);
}

RmseTable rmse_eval(GavaModel& model, std::span<const SceneSample> samples) {
  return rmse_from_records(predict_all(model, samples), model.config().dt,
                           model.config().point_mode == PointMode::WeightedMean);
}

void write_predictions(const std::vector<PredictionRecord>& records, std::ostream& out) {
  for (const auto& r : records) {
    const std::size_t T = r.history.size() / 2, F = r.trajectory.F;
    out << "sample " << r.recording << ' ' << r.agent_id << ' ' << r.start_frame << ' ' << T << ' ' << F << '\n';
    out << "history";
    for (double v : r.history) out << ' ' << g17(v);
    out << "\ntruth";
    for (double v : r.truth) out << ' ' << g17(v);
    out << "\nprob lateral";
    for (double p : r.trajectory.maneuvers.p_lateral) out << ' ' << g17(p);
    out << "\nprob longitudinal";
    for (double p : r.trajectory.maneuvers.p_longitudinal) out << ' ' << g17(p);
    out << '\n';
    for (std::size_t m = 0; m < kModes; ++m) {
      out << "mode " << m << ' ' << mode_name(m) << ' ' << g17(r.trajectory.maneuvers.joint(m)) << '\n';
      for (std::size_t f = 0; f < F; ++f) {
        const auto& g = r.trajectory.modes[m][f];
        out << "step " << f + 1 << ' ' << g17(g.mu_x) << ' ' << g17(g.mu_y) << ' ' << g17(g.sigma_x) << ' '
            << g17(g.sigma_y) << ' ' << g17(g.rho) << '\n';
      }
    }
    out << "end\n";
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  PredictionRecord cur;
  std::size_t T = 0, F = 0, mode = 0;
  auto read_values = [](std::istringstream& ls, std::vector<double>& dst, std::size_t n) {
    dst.resize(n);
    for (auto& v : dst)
      if (!(ls >> v)) throw DataError("prediction records: short value list");
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "sample") {
      cur = {};
      ls >> cur.recording >> cur.agent_id >> cur.start_frame >> T >> F;
      cur.trajectory.F = F;
    } else if (tag == "history") {
      read_values(ls, cur.history, 2 * T);
    } else if (tag == "truth") {
      read_values(ls, cur.truth, 2 * F);
    } else if (tag == "prob") {
      std::string which;
      ls >> which;
      if (which == "lateral") {
        for (auto& p : cur.trajectory.maneuvers.p_lateral) ls >> p;
      } else {
        for (auto& p : cur.trajectory.maneuvers.p_longitudinal) ls >> p;
      }
    } else if (tag == "mode") {
      ls >> mode;
      if (mode >= kModes) throw DataError("prediction records: bad mode index");
      cur.trajectory.modes[mode].clear();
    } else if (tag == "step") {
      std::size_t f = 0;
      GaussianParams g;
      if (!(ls >> f >> g.mu_x >> g.mu_y >> g.sigma_x >> g.sigma_y >> g.rho)) {
        throw DataError("prediction records: bad step line");
      }
      cur.trajectory.modes[mode].push_back(g);
    } else if (tag == "end") {
      out.push_back(cur);
    } else {
      throw DataError("prediction records: unknown tag " + tag);
    }
  }
  return out;
}

void emit_plot_data(const std::vector<PredictionRecord>& records, std::ostream& out) {
  out << "# sample kind mode step x y x_lo x_hi y_lo y_hi probability\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::size_t T = r.history.size() / 2;
    for (std::size_t t = 0; t < T; ++t) {
      const double x = r.history[2 * t], y = r.history[2 * t + 1];
      out << i << " history - " << static_cast<long>(t) - static_cast<long>(T) + 1 << ' ' << g17(x) << ' ' << g17(y)
          << ' ' << g17(x) << ' ' << g17(x) << ' ' << g17(y) << ' ' << g17(y) << " 1\n";
    }
    for (std::size_t f = 0; f < r.truth.size() / 2; ++f) {
      const double x = r.truth[2 * f], y = r.truth[2 * f + 1];
      out << i << " truth - " << f + 1 << ' ' << g17(x) << ' ' << g17(y) << ' ' << g17(x) << ' ' << g17(x) << ' '
          << g17(y) << ' ' << g17(y) << " 1\n";
    }
    for (std::size_t m = 0; m < kModes; ++m) {
      const double p = r.trajectory.maneuvers.joint(m);
      for (std::size_t f = 0; f < r.trajectory.F; ++f) {
        const auto& g = r.trajectory.modes[m][f];
        out << i << " pred " << mode_name(m) << ' ' << f + 1 << ' ' << g17(g.mu_x) << ' ' << g17(g.mu_y) << ' '
            << g17(g.mu_x - 2 * g.sigma_x) << ' ' << g17(g.mu_x + 2 * g.sigma_x) << ' ' << g17(g.mu_y - 2 * g.sigma_y)
            << ' ' << g17(g.mu_y + 2 * g.sigma_y) << ' ' << g17(p) << '\n';
      }
    }
  }
}

std::string format_rmse_table(const std::vector<std::pair<std::string, RmseTable>>& rows) {
  std::size_t horizons = 0, width = 5;
  for (const auto& [name, t] : rows) {
    horizons = std::max(horizons, t.rmse.size());
    width = std::max(width, name.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "model";
  for (std::size_t k = 1; k <= horizons; ++k) os << std::right << std::setw(10) << (std::to_string(k) + "s");
  os << '\n';
  for (const auto& [name, t] : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << name << std::right << std::fixed << std::setprecision(4);
    for (std::size_t k = 0; k < horizons; ++k) os << std::setw(10) << (k < t.rmse.size() ? t.rmse[k] : 0.0);
    os << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> run_ablation(const TrainConfig& config, const DatasetSplit& split, LogWriter log) {
  const auto& eval_set = split.test.empty() ? (split.val.empty() ? split.train : split.val) : split.test;
  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    TrainConfig cfg = config;
    cfg.variant = v;
    GavaModel model(cfg);
    model.set_stats(split.stats);
    log.record("variant", {{"variant", variant_id(v)}});
    TrainOptions opts;
    opts.log = log;
    AblationRow row;
    row.variant = v;
    row.trace = train(model, split.train, split.val, opts);
    row.table = rmse_eval(model, eval_set);
    std::vector<std::pair<std::string, std::string>> fields{{"variant", variant_id(v)}};
    for (std::size_t k = 0; k < row.table.rmse.size(); ++k)
      fields.emplace_back("rmse_" + std::to_string(k + 1) + "s", LogWriter::num(row.table.rmse[k]));
    log.record("ablation_result", fields);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gava
