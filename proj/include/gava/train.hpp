#pragma once

// Losses, the training loop, horizon RMSE, prediction records, and the
// variant ablation harness.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gava/model.hpp"

namespace gava {

// ---------------------------------------------------------------------------
// Data pipeline

/// Every `*.csv` under a directory (sorted by name) or a single file: ingested
/// with the configured units, labeled, and windowed. Throws DataError when no
/// sample survives.
std::vector<SceneSample> load_samples(const std::string& path, const TrainConfig& config,
                                      BuildStats* stats = nullptr);

WindowConfig window_config(const TrainConfig& config);
SynthConfig synth_config(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Losses

/// Mean over F of the bivariate Gaussian NLL of `truth` (F×2) under mode `mode`
/// of `params` ([F·6×5], row f·6+m).
Tensor nll_loss(const Tensor& params, std::span<const double> truth, std::size_t mode);
double nll_loss(const GaussianTrajectory& traj, std::span<const double> truth, std::size_t mode);

/// Cross-entropy of both heads against the labels, summed.
Tensor maneuver_loss(const Tensor& p_lateral, const Tensor& p_longitudinal, LateralManeuver la,
                     LongitudinalManeuver lo);
double maneuver_loss(const ManeuverDistribution& dist, LateralManeuver la, LongitudinalManeuver lo);

struct LossParts {
  Tensor total;
  double nll = 0.0;
  double maneuver = 0.0;
};

/// λ_nll·NLL + λ_man·CE for one sample, NLL in normalized position units.
LossParts sample_loss(GavaModel& model, const SceneSample& sample, bool training);

// ---------------------------------------------------------------------------
// Training

/// Append-only `key=value` records, one per line.
class LogWriter {
 public:
  LogWriter() = default;
  explicit LogWriter(std::ostream* out) : out_(out) {}
  void record(const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields);
  static std::string num(double v);

 private:
  std::ostream* out_ = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_nll = 0.0;
  double train_maneuver = 0.0;
  std::optional<double> val_loss;
};

struct TrainOptions {
  LogWriter log;
  /// When set, a checkpoint is written here after every finished epoch.
  std::string checkpoint_path;
};

/// Thrown when a non-finite loss or gradient stops training.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::string last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::string& last_good() const { return last_good_; }

 private:
  std::string last_good_;
};

/// Mini-batch Adam over `train` (raw samples), optional validation loss per
/// epoch. The model's normalization statistics must already be set.
std::vector<EpochRecord> train(GavaModel& model, std::span<const SceneSample> train_set,
                               std::span<const SceneSample> val_set, TrainOptions options = {});

/// Mean total loss in eval mode.
double evaluate_loss(GavaModel& model, std::span<const SceneSample> samples);

// ---------------------------------------------------------------------------
// Evaluation

/// Horizon bucket (1-based second) of future step f (0-based).
std::size_t horizon_bucket(std::size_t f, double dt);

struct RmseTable {
  std::vector<double> rmse;        // per horizon second
  std::vector<std::size_t> count;  // squared errors in each bucket
};

/// predictions and truths are per-sample F×2 arrays.
RmseTable rmse_from_points(const std::vector<std::vector<double>>& predictions,
                           const std::vector<std::vector<double>>& truths, double dt);

struct PredictionRecord {
  std::string recording;
  int agent_id = 0;
  int start_frame = 0;
  std::vector<double> history;  // T×2 target positions
  std::vector<double> truth;    // F×2
  GaussianTrajectory trajectory;
};

std::vector<PredictionRecord> predict_all(GavaModel& model, std::span<const SceneSample> samples);
RmseTable rmse_eval(GavaModel& model, std::span<const SceneSample> samples);
RmseTable rmse_from_records(const std::vector<PredictionRecord>& records, double dt, bool weighted_mean);

/// Text records: a `sample` line, `prob` lines, then `step` lines per mode.
void write_predictions(const std::vector<PredictionRecord>& records, std::ostream& out);
std::vector<PredictionRecord> read_predictions(std::istream& in);
/// Whitespace table of history, truth, and per-mode means with ±2σ envelopes.
void emit_plot_data(const std::vector<PredictionRecord>& records, std::ostream& out);

std::string format_rmse_table(const std::vector<std::pair<std::string, RmseTable>>& rows);

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  Variant variant = Variant::Full;
  RmseTable table;
  std::vector<EpochRecord> trace;
};

/// Trains and evaluates every variant on the same split with shared settings.
std::vector<AblationRow> run_ablation(const TrainConfig& config, const DatasetSplit& split, LogWriter log = {});

}  // namespace gava
