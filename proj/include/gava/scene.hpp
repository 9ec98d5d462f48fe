#pragma once

// Trajectory tables, sample windowing, the neighbor occupancy grid, maneuver
// labels, synthetic scenarios, and feature normalization.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gava/errors.hpp"

namespace gava {

enum class VehicleClass { Car, Truck, Motorcycle };
enum class LateralManeuver { LeftChange = 0, Keep = 1, RightChange = 2 };
enum class LongitudinalManeuver { Normal = 0, Braking = 1 };

inline constexpr std::size_t kLateralClasses = 3;
inline constexpr std::size_t kLongitudinalClasses = 2;
inline constexpr std::size_t kModes = kLateralClasses * kLongitudinalClasses;

/// Joint maneuver mode index: lateral * 2 + longitudinal.
constexpr std::size_t mode_index(LateralManeuver la, LongitudinalManeuver lo) {
  return static_cast<std::size_t>(la) * kLongitudinalClasses + static_cast<std::size_t>(lo);
}
constexpr LateralManeuver mode_lateral(std::size_t mode) {
  return static_cast<LateralManeuver>(mode / kLongitudinalClasses);
}
constexpr LongitudinalManeuver mode_longitudinal(std::size_t mode) {
  return static_cast<LongitudinalManeuver>(mode % kLongitudinalClasses);
}
std::string mode_name(std::size_t mode);

/// One vehicle at one frame. x is lateral, y longitudinal; SI units.
struct AgentState {
  int agent_id = 0;
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  VehicleClass vehicle_class = VehicleClass::Car;
  int lane_id = 1;
  LateralManeuver lateral = LateralManeuver::Keep;
  LongitudinalManeuver longitudinal = LongitudinalManeuver::Normal;
};

struct Trajectory {
  int agent_id = 0;
  std::vector<AgentState> states;  // strictly increasing frame
};

struct TrajectoryTable {
  std::string recording;
  double frame_dt = 0.1;  // seconds between consecutive frame ids
  std::vector<Trajectory> agents;  // ascending agent_id
};

// ---------------------------------------------------------------------------
// CSV ingestion

enum class LengthUnit { Feet, Meters };

/// Column map and unit convention. A file may override `units` and `frame_dt`
/// with leading comment lines `# units=meters` / `# frame_dt=0.2`.
struct CsvSchema {
  std::string agent_id = "Vehicle_ID";
  std::string frame = "Frame_ID";
  std::string x = "Local_X";
  std::string y = "Local_Y";
  std::string velocity = "v_Vel";
  std::string acceleration = "v_Acc";
  std::string lane = "Lane_ID";
  std::string vehicle_class = "v_Class";
  LengthUnit units = LengthUnit::Feet;
  double frame_dt = 0.1;
};

inline constexpr double kMetersPerFoot = 0.3048;

TrajectoryTable load_csv(const std::string& path, const CsvSchema& schema = {});
TrajectoryTable parse_csv(std::istream& in, const CsvSchema& schema, const std::string& recording);
/// Writes in the default column layout with `# units=meters` and `# frame_dt` headers.
void write_csv(const TrajectoryTable& table, std::ostream& out);
void write_csv(const std::vector<TrajectoryTable>& tables, std::ostream& out);

// ---------------------------------------------------------------------------
// Neighbor grid

/// Longitudinal slots × lanes around the target. Cell index = slot * lanes + lane;
/// lane 0 is the lane to the left (lower lane_id), slots increase ahead.
struct GridSpec {
  std::size_t slots = 13;
  std::size_t lanes = 3;
  double slot_length = 4.57;
  double lane_width = 3.7;

  std::size_t cells() const { return slots * lanes; }
  std::size_t center_slot() const { return slots / 2; }
  std::size_t center_lane() const { return lanes / 2; }
  std::size_t center_cell() const { return center_slot() * lanes + center_lane(); }
  /// Slot-center offset of a cell relative to the target: (lateral, longitudinal).
  std::array<double, 2> cell_offset(std::size_t cell) const;
};

struct GridAssignment {
  std::vector<int> agent;          // per cell; -1 when empty
  std::vector<double> distance;    // per cell; Euclidean distance to target
  std::vector<std::size_t> state;  // per cell; index into the frame_states span
};

/// Places each non-target agent into its cell; nearest agent wins a cell, ties
/// go to the lower agent_id. The target's own (center) cell is never assigned.
GridAssignment build_neighbor_grid(std::span<const AgentState> frame_states, const AgentState& target,
                                   const GridSpec& grid = {});

// ---------------------------------------------------------------------------
// Maneuver labels

/// Labels every state in place. Lateral: left/right change when lane_id
/// differs within ±horizon_frames; longitudinal: braking when mean velocity
/// over the next horizon_frames is below 0.8 × current velocity.
void label_maneuvers(Trajectory& trajectory, std::size_t horizon_frames);
void label_maneuvers(TrajectoryTable& table, double horizon_seconds = 2.0);

// ---------------------------------------------------------------------------
// Samples

/// Per-agent state vector layout used everywhere downstream.
enum StateFeature : std::size_t {
  kFeatX = 0,
  kFeatY,
  kFeatVelocity,
  kFeatAcceleration,
  kFeatLane,
  kFeatCar,
  kFeatTruck,
  kFeatMotorcycle,
  kStateDim
};

struct SceneSample {
  std::string recording;
  int agent_id = 0;
  int start_frame = 0;
  std::size_t T = 0;
  std::size_t F = 0;
  double dt = 0.2;
  GridSpec grid;

  /// T × kStateDim; positions relative to the target at the last history frame.
  std::vector<double> target_history;
  std::vector<double> target_speed_history;  // T
  std::vector<int> target_mode;              // T joint maneuver modes

  /// Agents found in each cell at the last history frame, with their full
  /// history: cells × T × kStateDim, mask cells × T.
  std::vector<int> neighbor_ids;  // cells; -1 for empty
  std::vector<double> neighbor_histories;
  std::vector<unsigned char> neighbor_mask;

  /// Per-frame grid occupancy: T × cells × kStateDim, mask / mode T × cells.
  std::vector<double> frame_cells;
  std::vector<unsigned char> frame_mask;
  std::vector<int> frame_mode;

  /// F × 2 (x, y) relative to the target at the last history frame.
  std::vector<double> future_truth;

  LateralManeuver lateral = LateralManeuver::Keep;
  LongitudinalManeuver longitudinal = LongitudinalManeuver::Normal;

  std::size_t cells() const { return grid.cells(); }
  std::size_t mode() const { return mode_index(lateral, longitudinal); }
  double target(std::size_t t, std::size_t f) const { return target_history[t * kStateDim + f]; }
  const double* cell_state(std::size_t t, std::size_t c) const {
    return frame_cells.data() + (t * cells() + c) * kStateDim;
  }
  bool occupied(std::size_t t, std::size_t c) const { return frame_mask[t * cells() + c] != 0; }
  bool neighbor_present(std::size_t c) const { return neighbor_ids[c] >= 0; }
  std::size_t occupied_neighbors() const;
};

struct WindowConfig {
  std::size_t T = 15;
  std::size_t F = 25;
  std::size_t stride = 1;
  double dt = 0.2;
  GridSpec grid;
  /// When >= 0, only this agent is used as a target.
  int only_agent = -1;
};

struct BuildStats {
  std::size_t samples = 0;
  std::size_t skipped_short = 0;      // trajectories shorter than T+F
  std::size_t dropped_incomplete = 0;  // windows missing a frame
};

/// Slides T+F windows over every agent (labels must already be assigned).
std::vector<SceneSample> build_samples(const TrajectoryTable& table, const WindowConfig& config,
                                       BuildStats* stats = nullptr);

/// Window count for a gap-free trajectory of `length` resampled frames.
std::size_t window_count(std::size_t length, std::size_t T, std::size_t F, std::size_t stride);

// ---------------------------------------------------------------------------
// Synthetic scenarios

enum class Scenario { ConstantVelocity, LaneChange, CarFollowing };

Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario s);

struct SynthConfig {
  std::size_t T = 15;
  std::size_t F = 25;
  double dt = 0.2;
  double speed_min = 10.0;
  double speed_max = 30.0;
  double lane_width = 3.7;
  double lane_change_duration = 4.0;
  /// Extra vehicles in adjacent lanes for the constant-velocity and lane-change scenes.
  std::size_t max_distractors = 2;
  GridSpec grid;
};

struct SynthScene {
  TrajectoryTable table;
  int target_id = 0;
};

std::vector<SynthScene> synth_scenes(Scenario scenario, std::size_t n, std::uint64_t seed,
                                     const SynthConfig& config = {});
/// One sample per scene, targeting the scene's designated vehicle.
std::vector<SceneSample> synth_generate(Scenario scenario, std::size_t n, std::uint64_t seed,
                                        const SynthConfig& config = {});

// ---------------------------------------------------------------------------
// Normalization and splits

/// Per-feature affine map z = (x - mean) / scale over the state vector.
/// Position features keep mean 0 so the target-relative origin is preserved.
struct NormalizationStats {
  std::array<double, kStateDim> mean{};
  std::array<double, kStateDim> scale{};
  /// Per-axis scale of future positions: max(1, rms) over the future truth.
  std::array<double, 2> future_scale{1.0, 1.0};

  NormalizationStats() { scale.fill(1.0); }
  void apply(std::span<double> state) const;
  void invert(std::span<double> state) const;
};

struct DatasetSplit {
  std::vector<SceneSample> train;
  std::vector<SceneSample> val;
  std::vector<SceneSample> test;
  NormalizationStats stats;
};

NormalizationStats compute_stats(std::span<const SceneSample> samples);
/// Standardizes every occupied state vector in place (empty slots stay zero).
void normalize_sample(SceneSample& sample, const NormalizationStats& stats);
void denormalize_sample(SceneSample& sample, const NormalizationStats& stats);
/// Stats from train only, then applied to all three parts.
DatasetSplit normalize(DatasetSplit split);
DatasetSplit denormalize(DatasetSplit split);

/// Groups samples by (recording, agent) and deals groups into parts by seed.
DatasetSplit split_dataset(std::vector<SceneSample> samples, double train_fraction, double val_fraction,
                           std::uint64_t seed);

}  // namespace gava
