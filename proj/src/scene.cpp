#include "gava/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace gava {

std::string mode_name(std::size_t mode) {
  static const char* lat[] = {"left", "keep", "right"};
  static const char* lon[] = {"normal", "braking"};
  return std::string(lat[mode / kLongitudinalClasses]) + "/" + lon[mode % kLongitudinalClasses];
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& column, std::size_t line_no) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": column " + column + " is not numeric: '" + s + "'");
  }
}

VehicleClass class_from_code(int code) {
  switch (code) {
    case 1: return VehicleClass::Motorcycle;
    case 3: return VehicleClass::Truck;
    default: return VehicleClass::Car;
  }
}

int class_to_code(VehicleClass c) {
  switch (c) {
    case VehicleClass::Motorcycle: return 1;
    case VehicleClass::Truck: return 3;
    case VehicleClass::Car: return 2;
  }
  return 2;
}

}  // namespace

TrajectoryTable parse_csv(std::istream& in, const CsvSchema& schema_in, const std::string& recording) {
  CsvSchema schema = schema_in;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      body.erase(std::remove_if(body.begin(), body.end(), ::isspace), body.end());
      auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = body.substr(0, eq), value = body.substr(eq + 1);
      if (key == "units") {
        if (value == "meters") schema.units = LengthUnit::Meters;
        else if (value == "feet") schema.units = LengthUnit::Feet;
        else throw SchemaError("unknown units flag '" + value + "'");
      } else if (key == "frame_dt") {
        schema.frame_dt = parse_number(value, "frame_dt", line_no);
      }
      continue;
    }
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw SchemaError(recording + ": missing header row");
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(recording + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column(schema.agent_id), c_frame = column(schema.frame), c_x = column(schema.x),
                    c_y = column(schema.y), c_v = column(schema.velocity), c_a = column(schema.acceleration),
                    c_lane = column(schema.lane), c_class = column(schema.vehicle_class);
  const double unit = schema.units == LengthUnit::Feet ? kMetersPerFoot : 1.0;
  if (!(schema.frame_dt > 0.0)) throw SchemaError(recording + ": frame_dt must be positive");

  std::map<int, Trajectory> agents;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    auto f = split_csv_line(line);
    if (f.size() < header.size()) {
      throw DataError(recording + ": line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    AgentState s;
    s.agent_id = static_cast<int>(parse_number(f[c_id], schema.agent_id, line_no));
    s.frame = static_cast<int>(parse_number(f[c_frame], schema.frame, line_no));
    s.x = parse_number(f[c_x], schema.x, line_no) * unit;
    s.y = parse_number(f[c_y], schema.y, line_no) * unit;
    s.velocity = parse_number(f[c_v], schema.velocity, line_no) * unit;
    s.acceleration = parse_number(f[c_a], schema.acceleration, line_no) * unit;
    s.lane_id = static_cast<int>(parse_number(f[c_lane], schema.lane, line_no));
    s.vehicle_class = class_from_code(static_cast<int>(parse_number(f[c_class], schema.vehicle_class, line_no)));
    if (s.velocity < 0.0) throw DataError(recording + ": line " + std::to_string(line_no) + " negative velocity");
    if (s.lane_id < 1) throw DataError(recording + ": line " + std::to_string(line_no) + " lane id below 1");
    auto& traj = agents[s.agent_id];
    traj.agent_id = s.agent_id;
    if (!traj.states.empty()) {
      const int prev = traj.states.back().frame;
      if (s.frame == prev) {
        throw DataError(recording + ": duplicate row for agent " + std::to_string(s.agent_id) + " frame " +
                        std::to_string(s.frame));
      }
      if (s.frame < prev) {
        throw DataError(recording + ": non-monotone frames for agent " + std::to_string(s.agent_id) + " (" +
                        std::to_string(prev) + " then " + std::to_string(s.frame) + ")");
      }
    }
    traj.states.push_back(s);
  }
  TrajectoryTable table;
  table.recording = recording;
  table.frame_dt = schema.frame_dt;
  for (auto& [id, traj] : agents) table.agents.push_back(std::move(traj));
  return table;
}

TrajectoryTable load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, schema, path);
}

void write_csv(const std::vector<TrajectoryTable>& tables, std::ostream& out) {
  const double dt = tables.empty() ? 0.1 : tables.front().frame_dt;
  out << "# units=meters\n# frame_dt=" << dt << "\n";
  out << "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,Lane_ID,v_Class\n";
  out << std::setprecision(17);
  for (const auto& table : tables) {
    if (table.frame_dt != dt) throw DataError("write_csv: tables disagree on frame_dt");
    for (const auto& traj : table.agents)
      for (const auto& s : traj.states)
        out << s.agent_id << ',' << s.frame << ',' << s.x << ',' << s.y << ',' << s.velocity << ','
            << s.acceleration << ',' << s.lane_id << ',' << class_to_code(s.vehicle_class) << '\n';
  }
}

void write_csv(const TrajectoryTable& table, std::ostream& out) { write_csv(std::vector<TrajectoryTable>{table}, out); }

// ---------------------------------------------------------------------------
// Grid

std::array<double, 2> GridSpec::cell_offset(std::size_t cell) const {
  const double slot = static_cast<double>(cell / lanes) - static_cast<double>(center_slot());
  const double lane = static_cast<double>(cell % lanes) - static_cast<double>(center_lane());
  return {lane * lane_width, slot * slot_length};
}

GridAssignment build_neighbor_grid(std::span<const AgentState> frame_states, const AgentState& target,
                                   const GridSpec& grid) {
  const std::size_t cells = grid.cells();
  GridAssignment out{std::vector<int>(cells, -1), std::vector<double>(cells, 0.0),
                     std::vector<std::size_t>(cells, 0)};
  const long half_slots = static_cast<long>(grid.center_slot());
  const long half_lanes = static_cast<long>(grid.center_lane());
  for (std::size_t i = 0; i < frame_states.size(); ++i) {
    const AgentState& s = frame_states[i];
    if (s.agent_id == target.agent_id) continue;
    const long lane_off = s.lane_id - target.lane_id;
    if (lane_off < -half_lanes || lane_off > static_cast<long>(grid.lanes) - 1 - half_lanes) continue;
    const double dy = s.y - target.y;
    const long slot_off = std::lround(dy / grid.slot_length);
    if (slot_off < -half_slots || slot_off > static_cast<long>(grid.slots) - 1 - half_slots) continue;
    const std::size_t cell =
        static_cast<std::size_t>(slot_off + half_slots) * grid.lanes + static_cast<std::size_t>(lane_off + half_lanes);
    if (cell == grid.center_cell()) continue;
    const double dist = std::hypot(s.x - target.x, dy);
    const bool take = out.agent[cell] < 0 || dist < out.distance[cell] ||
                      (dist == out.distance[cell] && s.agent_id < out.agent[cell]);
    if (take) {
      out.agent[cell] = s.agent_id;
      out.distance[cell] = dist;
      out.state[cell] = i;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labels

void label_maneuvers(Trajectory& trajectory, std::size_t horizon_frames) {
  auto& st = trajectory.states;
  const std::size_t n = st.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lb = i >= horizon_frames ? i - horizon_frames : 0;
    const std::size_t ub = std::min(n - 1, i + horizon_frames);
    const int lane = st[i].lane_id;
    LateralManeuver lat = LateralManeuver::Keep;
    // Upcoming changes take precedence over completed ones.
    if (st[ub].lane_id < lane) lat = LateralManeuver::LeftChange;
    else if (st[ub].lane_id > lane) lat = LateralManeuver::RightChange;
    else if (st[lb].lane_id > lane) lat = LateralManeuver::LeftChange;
    else if (st[lb].lane_id < lane) lat = LateralManeuver::RightChange;
    st[i].lateral = lat;

    LongitudinalManeuver lon = LongitudinalManeuver::Normal;
    if (ub > i) {
      double acc = 0.0;
      for (std::size_t j = i + 1; j <= ub; ++j) acc += st[j].velocity;
      const double mean_future = acc / static_cast<double>(ub - i);
      if (mean_future < 0.8 * st[i].velocity) lon = LongitudinalManeuver::Braking;
    }
    st[i].longitudinal = lon;
  }
}

void label_maneuvers(TrajectoryTable& table, double horizon_seconds) {
  const auto h = static_cast<std::size_t>(std::lround(horizon_seconds / table.frame_dt));
  for (auto& traj : table.agents) label_maneuvers(traj, h);
}

// ---------------------------------------------------------------------------
// Samples

std::size_t SceneSample::occupied_neighbors() const {
  return static_cast<std::size_t>(std::count_if(neighbor_ids.begin(), neighbor_ids.end(), [](int id) { return id >= 0; }));
}

std::size_t window_count(std::size_t length, std::size_t T, std::size_t F, std::size_t stride) {
  if (stride == 0 || length < T + F) return 0;
  return (length - (T + F)) / stride + 1;
}

namespace {

void fill_state(double* out, const AgentState& s, double ox, double oy, int lane_ref) {
  out[kFeatX] = s.x - ox;
  out[kFeatY] = s.y - oy;
  out[kFeatVelocity] = s.velocity;
  out[kFeatAcceleration] = s.acceleration;
  out[kFeatLane] = static_cast<double>(s.lane_id - lane_ref);
  out[kFeatCar] = s.vehicle_class == VehicleClass::Car ? 1.0 : 0.0;
  out[kFeatTruck] = s.vehicle_class == VehicleClass::Truck ? 1.0 : 0.0;
  out[kFeatMotorcycle] = s.vehicle_class == VehicleClass::Motorcycle ? 1.0 : 0.0;
}

int state_mode(const AgentState& s) { return static_cast<int>(mode_index(s.lateral, s.longitudinal)); }

}  // namespace

std::vector<SceneSample> build_samples(const TrajectoryTable& table, const WindowConfig& cfg, BuildStats* stats) {
  if (!(cfg.dt > 0.0)) throw ContractError("build_samples: dt must be positive");
  if (cfg.T == 0 || cfg.F == 0 || cfg.stride == 0) throw ContractError("build_samples: T, F and stride must be positive");
  const double ratio = cfg.dt / table.frame_dt;
  const long k = std::lround(ratio);
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-6) {
    throw ContractError("build_samples: dt " + std::to_string(cfg.dt) + " is not a multiple of the frame period " +
                        std::to_string(table.frame_dt));
  }
  const std::size_t T = cfg.T, F = cfg.F, cells = cfg.grid.cells();

  std::unordered_map<int, std::vector<AgentState>> by_frame;
  for (const auto& traj : table.agents)
    for (const auto& s : traj.states) by_frame[s.frame].push_back(s);
  std::unordered_map<int, std::unordered_map<int, const AgentState*>> lookup;  // agent -> frame -> state
  for (const auto& traj : table.agents)
    for (const auto& s : traj.states) lookup[traj.agent_id][s.frame] = &s;

  BuildStats local;
  std::vector<SceneSample> out;
  for (const auto& traj : table.agents) {
    if (cfg.only_agent >= 0 && traj.agent_id != cfg.only_agent) continue;
    if (traj.states.empty()) continue;
    const int first = traj.states.front().frame, last = traj.states.back().frame;
    const std::size_t span = static_cast<std::size_t>((last - first) / k) + 1;
    if (span < T + F) {
      ++local.skipped_short;
      continue;
    }
    const auto& mine = lookup[traj.agent_id];
    for (long f0 = first; f0 + static_cast<long>(T + F - 1) * k <= last; f0 += static_cast<long>(cfg.stride) * k) {
      bool complete = true;
      for (std::size_t j = 0; j < T + F && complete; ++j) complete = mine.count(static_cast<int>(f0 + j * k)) > 0;
      if (!complete) {
        ++local.dropped_incomplete;
        continue;
      }
      auto frame_at = [&](std::size_t j) { return static_cast<int>(f0 + static_cast<long>(j) * k); };
      const AgentState& anchor = *mine.at(frame_at(T - 1));
      const double ox = anchor.x, oy = anchor.y;
      const int lane_ref = anchor.lane_id;

      SceneSample s;
      s.recording = table.recording;
      s.agent_id = traj.agent_id;
      s.start_frame = static_cast<int>(f0);
      s.T = T;
      s.F = F;
      s.dt = cfg.dt;
      s.grid = cfg.grid;
      s.lateral = anchor.lateral;
      s.longitudinal = anchor.longitudinal;
      s.target_history.assign(T * kStateDim, 0.0);
      s.target_speed_history.assign(T, 0.0);
      s.target_mode.assign(T, 0);
      s.neighbor_ids.assign(cells, -1);
      s.neighbor_histories.assign(cells * T * kStateDim, 0.0);
      s.neighbor_mask.assign(cells * T, 0);
      s.frame_cells.assign(T * cells * kStateDim, 0.0);
      s.frame_mask.assign(T * cells, 0);
      s.frame_mode.assign(T * cells, 0);
      s.future_truth.assign(F * 2, 0.0);

      for (std::size_t t = 0; t < T; ++t) {
        const AgentState& me = *mine.at(frame_at(t));
        fill_state(&s.target_history[t * kStateDim], me, ox, oy, lane_ref);
        s.target_speed_history[t] = me.velocity;
        s.target_mode[t] = state_mode(me);
        const auto& present = by_frame.at(me.frame);
        GridAssignment g = build_neighbor_grid(present, me, cfg.grid);
        for (std::size_t c = 0; c < cells; ++c) {
          if (g.agent[c] < 0) continue;
          const AgentState& nb = present[g.state[c]];
          fill_state(&s.frame_cells[(t * cells + c) * kStateDim], nb, ox, oy, lane_ref);
          s.frame_mask[t * cells + c] = 1;
          s.frame_mode[t * cells + c] = state_mode(nb);
        }
        if (t == T - 1) {
          for (std::size_t c = 0; c < cells; ++c) {
            if (g.agent[c] < 0) continue;
            s.neighbor_ids[c] = g.agent[c];
            const auto& theirs = lookup[g.agent[c]];
            for (std::size_t u = 0; u < T; ++u) {
              auto it = theirs.find(frame_at(u));
              if (it == theirs.end()) continue;
              fill_state(&s.neighbor_histories[(c * T + u) * kStateDim], *it->second, ox, oy, lane_ref);
              s.neighbor_mask[c * T + u] = 1;
            }
          }
        }
      }
      for (std::size_t j = 0; j < F; ++j) {
        const AgentState& fut = *mine.at(frame_at(T + j));
        s.future_truth[j * 2] = fut.x - ox;
        s.future_truth[j * 2 + 1] = fut.y - oy;
      }
      out.push_back(std::move(s));
      ++local.samples;
    }
  }
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

Scenario parse_scenario(const std::string& name) {
  if (name == "constant_velocity") return Scenario::ConstantVelocity;
  if (name == "lane_change") return Scenario::LaneChange;
  if (name == "car_following") return Scenario::CarFollowing;
  throw ConfigError("unknown scenario '" + name + "'");
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::ConstantVelocity: return "constant_velocity";
    case Scenario::LaneChange: return "lane_change";
    case Scenario::CarFollowing: return "car_following";
  }
  return "unknown";
}

namespace {

constexpr int kTargetLane = 2;
constexpr int kLaneCount = 3;

double lane_center(int lane, double width) { return (static_cast<double>(lane) - 0.5) * width; }

int lane_of(double x, double width) {
  return std::clamp(static_cast<int>(std::floor(x / width)) + 1, 1, kLaneCount);
}

Trajectory straight_line(int id, int lane, double y0, double v, std::size_t frames, double dt, double width,
                         VehicleClass cls) {
  Trajectory tr;
  tr.agent_id = id;
  for (std::size_t j = 0; j < frames; ++j) {
    AgentState s;
    s.agent_id = id;
    s.frame = static_cast<int>(j);
    s.x = lane_center(lane, width);
    s.y = y0 + v * static_cast<double>(j) * dt;
    s.velocity = v;
    s.acceleration = 0.0;
    s.lane_id = lane;
    s.vehicle_class = cls;
    tr.states.push_back(s);
  }
  return tr;
}

// Distractors in random lanes, kept out of the target's own lane near it.
void add_distractors(TrajectoryTable& table, std::mt19937_64& rng, const SynthConfig& cfg, double target_v,
                     std::size_t frames, bool adjacent_only) {
  std::uniform_int_distribution<std::size_t> count(0, cfg.max_distractors);
  std::uniform_int_distribution<int> lane_pick(1, kLaneCount);
  std::uniform_real_distribution<double> offset(-25.0, 25.0);
  std::uniform_real_distribution<double> dv(-2.0, 2.0);
  std::uniform_int_distribution<int> cls(0, 9);
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    int lane = lane_pick(rng);
    double off = offset(rng);
    if (lane == kTargetLane && (adjacent_only || std::abs(off) < 8.0)) lane = (i % 2 == 0) ? 1 : 3;
    const double v = std::max(0.0, target_v + dv(rng));
    const int c = cls(rng);
    const VehicleClass vc = c == 0 ? VehicleClass::Truck : (c == 1 ? VehicleClass::Motorcycle : VehicleClass::Car);
    table.agents.push_back(straight_line(10 + static_cast<int>(i), lane, off, v, frames, cfg.dt, cfg.lane_width, vc));
  }
}

struct IdmParams {
  double desired_speed = 33.0;
  double time_headway = 1.0;
  double min_gap = 2.0;
  double max_accel = 1.5;
  double comfort_decel = 2.0;
  double length = 5.0;
};

double idm_accel(const IdmParams& p, double v, double gap, double dv) {
  const double s_star = p.min_gap + std::max(0.0, v * p.time_headway + v * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
  const double free = std::pow(v / p.desired_speed, 4.0);
  return p.max_accel * (1.0 - free - (s_star / gap) * (s_star / gap));
}

SynthScene car_following_scene(std::mt19937_64& rng, const SynthConfig& cfg, std::size_t frames) {
  std::uniform_real_distribution<double> base(8.0, 14.0), amp(1.0, 3.0), period(6.0, 12.0),
      phase(0.0, 2.0 * M_PI);
  const double vbar = base(rng), A = amp(rng), omega = 2.0 * M_PI / period(rng), phi = phase(rng);
  auto leader_speed = [&](double t) { return std::max(0.0, vbar + A * std::sin(omega * t + phi)); };
  auto leader_accel = [&](double t) { return A * omega * std::cos(omega * t + phi); };

  IdmParams idm;
  const double h = 0.01;
  const int sub = static_cast<int>(std::lround(cfg.dt / h));
  const double preroll = 20.0;
  double t = -preroll;
  double vl = leader_speed(t), vf = vl;
  const double s_eq = (idm.min_gap + vf * idm.time_headway) / std::sqrt(std::max(1e-3, 1.0 - std::pow(vf / idm.desired_speed, 4.0)));
  double yl = 0.0, yf = -(s_eq + idm.length);
  const int pre_steps = static_cast<int>(std::lround(preroll / h));
  auto advance = [&]() {
    const double af = idm_accel(idm, vf, std::max(0.1, yl - yf - idm.length), vf - vl);
    const double vl_next = leader_speed(t + h);
    yl += 0.5 * (vl + vl_next) * h;
    const double vf_next = std::max(0.0, vf + af * h);
    yf += 0.5 * (vf + vf_next) * h;
    vl = vl_next;
    vf = vf_next;
    t += h;
  };
  for (int i = 0; i < pre_steps; ++i) advance();

  SynthScene scene;
  scene.target_id = 1;
  Trajectory follower, leader;
  follower.agent_id = 1;
  leader.agent_id = 2;
  const double x = lane_center(kTargetLane, cfg.lane_width);
  const double y_shift = -yf;  // follower starts at y = 0
  for (std::size_t j = 0; j < frames; ++j) {
    if (j > 0)
      for (int i = 0; i < sub; ++i) advance();
    AgentState f;
    f.agent_id = 1;
    f.frame = static_cast<int>(j);
    f.x = x;
    f.y = yf + y_shift;
    f.velocity = vf;
    f.acceleration = idm_accel(idm, vf, std::max(0.1, yl - yf - idm.length), vf - vl);
    f.lane_id = kTargetLane;
    follower.states.push_back(f);
    AgentState l = f;
    l.agent_id = 2;
    l.y = yl + y_shift;
    l.velocity = vl;
    l.acceleration = leader_accel(t);
    leader.states.push_back(l);
  }
  scene.table.agents.push_back(std::move(follower));
  scene.table.agents.push_back(std::move(leader));
  add_distractors(scene.table, rng, cfg, vbar, frames, true);
  return scene;
}

SynthScene lane_change_scene(std::mt19937_64& rng, const SynthConfig& cfg, std::size_t frames) {
  std::uniform_real_distribution<double> speed(cfg.speed_min, cfg.speed_max);
  const double duration = static_cast<double>(frames - 1) * cfg.dt;
  std::uniform_real_distribution<double> start(0.0, std::max(0.0, duration - cfg.lane_change_duration));
  std::bernoulli_distribution left(0.5);
  const double v = speed(rng), t0 = start(rng);
  const double dir = left(rng) ? -1.0 : 1.0;
  const double x0 = lane_center(kTargetLane, cfg.lane_width);
  const double D = cfg.lane_change_duration;

  SynthScene scene;
  scene.target_id = 1;
  Trajectory tr;
  tr.agent_id = 1;
  for (std::size_t j = 0; j < frames; ++j) {
    const double t = static_cast<double>(j) * cfg.dt;
    const double u = std::clamp((t - t0) / D, 0.0, 1.0);
    AgentState s;
    s.agent_id = 1;
    s.frame = static_cast<int>(j);
    s.x = x0 + dir * cfg.lane_width * 0.5 * (1.0 - std::cos(M_PI * u));
    s.y = v * t;
    s.velocity = v;
    s.acceleration = 0.0;
    s.lane_id = lane_of(s.x, cfg.lane_width);
    tr.states.push_back(s);
  }
  scene.table.agents.push_back(std::move(tr));
  add_distractors(scene.table, rng, cfg, v, frames, false);
  return scene;
}

SynthScene constant_velocity_scene(std::mt19937_64& rng, const SynthConfig& cfg, std::size_t frames) {
  std::uniform_real_distribution<double> speed(cfg.speed_min, cfg.speed_max);
  const double v = speed(rng);
  SynthScene scene;
  scene.target_id = 1;
  scene.table.agents.push_back(straight_line(1, kTargetLane, 0.0, v, frames, cfg.dt, cfg.lane_width, VehicleClass::Car));
  add_distractors(scene.table, rng, cfg, v, frames, false);
  return scene;
}

}  // namespace

std::vector<SynthScene> synth_scenes(Scenario scenario, std::size_t n, std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.speed_min < 0.0 || cfg.speed_max < cfg.speed_min) throw ConfigError("synth: bad speed range");
  std::mt19937_64 rng(seed);
  const std::size_t frames = cfg.T + cfg.F;
  std::vector<SynthScene> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SynthScene scene;
    switch (scenario) {
      case Scenario::ConstantVelocity: scene = constant_velocity_scene(rng, cfg, frames); break;
      case Scenario::LaneChange: scene = lane_change_scene(rng, cfg, frames); break;
      case Scenario::CarFollowing: scene = car_following_scene(rng, cfg, frames); break;
    }
    scene.table.recording = "synth-" + scenario_name(scenario) + "-" + std::to_string(i);
    scene.table.frame_dt = cfg.dt;
    std::sort(scene.table.agents.begin(), scene.table.agents.end(),
              [](const Trajectory& a, const Trajectory& b) { return a.agent_id < b.agent_id; });
    label_maneuvers(scene.table, 2.0);
    out.push_back(std::move(scene));
  }
  return out;
}

std::vector<SceneSample> synth_generate(Scenario scenario, std::size_t n, std::uint64_t seed, const SynthConfig& cfg) {
  WindowConfig wc;
  wc.T = cfg.T;
  wc.F = cfg.F;
  wc.dt = cfg.dt;
  wc.stride = 1;
  wc.grid = cfg.grid;
  std::vector<SceneSample> out;
  for (auto& scene : synth_scenes(scenario, n, seed, cfg)) {
    wc.only_agent = scene.target_id;
    auto samples = build_samples(scene.table, wc);
    for (auto& s : samples) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

void NormalizationStats::apply(std::span<double> state) const {
  for (std::size_t f = 0; f < kStateDim; ++f) state[f] = (state[f] - mean[f]) / scale[f];
}

void NormalizationStats::invert(std::span<double> state) const {
  for (std::size_t f = 0; f < kStateDim; ++f) state[f] = state[f] * scale[f] + mean[f];
}

NormalizationStats compute_stats(std::span<const SceneSample> samples) {
  std::array<double, kStateDim> sum{}, sq{};
  std::array<double, 2> future_sq{};
  double count = 0.0, future_count = 0.0;
  auto visit = [&](const double* st) {
    for (std::size_t f = 0; f < kStateDim; ++f) {
      sum[f] += st[f];
      sq[f] += st[f] * st[f];
    }
    count += 1.0;
  };
  for (const auto& s : samples) {
    for (std::size_t t = 0; t < s.T; ++t) visit(&s.target_history[t * kStateDim]);
    for (std::size_t c = 0; c < s.cells(); ++c)
      for (std::size_t t = 0; t < s.T; ++t)
        if (s.neighbor_mask[c * s.T + t]) visit(&s.neighbor_histories[(c * s.T + t) * kStateDim]);
    for (std::size_t f = 0; f < s.F; ++f) {
      future_sq[0] += s.future_truth[2 * f] * s.future_truth[2 * f];
      future_sq[1] += s.future_truth[2 * f + 1] * s.future_truth[2 * f + 1];
      future_count += 1.0;
    }
  }
  NormalizationStats stats;
  if (future_count > 0.0)
    for (std::size_t a = 0; a < 2; ++a) stats.future_scale[a] = std::max(1.0, std::sqrt(future_sq[a] / future_count));
  if (count == 0.0) return stats;
  for (std::size_t f = 0; f < kStateDim; ++f) {
    const double mu = sum[f] / count;
    const double var = std::max(0.0, sq[f] / count - mu * mu);
    switch (f) {
      case kFeatX:
      case kFeatY:
        stats.mean[f] = 0.0;
        stats.scale[f] = std::max(1.0, std::sqrt(sq[f] / count));
        break;
      case kFeatVelocity:
      case kFeatAcceleration:
        stats.mean[f] = mu;
        stats.scale[f] = std::max(1e-3, std::sqrt(var));
        break;
      default:  // lane offset and class indicators stay as-is
        break;
    }
  }
  return stats;
}

namespace {

template <class Fn>
void for_each_state(SceneSample& s, Fn fn) {
  const std::size_t cells = s.cells();
  for (std::size_t t = 0; t < s.T; ++t) fn(std::span<double>(&s.target_history[t * kStateDim], kStateDim));
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t t = 0; t < s.T; ++t)
      if (s.neighbor_mask[c * s.T + t]) fn(std::span<double>(&s.neighbor_histories[(c * s.T + t) * kStateDim], kStateDim));
  for (std::size_t t = 0; t < s.T; ++t)
    for (std::size_t c = 0; c < cells; ++c)
      if (s.frame_mask[t * cells + c]) fn(std::span<double>(&s.frame_cells[(t * cells + c) * kStateDim], kStateDim));
}

}  // namespace

void normalize_sample(SceneSample& sample, const NormalizationStats& stats) {
  for_each_state(sample, [&](std::span<double> st) { stats.apply(st); });
}

void denormalize_sample(SceneSample& sample, const NormalizationStats& stats) {
  for_each_state(sample, [&](std::span<double> st) { stats.invert(st); });
}

DatasetSplit normalize(DatasetSplit split) {
  split.stats = compute_stats(split.train);
  for (auto* part : {&split.train, &split.val, &split.test})
    for (auto& s : *part) normalize_sample(s, split.stats);
  return split;
}

DatasetSplit denormalize(DatasetSplit split) {
  for (auto* part : {&split.train, &split.val, &split.test})
    for (auto& s : *part) denormalize_sample(s, split.stats);
  return split;
}

DatasetSplit split_dataset(std::vector<SceneSample> samples, double train_fraction, double val_fraction,
                           std::uint64_t seed) {
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[{samples[i].recording, samples[i].agent_id}].push_back(i);
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [key, idx] : groups) order.push_back(&idx);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  const double total = static_cast<double>(samples.size());
  for (const auto* group : order) {
    const double filled_train = static_cast<double>(split.train.size());
    const double filled_val = static_cast<double>(split.val.size());
    auto* dest = &split.test;
    if (filled_train < train_fraction * total) dest = &split.train;
    else if (filled_val < val_fraction * total) dest = &split.val;
    for (auto i : *group) dest->push_back(std::move(samples[i]));
  }
  split.stats = compute_stats(split.train);
  return split;
}

}  // namespace gava
