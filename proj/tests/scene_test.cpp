#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "gava/scene.hpp"

using namespace gava;

namespace {

Trajectory line(int id, int lane, double x, double y0, double v, int frames, double dt = 0.2) {
  Trajectory tr;
  tr.agent_id = id;
  for (int f = 0; f < frames; ++f) {
    AgentState s;
    s.agent_id = id;
    s.frame = f;
    s.x = x;
    s.y = y0 + v * dt * f;
    s.velocity = v;
    s.lane_id = lane;
    tr.states.push_back(s);
  }
  return tr;
}

WindowConfig windows(std::size_t T, std::size_t F, std::size_t stride = 1) {
  WindowConfig w;
  w.T = T;
  w.F = F;
  w.stride = stride;
  w.dt = 0.2;
  return w;
}

}  // namespace

TEST_CASE("window count matches enumeration of start frames") {
  for (std::size_t len = 0; len < 60; ++len)
    for (std::size_t stride : {1u, 2u, 3u, 7u}) {
      std::size_t brute = 0;
      for (std::size_t s = 0; s + 40 <= len; s += stride) ++brute;
      CHECK(window_count(len, 15, 25, stride) == brute);
    }
}

TEST_CASE("build_samples yields one window per start frame and target-relative positions") {
  TrajectoryTable table;
  table.frame_dt = 0.2;
  table.agents.push_back(line(1, 2, 5.55, 100.0, 10.0, 47));
  BuildStats stats;
  auto samples = build_samples(table, windows(15, 25, 2), &stats);
  CHECK(samples.size() == window_count(47, 15, 25, 2));
  CHECK(stats.samples == samples.size());
  const auto& s = samples.front();
  CHECK(s.target(14, kFeatX) == 0.0);
  CHECK(s.target(14, kFeatY) == 0.0);
  CHECK(s.target(0, kFeatY) == doctest::Approx(-14 * 2.0));
  CHECK(s.future_truth[1] == doctest::Approx(2.0));
  CHECK(s.future_truth[2 * 24 + 1] == doctest::Approx(50.0));
}

TEST_CASE("build_samples resamples a finer frame period and drops gapped windows") {
  TrajectoryTable table;
  table.frame_dt = 0.1;
  auto tr = line(3, 2, 5.55, 0.0, 10.0, 200, 0.1);
  tr.states.erase(tr.states.begin() + 60);  // frame 60 missing
  table.agents.push_back(tr);
  BuildStats stats;
  auto samples = build_samples(table, windows(15, 25), &stats);
  std::size_t expected = 0, starts = 0;
  for (int f0 = 0; f0 + 78 <= 199; f0 += 2, ++starts) expected += !(f0 <= 60 && 60 <= f0 + 78);
  CHECK(expected == 30);
  CHECK(samples.size() == expected);
  CHECK(stats.dropped_incomplete + stats.samples == starts);
  TrajectoryTable short_table;
  short_table.frame_dt = 0.2;
  short_table.agents.push_back(line(4, 2, 0.0, 0.0, 5.0, 39));
  build_samples(short_table, windows(15, 25), &stats);
  CHECK(stats.skipped_short == 1);
}

TEST_CASE("grid placement: nearest wins, ties go to the lower id, center stays free") {
  GridSpec grid;
  AgentState target;
  target.agent_id = 1;
  target.x = 5.55;
  target.y = 100.0;
  target.lane_id = 2;
  auto at = [&](int id, int lane, double dy) {
    AgentState s;
    s.agent_id = id;
    s.lane_id = lane;
    s.x = target.x + (lane - 2) * 3.7;
    s.y = target.y + dy;
    return s;
  };
  std::vector<AgentState> frame{target, at(9, 2, 9.2), at(7, 2, 9.0), at(5, 1, -4.6), at(4, 1, -4.54),
                                at(8, 3, 0.5), at(6, 3, -0.5), at(2, 2, 1.0)};
  GridAssignment g = build_neighbor_grid(frame, target, grid);
  const std::size_t ahead2 = (6 + 2) * 3 + 1;
  CHECK(g.agent[ahead2] == 7);
  CHECK(g.agent[(6 - 1) * 3 + 0] == 4);
  CHECK(g.agent[6 * 3 + 2] == 6);  // equal distance: lower id
  CHECK(g.agent[grid.center_cell()] == -1);
  for (auto id : g.agent) CHECK(id != 1);
}

TEST_CASE("grid placement is translation invariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-25.0, 25.0), shift(-1e3, 1e3);
  for (int trial = 0; trial < 50; ++trial) {
    AgentState target;
    target.agent_id = 0;
    target.lane_id = 2;
    std::vector<AgentState> frame{target};
    for (int k = 1; k < 8; ++k) {
      AgentState s;
      s.agent_id = k;
      s.lane_id = 1 + k % 3;
      s.x = (s.lane_id - 2) * 3.7;
      s.y = u(rng);
      frame.push_back(s);
    }
    const double sx = shift(rng), sy = shift(rng);
    auto moved = frame;
    for (auto& s : moved) s.x += sx, s.y += sy;
    CHECK(build_neighbor_grid(frame, frame[0]).agent == build_neighbor_grid(moved, moved[0]).agent);
  }
}

TEST_CASE("maneuver labels: upcoming lane change and braking") {
  auto tr = line(1, 2, 5.55, 0.0, 20.0, 60, 0.1);
  for (int f = 30; f < 60; ++f) tr.states[f].lane_id = 1;
  for (int f = 40; f < 60; ++f) tr.states[f].velocity = 5.0;
  label_maneuvers(tr, 20);
  CHECK(tr.states[5].lateral == LateralManeuver::Keep);
  CHECK(tr.states[15].lateral == LateralManeuver::LeftChange);  // change within the next 20 frames
  CHECK(tr.states[45].lateral == LateralManeuver::LeftChange);  // completed change still labeled
  CHECK(tr.states[55].lateral == LateralManeuver::Keep);
  CHECK(tr.states[5].longitudinal == LongitudinalManeuver::Normal);
  CHECK(tr.states[35].longitudinal == LongitudinalManeuver::Braking);
}

TEST_CASE("mode index round trips") {
  std::set<std::size_t> seen;
  for (auto la : {LateralManeuver::LeftChange, LateralManeuver::Keep, LateralManeuver::RightChange})
    for (auto lo : {LongitudinalManeuver::Normal, LongitudinalManeuver::Braking}) {
      const std::size_t m = mode_index(la, lo);
      CHECK(mode_lateral(m) == la);
      CHECK(mode_longitudinal(m) == lo);
      seen.insert(m);
    }
  CHECK(seen.size() == kModes);
}

TEST_CASE("csv parsing converts feet and rejects malformed input") {
  const std::string text =
      "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,Lane_ID,v_Class\n"
      "1,1,10,100,50,1,2,2\n"
      "1,2,10,105,50,1,2,2\n"
      "2,1,22,80,40,0,3,3\n";
  std::istringstream in(text);
  auto table = parse_csv(in, CsvSchema{}, "rec");
  REQUIRE(table.agents.size() == 2);
  CHECK(table.agents[0].states[1].y == doctest::Approx(105 * 0.3048));
  CHECK(table.agents[0].states[0].velocity == doctest::Approx(50 * 0.3048));
  CHECK(table.agents[1].states[0].vehicle_class == VehicleClass::Truck);

  std::istringstream missing("Vehicle_ID,Frame_ID,Local_X,v_Vel,v_Acc,Lane_ID,v_Class\n1,1,1,1,1,1,2\n");
  CHECK_THROWS_AS(parse_csv(missing, CsvSchema{}, "r"), SchemaError);
  std::istringstream dup(
      "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,Lane_ID,v_Class\n1,1,1,1,1,1,2,2\n1,1,1,2,1,1,2,2\n");
  CHECK_THROWS_AS(parse_csv(dup, CsvSchema{}, "r"), DataError);
  std::istringstream bad(
      "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,Lane_ID,v_Class\n1,1,abc,1,1,1,2,2\n");
  CHECK_THROWS_AS(parse_csv(bad, CsvSchema{}, "r"), DataError);
}

TEST_CASE("csv written in meters re-ingests unchanged") {
  auto scenes = synth_scenes(Scenario::CarFollowing, 2, 4);
  std::ostringstream out;
  write_csv(scenes[0].table, out);
  std::istringstream in(out.str());
  auto back = parse_csv(in, CsvSchema{}, scenes[0].table.recording);
  CHECK(back.frame_dt == doctest::Approx(scenes[0].table.frame_dt));
  REQUIRE(back.agents.size() == scenes[0].table.agents.size());
  for (std::size_t a = 0; a < back.agents.size(); ++a)
    for (std::size_t i = 0; i < back.agents[a].states.size(); ++i) {
      CHECK(back.agents[a].states[i].y == doctest::Approx(scenes[0].table.agents[a].states[i].y).epsilon(1e-12));
      CHECK(back.agents[a].states[i].lane_id == scenes[0].table.agents[a].states[i].lane_id);
    }
}

TEST_CASE("synthetic scenes are deterministic per seed and follow their scenario") {
  auto a = synth_generate(Scenario::LaneChange, 6, 11);
  auto b = synth_generate(Scenario::LaneChange, 6, 11);
  auto c = synth_generate(Scenario::LaneChange, 6, 12);
  REQUIRE(a.size() == 6);
  CHECK(a[3].future_truth == b[3].future_truth);
  CHECK(a[3].future_truth != c[3].future_truth);

  auto cv = synth_generate(Scenario::ConstantVelocity, 4, 2);
  for (const auto& s : cv) {
    const double v = s.target_speed_history.back();
    for (std::size_t f = 0; f < s.F; ++f) {
      CHECK(s.future_truth[2 * f] == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(s.future_truth[2 * f + 1] == doctest::Approx(v * s.dt * (f + 1)).epsilon(1e-9));
    }
  }
  auto cf = synth_generate(Scenario::CarFollowing, 4, 2);
  for (const auto& s : cf) CHECK(s.occupied_neighbors() >= 1);
}

TEST_CASE("split keeps each agent in one part and normalization inverts") {
  auto samples = synth_generate(Scenario::CarFollowing, 20, 5);
  auto split = split_dataset(samples, 0.6, 0.2, 3);
  CHECK(split.train.size() + split.val.size() + split.test.size() == samples.size());
  std::set<std::pair<std::string, int>> train_keys;
  for (const auto& s : split.train) train_keys.insert({s.recording, s.agent_id});
  for (const auto& s : split.test) CHECK(train_keys.count({s.recording, s.agent_id}) == 0);

  const auto stats = compute_stats(split.train);
  CHECK(stats.mean[kFeatX] == 0.0);
  CHECK(stats.mean[kFeatY] == 0.0);
  auto s = split.train[0];
  const auto original = s.target_history;
  normalize_sample(s, stats);
  CHECK(s.target_history != original);
  denormalize_sample(s, stats);
  for (std::size_t i = 0; i < original.size(); ++i) CHECK(s.target_history[i] == doctest::Approx(original[i]).epsilon(1e-12));
}
