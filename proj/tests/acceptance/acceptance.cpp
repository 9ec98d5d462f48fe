// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance <path-to-gava-cli> [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gava/checkpoint.hpp"
#include "gava/gradcheck_suite.hpp"
#include "gava/train.hpp"
#include "../oracles.hpp"

using namespace gava;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o << std::setprecision(digits) << v;
  return o.str();
}

std::string cli_path;

// 1 ------------------------------------------------------------------------
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  auto cases = run_op_gradchecks(1e-4, 1);
  auto layers = run_layer_gradchecks(1e-4, 1);
  cases.insert(cases.end(), layers.begin(), layers.end());
  cases.push_back(run_model_gradcheck(1e-4, 1));
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& c : cases) {
    failed += !c.report.passed;
    if (c.report.max_rel_error >= worst) worst = c.report.max_rel_error, worst_name = c.name;
  }
  return {failed == 0 && secs < 120.0,
          std::to_string(cases.size()) + " checks, " + std::to_string(failed) + " failed, max rel " + fmt(worst) +
              " (" + worst_name + ") < 1e-4, h=1e-5, " + fmt(secs, 3) + " s < 120 s"};
}

// 2 ------------------------------------------------------------------------
Outcome sector_semantics() {
  VisionConfig cfg;
  bool ok = true;
  const auto slow = sector_for_speed(29.99 / 3.6, cfg), fast = sector_for_speed(90.0 / 3.6, cfg);
  ok &= slow.radius == 30.0 && slow.half_angle * 2.0 == 90.0;
  ok &= fast.radius == 90.0 && fast.half_angle * 2.0 == 45.0;
  bool monotone = true;
  const double band_speeds[] = {10.0, 45.0, 75.0, 120.0};
  for (int b = 1; b < 4; ++b) {
    const auto lo = sector_for_speed(band_speeds[b - 1] / 3.6, cfg), hi = sector_for_speed(band_speeds[b] / 3.6, cfg);
    monotone &= hi.radius > lo.radius && hi.half_angle < lo.half_angle;
  }
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> speed(0.0, 45.0), off(-110.0, 110.0);
  std::size_t disagreements = 0;
  const std::size_t trials = 10000;
  for (std::size_t i = 0; i < trials; ++i) {
    const double v = speed(rng), dx = off(rng), dy = off(rng);
    auto sample = oracle::straight_sample(v, std::abs(dx), std::abs(dy));
    const std::size_t lane = dx < 0 ? 0 : 2, slot = dy < 0 ? 0 : 2;
    const std::size_t cell = slot * 3 + lane;
    const auto V = build_visual_matrix(sample, cfg);
    const double expect = oracle::sector_weight(v, dx, dy);
    for (std::size_t t = 0; t < sample.T; ++t) disagreements += V[t * 9 + cell] != expect;
  }
  return {ok && monotone && disagreements == 0,
          std::string("bands ") + (ok ? "exact" : "WRONG") + ", monotone " + (monotone ? "yes" : "NO") + ", " +
              std::to_string(disagreements) + " disagreements on " + std::to_string(trials) + " triples (need 0)"};
}

// 3 ------------------------------------------------------------------------
Outcome attention_invariants() {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> pos(-35.0, 35.0);
  auto nodes = [&](std::size_t n, std::size_t w) {
    std::vector<double> v(n * w);
    for (auto& x : v) x = 2.0 * g(rng);
    return Tensor({n, w}, std::move(v));
  };
  auto offsets = [&](std::size_t n) {
    std::vector<std::array<double, 2>> o(n);
    for (auto& p : o) p = {pos(rng), pos(rng)};
    return o;
  };
  VisionConfig vcfg;
  ParamStore store(3);
  GatLayer gat(store, "gat", 3, 6, 0.2, false);

  double worst_row = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(i % 12);
    Tensor s = softmax(nodes(n, 1 + static_cast<std::size_t>(i % 7)));
    for (std::size_t r = 0; r < s.dim(0); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < s.dim(1); ++c) sum += s.at(r, c);
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
    Tensor alpha;
    gat(nodes(n, 3), build_edge_graph(offsets(n - 1), 5.0 + pos(rng) * pos(rng) / 50.0, vcfg), &alpha);
    for (std::size_t r = 0; r < n; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < n; ++c) sum += alpha.at(r, c);
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }

  double worst_perm = 0.0;
  const std::size_t n = 9;
  auto graph = build_edge_graph(offsets(n - 1), 12.0, vcfg);
  Tensor x = nodes(n, 3);
  Tensor y = gat(x, graph);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EdgeGraph pg = graph;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pg.nearby[i * n + j] = graph.nearby[perm[i] * n + perm[j]];
    Tensor py = gat(gather_rows(x, perm), pg);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < y.dim(1); ++k) worst_perm = std::max(worst_perm, std::abs(py.at(i, k) - y.at(perm[i], k)));
  }

  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto gr = build_edge_graph(offsets(7), 8.0, vcfg);
    Tensor xs = nodes(8, 3);
    Tensor lo, hi;
    gr.bias = 0.25;
    gat(xs, gr, &lo);
    gr.bias = 1.5;
    gat(xs, gr, &hi);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (gr.nearby[i] && hi[i] < lo[i]) ++violations;
      if (!gr.nearby[i] && hi[i] > lo[i] + 1e-15) ++violations;
    }
  }
  const bool pass = worst_row <= 1e-9 && worst_perm <= 1e-12 && violations == 0;
  return {pass, "max |row sum - 1| " + fmt(worst_row) + " <= 1e-9 (1000 softmax + 1000 GAT), relabeling max diff " +
                    fmt(worst_perm) + " <= 1e-12 (100 perms), bias monotonicity violations " +
                    std::to_string(violations) + " (100 graphs)"};
}

// 4 ------------------------------------------------------------------------
Outcome mixture_validity() {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> wide(0.0, 12.0);
  std::size_t bad = 0, checked = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> raw(25 * kModes * 5);
    for (auto& v : raw) v = wide(rng);
    Tensor p = gaussian_constrain(Tensor({25 * kModes, 5}, raw));
    for (std::size_t r = 0; r < p.dim(0); ++r, ++checked) {
      const double sx = p.at(r, 2), sy = p.at(r, 3), rho = p.at(r, 4);
      bad += !(sx >= kSigmaMin && sx <= kSigmaMax && sy >= kSigmaMin && sy <= kSigmaMax && std::abs(rho) <= kRhoLimit);
    }
  }
  DecoderShape shape;
  shape.T = 6;
  shape.F = 1;
  shape.cells = 9;
  shape.dim = 8;
  shape.heads = 2;
  shape.layers = 1;
  shape.dropout = 0.0;
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int m = 0; m < 10; ++m) {
    ParamStore store(100 + static_cast<std::uint64_t>(m));
    PriorityDecoder dec(store, "dec", shape);
    std::vector<double> z(9 * 8), h(6 * 8);
    for (auto& v : z) v = g(rng);
    for (auto& v : h) v = g(rng);
    auto out = dec(Tensor({9, 8}, z), std::vector<unsigned char>(9, 1), Tensor({6, 8}, h), false, rng);
    worst = std::max(worst, std::abs(oracle::mixture_mass(to_trajectory(out, 1), 1500) - 1.0));
  }
  return {bad == 0 && worst <= 1e-3, std::to_string(bad) + " of " + std::to_string(checked) +
                                         " constrained steps out of bounds, max |mass - 1| over 10 models " + fmt(worst) +
                                         " <= 1e-3"};
}

// 5 ------------------------------------------------------------------------
Outcome loss_oracle() {
  const std::size_t F = 25;
  std::mt19937_64 rng(55);
  std::normal_distribution<double> g(0.0, 10.0);
  double worst_nll = 0.0;
  for (std::size_t mode = 0; mode < kModes; ++mode) {
    std::vector<double> truth(2 * F), params(F * kModes * 5, 0.0);
    for (auto& v : truth) v = g(rng);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t m = 0; m < kModes; ++m) {
        double* r = params.data() + (f * kModes + m) * 5;
        r[0] = m == mode ? truth[2 * f] : g(rng);
        r[1] = m == mode ? truth[2 * f + 1] : g(rng);
        r[2] = r[3] = 1.0;
      }
    worst_nll = std::max(worst_nll, std::abs(nll_loss(Tensor({F * kModes, 5}, params), truth, mode).item() -
                                             std::log(2.0 * M_PI)));
  }
  Tensor lat = Tensor::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}}), lon = Tensor::matrix({{0.5, 0.5}});
  double worst_ce = 0.0;
  for (std::size_t mode = 0; mode < kModes; ++mode)
    worst_ce = std::max(worst_ce, std::abs(maneuver_loss(lat, lon, mode_lateral(mode), mode_longitudinal(mode)).item() -
                                           (std::log(3.0) + std::log(2.0))));
  return {worst_nll <= 1e-9 && worst_ce <= 1e-9,
          "|nll - ln 2pi| " + fmt(worst_nll) + " <= 1e-9, |ce - (ln 3 + ln 2)| " + fmt(worst_ce) + " <= 1e-9"};
}

// 6 ------------------------------------------------------------------------
TrainConfig overfit_config() {
  TrainConfig c = tiny_config();
  c.dim = 32;
  c.heads = 2;
  c.epochs = 500;
  c.batch_size = 2;
  c.learning_rate = 3e-3;
  c.lr_decay = 0.99;
  c.seed = 1;
  return c;
}

Outcome overfit_sanity() {
  const auto t0 = Clock::now();
  auto samples = synth_generate(Scenario::ConstantVelocity, 32, 7);
  TrainConfig c = overfit_config();
  GavaModel model(c);
  model.set_stats(compute_stats(samples));
  train(model, samples, {});
  const RmseTable t = rmse_eval(model, samples);
  const double secs = seconds_since(t0);
  return {t.rmse[0] < 0.10 && t.rmse[4] < 0.50 && secs < 600.0,
          "RMSE@1s " + fmt(t.rmse[0]) + " < 0.10 m, RMSE@5s " + fmt(t.rmse[4]) + " < 0.50 m after " +
              std::to_string(c.epochs) + " epochs, " + fmt(secs, 3) + " s < 600 s"};
}

// 7 ------------------------------------------------------------------------
Outcome interaction_signal() {
  const auto t0 = Clock::now();
  std::vector<double> full, no_iam, ratio;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto train_set = synth_generate(Scenario::CarFollowing, 512, 100 + seed);
    auto test_set = synth_generate(Scenario::CarFollowing, 128, 900 + seed);
    const auto stats = compute_stats(train_set);
    double r[2];
    for (int k = 0; k < 2; ++k) {
      TrainConfig c = tiny_config();
      c.epochs = 30;
      c.batch_size = 8;
      c.learning_rate = 3e-3;
      c.lr_decay = 0.97;
      c.seed = seed;
      c.variant = k == 0 ? Variant::Full : Variant::NoInteraction;
      GavaModel model(c);
      model.set_stats(stats);
      train(model, train_set, {});
      r[k] = rmse_eval(model, test_set).rmse[4];
    }
    full.push_back(r[0]);
    no_iam.push_back(r[1]);
    ratio.push_back(r[1] / r[0]);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mf = median(full), mn = median(no_iam);
  std::string per_seed;
  for (std::size_t i = 0; i < ratio.size(); ++i) per_seed += (i ? "," : "") + fmt(ratio[i], 3);
  return {mn >= 1.2 * mf, "median RMSE@5s GaVa(-IaM) " + fmt(mn) + " vs GaVa " + fmt(mf) + " (ratio " +
                              fmt(mn / mf, 3) + " >= 1.20; per-seed " + per_seed + "), " + fmt(seconds_since(t0), 3) +
                              " s"};
}

// 8 ------------------------------------------------------------------------
Outcome protocol_conformance() {
  TrainConfig c;
  const bool protocol = c.T == 15 && c.F == 25 && std::abs(c.dt - 0.2) < 1e-15;
  TrainConfig small = tiny_config();
  small.dim = 8;
  small.heads = 2;
  auto samples = synth_generate(Scenario::LaneChange, 12, 8);
  GavaModel model(small);
  model.set_stats(compute_stats(samples));
  const RmseTable table = rmse_eval(model, samples);
  std::vector<std::vector<double>> pred, truth;
  for (const auto& s : samples) {
    pred.push_back(point_prediction(model.predict(s)));
    truth.push_back(s.future_truth);
  }
  const auto expect = oracle::horizon_rmse(pred, truth, 5);
  const bool exact = table.rmse == expect;
  return {protocol && exact, "T=" + std::to_string(c.T) + " F=" + std::to_string(c.F) + " dt=" + fmt(c.dt) +
                                 ", bucketed RMSE " + (exact ? "identical to" : "DIFFERS from") +
                                 " brute-force recomputation over " + std::to_string(expect.size()) + " horizons"};
}

// 9 ------------------------------------------------------------------------
Outcome determinism_and_persistence() {
  auto samples = synth_generate(Scenario::CarFollowing, 16, 9);
  auto run = [&](GavaModel& model) {
    model.set_stats(compute_stats(samples));
    return train(model, samples, {});
  };
  TrainConfig c = tiny_config();
  c.dim = 8;
  c.heads = 2;
  c.dropout = 0.1;
  c.epochs = 4;
  c.seed = 5;
  GavaModel a(c), b(c);
  auto ta = run(a), tb = run(b);
  bool identical = ta.size() == tb.size();
  for (std::size_t i = 0; identical && i < ta.size(); ++i) identical = ta[i].train_loss == tb[i].train_loss;

  const std::string path = (fs::temp_directory_path() / "gava-acceptance.ckpt").string();
  const RmseTable before = rmse_eval(a, samples);
  save_checkpoint(a, path);
  auto loaded = load_checkpoint(path);
  const RmseTable after = rmse_eval(*loaded, samples);
  save_checkpoint(*loaded, path);
  const RmseTable again = rmse_eval(*load_checkpoint(path), samples);
  std::remove(path.c_str());
  double rel = 0.0;
  for (std::size_t k = 0; k < before.rmse.size(); ++k)
    rel = std::max(rel, std::abs(after.rmse[k] - before.rmse[k]) / before.rmse[k]);
  const bool stable = rel <= 1e-5 && again.rmse == after.rmse;
  return {identical && stable, std::string("loss traces ") + (identical ? "bit-identical" : "DIFFER") +
                                   ", save/load RMSE max rel change " + fmt(rel) +
                                   " <= 1e-5 (float32 storage), reload of stored values " +
                                   (again.rmse == after.rmse ? "exact" : "NOT exact")};
}

// 10 -----------------------------------------------------------------------
Outcome ablation_harness() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "gava-acceptance-ablate";
  fs::remove_all(root);
  const std::string data = (root / "data").string(), out = (root / "out").string();
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  int rc = sh(cli_path + " synth --scenario car_following --n 24 --seed 3 --out " + data);
  rc |= sh(cli_path + " synth --scenario lane_change --n 24 --seed 4 --out " + data);
  rc |= sh(cli_path + " ablate --data " + data + " --out " + out +
           " --model.dim 16 --model.heads 2 --model.layers 1 --model.conv_channels 4"
           " --model.interaction_hidden 4 --train.epochs 3 --train.batch_size 8 --train.learning_rate 3e-3");
  std::ifstream table(out + "/ablation.txt");
  std::string header, line;
  std::getline(table, header);
  std::set<std::string> labels;
  std::size_t rows = 0;
  bool numeric = true;
  while (std::getline(table, line)) {
    std::istringstream in(line);
    std::string label;
    in >> label;
    if (label.empty()) continue;
    labels.insert(label);
    std::size_t cols = 0;
    double v;
    while (in >> v) numeric &= std::isfinite(v) && v >= 0.0, ++cols;
    numeric &= cols == 5;
    ++rows;
  }
  const double secs = seconds_since(t0);
  fs::remove_all(root);
  const bool shaped = rows == 4 && labels == std::set<std::string>{"GaVa", "GaVa(-IaM)", "GaVa(-VaM)", "GaVa(+NVM)"} &&
                      header.find("1s") != std::string::npos && header.find("5s") != std::string::npos;
  return {rc == 0 && shaped && numeric && secs < 1800.0,
          "exit " + std::to_string(rc) + ", " + std::to_string(rows) + " variant rows x 5 horizons " +
              (shaped && numeric ? "ok" : "MALFORMED") + ", " + fmt(secs, 3) + " s < 1800 s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <gava-cli> [criterion...]\n";
    return 2;
  }
  cli_path = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"sector semantics", sector_semantics},
      {"attention and graph invariants", attention_invariants},
      {"mixture validity", mixture_validity},
      {"loss oracle", loss_oracle},
      {"overfit sanity", overfit_sanity},
      {"interaction signal", interaction_signal},
      {"protocol conformance", protocol_conformance},
      {"determinism and persistence", determinism_and_persistence},
      {"ablation harness", ablation_harness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
