#include <doctest.h>

#include <cmath>
#include <random>

#include "gava/decoder.hpp"
#include "gava/train.hpp"
#include "oracles.hpp"

using namespace gava;

namespace {

GaussianTrajectory random_trajectory(std::size_t F, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  GaussianTrajectory traj;
  traj.F = F;
  for (auto& mode : traj.modes) {
    mode.resize(F);
    for (auto& p : mode) {
      const std::array<double, 5> raw{3 * g(rng), 3 * g(rng), 0.5 * g(rng), 0.5 * g(rng), g(rng)};
      p = gaussian_constrain(std::span<const double, 5>(raw));
    }
  }
  double sl = 0.0, so = 0.0;
  for (auto& p : traj.maneuvers.p_lateral) sl += (p = u(rng));
  for (auto& p : traj.maneuvers.p_longitudinal) so += (p = u(rng));
  for (auto& p : traj.maneuvers.p_lateral) p /= sl;
  for (auto& p : traj.maneuvers.p_longitudinal) p /= so;
  return traj;
}

}  // namespace

TEST_CASE("constrained parameters stay inside their bounds") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> wide(0.0, 40.0);
  for (int i = 0; i < 5000; ++i) {
    const std::array<double, 5> raw{wide(rng), wide(rng), wide(rng), wide(rng), wide(rng)};
    auto g = gaussian_constrain(std::span<const double, 5>(raw));
    CHECK(g.mu_x == raw[0]);
    CHECK(g.sigma_x >= kSigmaMin);
    CHECK(g.sigma_x <= kSigmaMax);
    CHECK(g.sigma_y >= kSigmaMin);
    CHECK(g.sigma_y <= kSigmaMax);
    CHECK(std::abs(g.rho) <= kRhoLimit);
  }
}

TEST_CASE("tensor and scalar constraint agree") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 5.0);
  std::vector<double> raw(40 * 5);
  for (auto& v : raw) v = g(rng);
  Tensor out = gaussian_constrain(Tensor({40, 5}, raw));
  for (std::size_t r = 0; r < 40; ++r) {
    auto s = gaussian_constrain(std::span<const double, 5>(raw.data() + 5 * r, 5));
    CHECK(out.at(r, 2) == doctest::Approx(s.sigma_x).epsilon(1e-14));
    CHECK(out.at(r, 3) == doctest::Approx(s.sigma_y).epsilon(1e-14));
    CHECK(out.at(r, 4) == doctest::Approx(s.rho).epsilon(1e-14));
  }
}

TEST_CASE("log density matches the textbook bivariate normal") {
  std::mt19937_64 rng(4);
  auto traj = random_trajectory(3, rng);
  std::normal_distribution<double> g(0.0, 2.0);
  for (const auto& mode : traj.modes)
    for (const auto& p : mode) {
      const double x = p.mu_x + g(rng) * p.sigma_x, y = p.mu_y + g(rng) * p.sigma_y;
      CHECK(bivariate_log_density(p, x, y) == doctest::Approx(std::log(oracle::bivariate_pdf(p, x, y))).epsilon(1e-11));
    }
}

TEST_CASE("mixture log density is the log of the weighted product sum") {
  std::mt19937_64 rng(5);
  auto traj = random_trajectory(2, rng);
  std::vector<double> truth{0.3, -0.2, 1.0, 0.5};
  double mix = 0.0;
  for (std::size_t m = 0; m < kModes; ++m) {
    double prod = traj.maneuvers.joint(m);
    for (std::size_t f = 0; f < 2; ++f) prod *= oracle::bivariate_pdf(traj.modes[m][f], truth[2 * f], truth[2 * f + 1]);
    mix += prod;
  }
  CHECK(mixture_log_density(traj, truth) == doctest::Approx(std::log(mix)).epsilon(1e-11));
}

TEST_CASE("single-step mixture integrates to one") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    auto traj = random_trajectory(1, rng);
    CHECK(oracle::mixture_mass(traj, 1200) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("best mode picks the largest joint probability with the fixed tie order") {
  ManeuverDistribution d;
  d.p_lateral = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  d.p_longitudinal = {0.5, 0.5};
  CHECK(best_mode(d) == mode_index(LateralManeuver::Keep, LongitudinalManeuver::Normal));
  d.p_lateral = {0.5, 0.0, 0.5};
  CHECK(best_mode(d) == mode_index(LateralManeuver::LeftChange, LongitudinalManeuver::Normal));
  d.p_longitudinal = {0.0, 1.0};
  CHECK(best_mode(d) == mode_index(LateralManeuver::LeftChange, LongitudinalManeuver::Braking));
  d.p_lateral = {0.1, 0.2, 0.7};
  CHECK(best_mode(d) == mode_index(LateralManeuver::RightChange, LongitudinalManeuver::Braking));
}

TEST_CASE("weighted point prediction is the probability-weighted mean") {
  std::mt19937_64 rng(7);
  auto traj = random_trajectory(2, rng);
  auto p = point_prediction(traj, true);
  double ex = 0.0;
  for (std::size_t m = 0; m < kModes; ++m) ex += traj.maneuvers.joint(m) * traj.modes[m][1].mu_x;
  CHECK(p[2] == doctest::Approx(ex).epsilon(1e-13));
  auto b = point_prediction(traj, false);
  CHECK(b[3] == traj.modes[best_mode(traj.maneuvers)][1].mu_y);
}

TEST_CASE("negative log-likelihood at the mean with unit scales is log 2 pi") {
  const std::size_t F = 4, mode = 3;
  std::vector<double> truth{1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.0, -7.0};
  std::vector<double> params(F * kModes * 5, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t m = 0; m < kModes; ++m) {
      double* r = params.data() + (f * kModes + m) * 5;
      r[0] = m == mode ? truth[2 * f] : 100.0;
      r[1] = m == mode ? truth[2 * f + 1] : 100.0;
      r[2] = r[3] = 1.0;
    }
  Tensor t({F * kModes, 5}, params);
  CHECK(std::abs(nll_loss(t, truth, mode).item() - std::log(2.0 * M_PI)) <= 1e-9);
  DecoderOutput out{t, Tensor::matrix({{0.2, 0.5, 0.3}}), Tensor::matrix({{0.4, 0.6}}), {}, {}};
  CHECK(std::abs(nll_loss(to_trajectory(out, F), truth, mode) - std::log(2.0 * M_PI)) <= 1e-9);
}

TEST_CASE("uniform maneuver heads give log 3 plus log 2") {
  Tensor lat = Tensor::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}}), lon = Tensor::matrix({{0.5, 0.5}});
  for (auto la : {LateralManeuver::LeftChange, LateralManeuver::Keep, LateralManeuver::RightChange})
    for (auto lo : {LongitudinalManeuver::Normal, LongitudinalManeuver::Braking}) {
      CHECK(std::abs(maneuver_loss(lat, lon, la, lo).item() - (std::log(3.0) + std::log(2.0))) <= 1e-9);
    }
  ManeuverDistribution d;
  d.p_lateral = {0.2, 0.7, 0.1};
  d.p_longitudinal = {0.9, 0.1};
  CHECK(maneuver_loss(d, LateralManeuver::Keep, LongitudinalManeuver::Braking) ==
        doctest::Approx(-std::log(0.7) - std::log(0.1)));
}

TEST_CASE("decoder output shapes and valid probabilities") {
  DecoderShape shape;
  shape.T = 6;
  shape.F = 4;
  shape.cells = 9;
  shape.dim = 8;
  shape.heads = 2;
  shape.layers = 1;
  shape.dropout = 0.0;
  ParamStore store(3);
  PriorityDecoder dec(store, "dec", shape);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> z(9 * 8), h(6 * 8);
  for (auto& v : z) v = g(rng);
  for (auto& v : h) v = g(rng);
  std::vector<unsigned char> mask(9, 1);
  mask[2] = 0;
  auto out = dec(Tensor({9, 8}, z), mask, Tensor({6, 8}, h), false, rng);
  CHECK(out.params.shape() == Shape{4 * kModes, 5});
  CHECK(out.context.shape() == Shape{6, 8});
  double s = 0.0;
  for (double p : out.p_lateral.data()) s += p;
  CHECK(s == doctest::Approx(1.0));
  // Masked slots do not influence the output.
  z[2 * 8 + 3] += 10.0;
  auto again = dec(Tensor({9, 8}, z), mask, Tensor({6, 8}, h), false, rng);
  for (std::size_t i = 0; i < out.params.size(); ++i) CHECK(again.params[i] == doctest::Approx(out.params[i]).epsilon(1e-13));
}
