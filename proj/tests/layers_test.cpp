#include <doctest.h>

#include <cmath>
#include <random>

#include "gava/context.hpp"
#include "gava/gradcheck_suite.hpp"
#include "gava/interaction.hpp"
#include "gava/nn.hpp"
#include "oracles.hpp"

using namespace gava;

namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor(std::move(shape), std::move(v));
}

void zero_all(ParamStore& store) {
  for (auto& p : store.params()) {
    Tensor t = p.value;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("recurrent cells with zero weights halve their state") {
  ParamStore store(1);
  GRUCell gru(store, "gru", 3, 4);
  LSTMCell lstm(store, "lstm", 3, 4);
  zero_all(store);
  std::mt19937_64 rng(2);
  Tensor x = randn({2, 3}, rng), h = randn({2, 4}, rng), c = randn({2, 4}, rng);
  Tensor h1 = gru(x, h);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h1[i] == doctest::Approx(0.5 * h[i]));
  auto s = lstm(x, {h, c});
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(s.c[i] == doctest::Approx(0.5 * c[i]));
    CHECK(s.h[i] == doctest::Approx(0.5 * std::tanh(0.5 * c[i])));
  }
}

TEST_CASE("attention over a single memory row returns its projected value") {
  ParamStore store(3);
  MultiHeadAttention mha(store, "mha", 8, 2);
  std::mt19937_64 rng(4);
  Tensor mem = randn({1, 8}, rng);
  Tensor a = mha(randn({3, 8}, rng), mem), b = mha(randn({3, 8}, rng), mem);
  Tensor expect = mha.o(mha.v(mem));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(a.at(r, k) == doctest::Approx(expect.at(0, k)).epsilon(1e-12));
      CHECK(b.at(r, k) == doctest::Approx(expect.at(0, k)).epsilon(1e-12));
    }
}

TEST_CASE("attention ignores masked memory rows") {
  ParamStore store(5);
  MultiHeadAttention mha(store, "mha", 8, 4);
  std::mt19937_64 rng(6);
  Tensor q = randn({2, 8}, rng), mem = randn({4, 8}, rng);
  std::vector<unsigned char> mask{1, 0, 1, 0};
  Tensor a = mha(q, mem, &mask);
  auto data = std::vector<double>(mem.data().begin(), mem.data().end());
  for (std::size_t k = 0; k < 8; ++k) data[8 + k] += 5.0, data[24 + k] -= 3.0;
  Tensor b = mha(q, Tensor({4, 8}, data), &mask);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
}

TEST_CASE("positional encoding alternates sine and cosine") {
  Tensor pe = positional_encoding(5, 6);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(3, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(pe.at(3, 2) == doctest::Approx(std::sin(3.0 * std::pow(10000.0, -2.0 / 6.0))));
  CHECK(pe.at(2, 5) == doctest::Approx(std::cos(2.0 * std::pow(10000.0, -4.0 / 6.0))));
}

TEST_CASE("parameter names are unique") {
  ParamStore store(1);
  store.add("w", {2, 2}, Init::Xavier);
  CHECK_THROWS_AS(store.add("w", {3}, Init::Zeros), ContractError);
  CHECK_THROWS_AS(store.add_buffer("w", {1}, 0.0), ContractError);
  CHECK(store.parameter_count() == 4);
}

TEST_CASE("batch norm running statistics move toward the batch statistics") {
  ParamStore store(1);
  BatchNorm2d bn(store, "bn", 2, 0.9, 1e-5);
  std::mt19937_64 rng(3);
  Tensor x = randn({4, 2, 3, 3}, rng, 2.0);
  for (auto& v : x.mutable_data()) v += 5.0;
  bn(x, true);
  CHECK(bn.running_mean[0] > 0.3);
  CHECK(bn.running_mean[0] < 0.7);
  Tensor y1 = bn(x, false), y2 = bn(x, false);
  CHECK(y1[7] == y2[7]);
}

TEST_CASE("every layer passes the finite-difference check") {
  for (const auto& c : run_layer_gradchecks(1e-4, 3)) {
    INFO(c.name << " worst " << c.report.worst << " rel " << c.report.max_rel_error);
    CHECK(c.report.passed);
  }
}

TEST_CASE("interaction tensor holds relative speed, acceleration and mode match") {
  auto s = oracle::straight_sample(10.0, 3.7, 4.57);
  s.target_history[1 * kStateDim + kFeatVelocity] = 10.0;
  s.target_history[1 * kStateDim + kFeatAcceleration] = 0.5;
  s.frame_mask[1 * 9 + 7] = 1;
  s.frame_cells[(1 * 9 + 7) * kStateDim + kFeatVelocity] = 12.5;
  s.frame_cells[(1 * 9 + 7) * kStateDim + kFeatAcceleration] = -1.0;
  s.frame_mode[1 * 9 + 7] = s.target_mode[1];
  s.frame_cells[(1 * 9 + 3) * kStateDim + kFeatVelocity] = 99.0;  // unoccupied, ignored
  auto d = build_interaction_tensor(s);
  REQUIRE(d.size() == 2 * 3 * 9);
  const double* f1 = d.data() + 27;
  CHECK(f1[7] == 2.5);
  CHECK(f1[9 + 7] == -1.5);
  CHECK(f1[18 + 7] == 1.0);
  CHECK(f1[3] == 0.0);
  for (std::size_t i = 0; i < 27; ++i) CHECK(d[i] == 0.0);
}

TEST_CASE("interaction encoder output depends only on the 3x3 neighborhood and the past") {
  InteractionShape shape;
  shape.T = 4;
  shape.slots = 6;
  shape.lanes = 3;
  shape.channels = 4;
  shape.hidden = 3;
  shape.dropout = 0.0;
  ParamStore store(7);
  InteractionEncoder enc(store, "ia", shape);
  std::mt19937_64 rng(8);
  Tensor d = randn({4, 3, 6, 3}, rng);
  Tensor base = enc(d, false, rng);
  REQUIRE(base.shape() == Shape{4, 18});
  const std::size_t t0 = 1, s0 = 2, l0 = 0;
  auto data = std::vector<double>(d.data().begin(), d.data().end());
  data[((t0 * 3 + 1) * 6 + s0) * 3 + l0] += 3.0;
  Tensor moved = enc(Tensor(d.shape(), data), false, rng);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 18; ++c) {
      const long ds = static_cast<long>(c / 3) - static_cast<long>(s0), dl = static_cast<long>(c % 3) - static_cast<long>(l0);
      const bool reachable = t >= t0 && std::abs(ds) <= 1 && std::abs(dl) <= 1;
      if (!reachable) CHECK(moved.at(t, c) == base.at(t, c));
      if (t == t0 && ds == 0 && dl == 0) CHECK(moved.at(t, c) != base.at(t, c));
    }
}

TEST_CASE("context encoder is invariant to neighbor order and needs no neighbors") {
  ParamStore store(9);
  ContextEncoder enc(store, "ctx", kStateDim, 8, 2, 1.0);
  std::mt19937_64 rng(10);
  Tensor target = randn({5, kStateDim}, rng);
  std::vector<Tensor> nbrs{randn({5, kStateDim}, rng), randn({5, kStateDim}, rng), randn({5, kStateDim}, rng)};
  Tensor a = enc(target, nbrs);
  std::vector<Tensor> swapped{nbrs[2], nbrs[0], nbrs[1]};
  Tensor b = enc(target, swapped);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  Tensor alone = enc(target, {});
  CHECK(alone.shape() == Shape{5, 8});
  TemporalAttention att(store, "att", 8, 2);
  Tensor z = att(randn({5, 8}, rng), Tensor());
  for (double v : z.data()) CHECK(v == 0.0);
  std::vector<Tensor> weights;
  att(randn({5, 8}, rng), randn({3, 8}, rng), &weights);
  REQUIRE(weights.size() == 2);
  for (std::size_t t = 0; t < 5; ++t) CHECK(weights[1].at(t, 0) + weights[1].at(t, 1) + weights[1].at(t, 2) == doctest::Approx(1.0));
}
