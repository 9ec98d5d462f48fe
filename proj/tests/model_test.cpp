#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "gava/checkpoint.hpp"
#include "gava/train.hpp"
#include "oracles.hpp"

using namespace gava;

namespace {

TrainConfig small_config(Variant v = Variant::Full) {
  TrainConfig c = tiny_config();
  c.dim = 8;
  c.heads = 2;
  c.variant = v;
  c.epochs = 2;
  c.batch_size = 4;
  return c;
}

std::vector<SceneSample> scenes(Scenario s, std::size_t n, std::uint64_t seed = 3) {
  return synth_generate(s, n, seed);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gava-test-" + name)).string();
}

}  // namespace

TEST_CASE("default protocol is three seconds of history and five of future at 5 Hz") {
  TrainConfig c;
  CHECK(c.T == 15);
  CHECK(c.F == 25);
  CHECK(c.dt == doctest::Approx(0.2));
  CHECK_NOTHROW(c.validate());
  c.F = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.protocol_override = true;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config text round trips and rejects unknown keys") {
  TrainConfig c = tiny_config();
  c.set("model.variant", "plus_nvm");
  c.set("vision.radii_m", "31, 51, 71, 91");
  c.set("train.learning_rate", "0.0025");
  TrainConfig back = TrainConfig::parse(c.serialize());
  CHECK(back.serialize() == c.serialize());
  CHECK(back.fingerprint() == c.fingerprint());
  CHECK(back.variant == Variant::PlusUnmasked);
  CHECK(back.vision.radii_m[2] == 71.0);
  CHECK_THROWS_AS(c.set("model.nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("train.epochs", "ten"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("model.dim 8\n"), ConfigError);
  TrainConfig parsed = TrainConfig::parse("# comment\nmodel.dim = 12  # trailing\nmodel.heads=3\n");
  CHECK(parsed.dim == 12);
  CHECK(parsed.heads == 3);
  for (const auto& key : TrainConfig::keys()) CHECK_NOTHROW(c.set(key, c.get(key)));
}

TEST_CASE("every variant produces a full set of constrained outputs") {
  auto samples = scenes(Scenario::CarFollowing, 2);
  for (Variant v : kAllVariants) {
    GavaModel model(small_config(v));
    model.set_stats(compute_stats(samples));
    ForwardTrace trace;
    auto out = model.forward(samples[0], false, &trace);
    CHECK(out.params.shape() == Shape{25 * kModes, 5});
    CHECK(trace.visual_feature.shape() == Shape{39, 8});
    CHECK(trace.h_conv.defined() == (v != Variant::NoInteraction));
    if (v == Variant::NoVisual)
      for (double w : trace.visual) CHECK(w == 1.0);
    auto traj = model.predict(samples[0]);
    for (const auto& mode : traj.modes)
      for (const auto& g : mode) CHECK(std::abs(g.rho) <= kRhoLimit);
  }
}

TEST_CASE("samples with the wrong protocol are data errors") {
  auto samples = scenes(Scenario::ConstantVelocity, 1);
  samples[0].T = 10;
  CHECK_THROWS_AS(check_sample(samples[0], small_config()), DataError);
}

TEST_CASE("training lowers the loss and is bit-reproducible") {
  auto samples = scenes(Scenario::CarFollowing, 8);
  auto run = [&] {
    TrainConfig c = small_config();
    c.epochs = 6;
    c.dropout = 0.1;
    GavaModel model(c);
    model.set_stats(compute_stats(samples));
    return train(model, samples, {});
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == 6);
  CHECK(a.back().train_loss < a.front().train_loss);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].train_loss == b[i].train_loss);
}

TEST_CASE("checkpoint round trip reproduces float32 parameters bit for bit") {
  auto samples = scenes(Scenario::LaneChange, 4);
  GavaModel model(small_config());
  model.set_stats(compute_stats(samples));
  train(model, samples, {});
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded->config().serialize() == model.config().serialize());
  const auto& pa = model.store().params();
  const auto& pb = loaded->store().params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].value.size(); ++j)
      CHECK(pb[i].value[j] == static_cast<double>(static_cast<float>(pa[i].value[j])));
  for (std::size_t k = 0; k < 2; ++k)
    CHECK(loaded->position_scale()[k] == static_cast<double>(static_cast<float>(model.position_scale()[k])));
  const std::string again = temp_path("roundtrip2.ckpt");
  save_checkpoint(*loaded, again);
  auto twice = load_checkpoint(again);
  CHECK(rmse_eval(*twice, samples).rmse == rmse_eval(*loaded, samples).rmse);
  std::remove(path.c_str());
  std::remove(again.c_str());
}

TEST_CASE("checkpoint loading validates names, shapes and fingerprint") {
  GavaModel small(small_config());
  std::stringstream buf;
  save_checkpoint(small, buf);
  TrainConfig other = small_config();
  other.dim = 16;
  GavaModel bigger(other);
  std::stringstream copy(buf.str());
  CHECK_THROWS_AS(load_parameters(bigger, copy, nullptr), DataError);
  TrainConfig tweaked = small_config();
  tweaked.learning_rate = 0.5;
  GavaModel same_shape(tweaked);
  std::stringstream copy2(buf.str()), warn;
  CHECK_FALSE(load_parameters(same_shape, copy2, &warn));
  CHECK(warn.str().find("fingerprint") != std::string::npos);
  std::stringstream garbage("not a checkpoint");
  CHECK_THROWS_AS(load_parameters(small, garbage, nullptr), DataError);
  std::string truncated = buf.str().substr(0, buf.str().size() - 16);
  std::stringstream cut(truncated);
  CHECK_THROWS_AS(load_parameters(small, cut, nullptr), DataError);
}

TEST_CASE("horizon buckets and RMSE match the brute-force recomputation") {
  for (std::size_t f = 0; f < 25; ++f) CHECK(horizon_bucket(f, 0.2) == oracle::bucket(f, 5));
  for (std::size_t f = 0; f < 50; ++f) CHECK(horizon_bucket(f, 0.1) == oracle::bucket(f, 10));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<std::vector<double>> pred(7, std::vector<double>(50)), truth(7, std::vector<double>(50));
  for (auto* set : {&pred, &truth})
    for (auto& v : *set)
      for (auto& x : v) x = g(rng);
  auto table = rmse_from_points(pred, truth, 0.2);
  auto expect = oracle::horizon_rmse(pred, truth, 5);
  CHECK(table.rmse == expect);
  CHECK(table.count == std::vector<std::size_t>(5, 35));
}

TEST_CASE("prediction records survive a text round trip") {
  auto samples = scenes(Scenario::ConstantVelocity, 3);
  GavaModel model(small_config());
  model.set_stats(compute_stats(samples));
  auto records = predict_all(model, samples);
  std::stringstream buf;
  write_predictions(records, buf);
  auto back = read_predictions(buf);
  REQUIRE(back.size() == records.size());
  CHECK(back[1].truth == records[1].truth);
  CHECK(back[1].history == records[1].history);
  CHECK(back[2].trajectory.modes[4][7].sigma_y == records[2].trajectory.modes[4][7].sigma_y);
  CHECK(back[2].trajectory.maneuvers.p_lateral == records[2].trajectory.maneuvers.p_lateral);
  CHECK(rmse_from_records(back, 0.2, false).rmse == rmse_eval(model, samples).rmse);
  std::stringstream plot;
  emit_plot_data(records, plot);
  CHECK(plot.str().size() > 100);
}

TEST_CASE("rmse table is formatted with one column per horizon second") {
  RmseTable t{{0.5, 1.25, 2.0, 3.5, 4.75}, {1, 1, 1, 1, 1}};
  auto text = format_rmse_table({{"GaVa", t}, {"GaVa(-IaM)", t}});
  CHECK(text.find("5s") != std::string::npos);
  CHECK(text.find("GaVa(-IaM)") != std::string::npos);
  CHECK(text.find("4.7500") != std::string::npos);
}

TEST_CASE("a diverging run stops with the last good checkpoint") {
  auto samples = scenes(Scenario::ConstantVelocity, 2);
  TrainConfig c = small_config();
  c.epochs = 3;
  GavaModel model(c);
  model.set_stats(compute_stats(samples));
  model.store().params()[0].value.node()->value[0] = std::numeric_limits<double>::infinity();
  const std::string path = temp_path("abort.ckpt");
  TrainOptions opts;
  opts.checkpoint_path = path;
  CHECK_THROWS_AS(train(model, samples, {}, opts), TrainingAborted);
  std::remove(path.c_str());
}
