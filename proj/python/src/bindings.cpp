#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gava/checkpoint.hpp"
#include "gava/gradcheck_suite.hpp"
#include "gava/train.hpp"

namespace py = pybind11;
using namespace gava;

namespace {

py::dict trajectory_dict(const GaussianTrajectory& traj) {
  py::list modes;
  for (const auto& mode : traj.modes) {
    py::list steps;
    for (const auto& g : mode) steps.append(py::make_tuple(g.mu_x, g.mu_y, g.sigma_x, g.sigma_y, g.rho));
    modes.append(steps);
  }
  py::dict d;
  d["modes"] = modes;
  d["p_lateral"] = std::vector<double>(traj.maneuvers.p_lateral.begin(), traj.maneuvers.p_lateral.end());
  d["p_longitudinal"] =
      std::vector<double>(traj.maneuvers.p_longitudinal.begin(), traj.maneuvers.p_longitudinal.end());
  d["best_mode"] = best_mode(traj.maneuvers);
  d["point"] = point_prediction(traj);
  return d;
}

std::vector<double> rmse_of(GavaModel& model, const std::vector<SceneSample>& samples) {
  return rmse_eval(model, samples).rmse;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trajectory prediction with visual-sector masking and graph attention";

  auto base = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  (void)base;

  py::class_<TrainConfig>(m, "Config")
      .def(py::init<>())
      .def_static("tiny", &tiny_config, "Small model settings for quick runs")
      .def_static("parse", &TrainConfig::parse)
      .def_static("load", &TrainConfig::load)
      .def_static("keys", &TrainConfig::keys)
      .def("__getitem__", &TrainConfig::get)
      .def("__setitem__", &TrainConfig::set)
      .def("validate", &TrainConfig::validate)
      .def("serialize", &TrainConfig::serialize)
      .def("fingerprint", &TrainConfig::fingerprint)
      .def("__repr__", [](const TrainConfig& c) { return "<Config " + c.fingerprint() + ">"; });

  py::class_<SceneSample>(m, "Sample")
      .def_readonly("recording", &SceneSample::recording)
      .def_readonly("agent_id", &SceneSample::agent_id)
      .def_readonly("start_frame", &SceneSample::start_frame)
      .def_readonly("T", &SceneSample::T)
      .def_readonly("F", &SceneSample::F)
      .def_readonly("dt", &SceneSample::dt)
      .def_readonly("target_history", &SceneSample::target_history)
      .def_readonly("target_speed_history", &SceneSample::target_speed_history)
      .def_readonly("future_truth", &SceneSample::future_truth)
      .def_property_readonly("mode", &SceneSample::mode)
      .def_property_readonly("occupied_neighbors", &SceneSample::occupied_neighbors);

  m.def(
      "synth",
      [](const std::string& scenario, std::size_t n, std::uint64_t seed, const TrainConfig& config) {
        return synth_generate(parse_scenario(scenario), n, seed, synth_config(config));
      },
      py::arg("scenario"), py::arg("n"), py::arg("seed") = 1, py::arg("config") = TrainConfig{});
  m.def(
      "load_samples", [](const std::string& path, const TrainConfig& config) { return load_samples(path, config); },
      py::arg("path"), py::arg("config") = TrainConfig{});

  m.def(
      "sector_for_speed",
      [](double speed, const TrainConfig& config) {
        const auto s = sector_for_speed(speed, config.vision);
        return py::make_tuple(s.radius, 2.0 * s.half_angle);
      },
      py::arg("speed"), py::arg("config") = TrainConfig{}, "(radius in m, apex angle in degrees) for a speed in m/s");
  m.def(
      "visual_matrix",
      [](const SceneSample& s, const TrainConfig& config) { return build_visual_matrix(s, config.vision); },
      py::arg("sample"), py::arg("config") = TrainConfig{});
  m.def("gaussian_constrain", [](std::array<double, 5> raw) {
    const auto g = gaussian_constrain(std::span<const double, 5>(raw));
    return py::make_tuple(g.mu_x, g.mu_y, g.sigma_x, g.sigma_y, g.rho);
  });
  m.def("bivariate_log_density", [](std::array<double, 5> params, double x, double y) {
    return bivariate_log_density({params[0], params[1], params[2], params[3], params[4]}, x, y);
  });
  m.def("horizon_bucket", &horizon_bucket, py::arg("step"), py::arg("dt") = 0.2);
  m.def(
      "gradcheck",
      [](double tol, std::uint64_t seed, bool model) {
        auto cases = run_op_gradchecks(tol, seed);
        auto layers = run_layer_gradchecks(tol, seed);
        cases.insert(cases.end(), layers.begin(), layers.end());
        if (model) cases.push_back(run_model_gradcheck(tol, seed));
        py::list out;
        for (const auto& c : cases) out.append(py::make_tuple(c.name, c.report.passed, c.report.max_rel_error));
        return out;
      },
      py::arg("tol") = 1e-4, py::arg("seed") = 1, py::arg("model") = true);

  py::class_<GavaModel>(m, "Model")
      .def(py::init<const TrainConfig&>())
      .def_static(
          "load", [](const std::string& path) { return load_checkpoint(path); }, py::arg("path"))
      .def("save", [](const GavaModel& model, const std::string& path) { save_checkpoint(model, path); })
      .def_property_readonly("config", &GavaModel::config)
      .def_property_readonly("parameter_count", [](const GavaModel& model) { return model.store().parameter_count(); })
      .def("fit_stats",
           [](GavaModel& model, const std::vector<SceneSample>& samples) { model.set_stats(compute_stats(samples)); })
      .def(
          "train",
          [](GavaModel& model, const std::vector<SceneSample>& train_set, const std::vector<SceneSample>& val_set) {
            std::vector<double> losses;
            for (const auto& r : train(model, train_set, val_set)) losses.push_back(r.train_loss);
            return losses;
          },
          py::arg("train_set"), py::arg("val_set") = std::vector<SceneSample>{},
          "Trains for config['train.epochs'] epochs; returns the mean training loss per epoch")
      .def("predict", [](GavaModel& model, const SceneSample& s) { return trajectory_dict(model.predict(s)); })
      .def("rmse", &rmse_of, "Per-second RMSE in meters over the given samples")
      .def("loss", [](GavaModel& model, const std::vector<SceneSample>& s) { return evaluate_loss(model, s); });
}
