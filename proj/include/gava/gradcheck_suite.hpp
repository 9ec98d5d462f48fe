#pragma once

// Finite-difference checks of every differentiable op, each layer, and the
// composed tiny model. Shared by the CLI `gradcheck` command and the tests.

#include <string>
#include <vector>

#include "gava/optim.hpp"

namespace gava {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

/// Each op is checked on three input shapes; layers and the model once.
std::vector<GradCheckCase> run_op_gradchecks(double tol = 1e-4, std::uint64_t seed = 1);
std::vector<GradCheckCase> run_layer_gradchecks(double tol = 1e-4, std::uint64_t seed = 1);
/// Full forward + loss of a model with dim 8, 2 heads, 1 layer, T = F = 5.
GradCheckCase run_model_gradcheck(double tol = 1e-4, std::uint64_t seed = 1);

}  // namespace gava
