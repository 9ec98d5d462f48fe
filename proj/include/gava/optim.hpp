#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gava/nn.hpp"
#include "gava/tensor.hpp"

namespace gava {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global L2 norm cap on the gradient; <= 0 disables clipping.
  double clip_norm = 0.0;
};

/// Adaptive-moment optimizer with bias correction. Parameters without an
/// accumulated gradient are treated as having zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);
  /// Applies one update from the gradients currently stored on the parameters.
  void step();
  void zero_grad();
  long steps_taken() const { return t_; }
  AdamConfig& config() { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // location of the largest relative error
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries whose
/// true gradient is ~0 from being judged on round-off alone.
inline constexpr double kGradCheckFloor = 1e-4;

/// Compares backward() against central finite differences of a pure scalar
/// function f at x. `x` must not be shared with anything f mutates.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double tol,
                           double h = 1e-5);

/// Same check over a set of parameter tensors that f closes over. When
/// `max_entries_per_tensor` is nonzero only that many evenly spaced entries of
/// each tensor are perturbed.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::vector<NamedTensor> params, double tol,
                                  double h = 1e-5, std::size_t max_entries_per_tensor = 0);

}  // namespace gava
