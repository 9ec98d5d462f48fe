#pragma once

// Relative-dynamics grid tensor and its convolution + recurrence encoder.

#include <random>
#include <vector>

#include "gava/nn.hpp"
#include "gava/scene.hpp"

namespace gava {

inline constexpr std::size_t kInteractionChannels = 3;  // Δv, Δa, maneuver match

/// T × 3 × slots × lanes, row-major. Channel 0 is neighbor minus target speed,
/// channel 1 neighbor minus target acceleration, channel 2 is 1 when the
/// neighbor's joint maneuver equals the target's. Empty cells are zero.
std::vector<double> build_interaction_tensor(const SceneSample& sample);

struct InteractionShape {
  std::size_t T = 15;
  std::size_t slots = 13;
  std::size_t lanes = 3;
  std::size_t channels = 16;
  std::size_t hidden = 8;
  double dropout = 0.1;
  double elu_alpha = 1.0;
  bool norm_after_elu = true;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
};

/// conv1×1 (3→C) → ELU → BN → conv3×3 (C→C) → ELU → dropout, shared over
/// frames; a 1×1 reduction to one value per cell, then a GRU per cell over
/// time and a linear readout. Produces H_conv ∈ R^{T × cells}.
class InteractionEncoder {
 public:
  InteractionEncoder() = default;
  InteractionEncoder(ParamStore& store, const std::string& name, const InteractionShape& shape);

  /// d is [T × 3 × slots × lanes].
  Tensor operator()(const Tensor& d, bool training, std::mt19937_64& rng);
  /// Per-frame feature maps before the reduction, [T × C × slots × lanes].
  Tensor feature_maps(const Tensor& d, bool training, std::mt19937_64& rng);

  Tensor expand_kernel, expand_bias;
  Tensor mix_kernel, mix_bias;
  Tensor reduce_kernel, reduce_bias;
  BatchNorm2d norm;
  GRUCell gru;
  Linear readout;

 private:
  InteractionShape shape_;
};

}  // namespace gava
