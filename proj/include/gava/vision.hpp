#pragma once

// Speed-adaptive visual sector weighting and graph attention over the masked
// per-frame nodes.

#include <array>
#include <random>
#include <span>
#include <vector>

#include "gava/config.hpp"
#include "gava/nn.hpp"
#include "gava/scene.hpp"

namespace gava {

inline constexpr double kMpsToKmh = 3.6;

struct VisualSectorSpec {
  double radius = 30.0;      // meters
  double half_angle = 45.0;  // degrees, symmetric about the heading
  double central_weight = 1.0;
  double fringe_weight = 0.5;
  double peripheral_weight = 0.2;
};

/// Band lookup; speed in m/s. Throws ContractError for negative speed.
VisualSectorSpec sector_for_speed(double speed, const VisionConfig& config);

/// Weight of a point at (dx, dy) relative to a viewer facing `heading` (unit vector).
double visual_weight(const VisualSectorSpec& sector, std::array<double, 2> heading, double dx, double dy);

/// Unit heading of the target at history frame t from its finite-difference
/// displacement; +y when slower than config.heading_min_speed.
std::array<double, 2> target_heading(const SceneSample& sample, std::size_t t, const VisionConfig& config);

/// T × cells weights evaluated at slot centers.
std::vector<double> build_visual_matrix(const SceneSample& sample, const VisionConfig& config);

struct MaskedNodes {
  /// Per frame: node cells, the target's center cell first.
  std::vector<std::vector<std::size_t>> cells;
  /// Per frame: [nodes × feature] features.
  std::vector<Tensor> features;
};

/// Node features V ⊙ H_conv for the target cell and every occupied cell; with
/// `append_unmasked` each node also carries its raw H_conv value.
MaskedNodes apply_visual_mask(const Tensor& h_conv, std::span<const double> visual, const SceneSample& sample,
                              bool append_unmasked = false);

struct EdgeGraph {
  std::size_t nodes = 0;
  std::vector<unsigned char> adjacency;  // nodes × nodes, symmetric, self-loops set
  std::vector<unsigned char> nearby;     // edges whose endpoints both lie in the nearby circle
  double bias = 0.0;

  /// Additive score bias per edge (bias on nearby edges, 0 elsewhere).
  Tensor bias_matrix() const;
};

double safety_distance(double speed, const VisionConfig& config);

/// Fully connected graph over the target (node 0, at the origin) and the
/// given neighbor offsets.
EdgeGraph build_edge_graph(std::span<const std::array<double, 2>> neighbor_offsets, double target_speed,
                           const VisionConfig& config);

/// Single-head graph attention: score(i,j) = LeakyReLU(a_srcᵀWn_i + a_dstᵀWn_j) + bias(i,j),
/// normalized over the neighborhood of i, then ELU(Σ α(i,j) W n_j).
class GatLayer {
 public:
  GatLayer() = default;
  GatLayer(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, double slope,
           bool rowsum);
  /// alpha, when non-null, receives the [nodes × nodes] attention matrix.
  Tensor operator()(const Tensor& nodes, const EdgeGraph& graph, Tensor* alpha = nullptr) const;
  Linear project;
  Tensor attn_src, attn_dst;  // [out × 1]

 private:
  double slope_ = 0.2;
  bool rowsum_ = false;
};

/// gat → dropout → gat → dropout over each frame, then a slot-aligned readout.
class GatStack {
 public:
  GatStack() = default;
  GatStack(ParamStore& store, const std::string& name, std::size_t in, std::size_t dim, double slope, bool rowsum,
           double dropout);
  Tensor frame(const Tensor& nodes, const EdgeGraph& graph, bool training, std::mt19937_64& rng) const;
  GatLayer first, second;

 private:
  double dropout_ = 0.0;
};

/// Assembles Z ∈ R^{cells×dim}: each slot row is the time-mean of that slot's
/// node outputs; the center row is the time-mean of target output plus mean
/// neighbor output. Slots never occupied stay zero.
Tensor slot_readout(const std::vector<Tensor>& frame_outputs, const std::vector<std::vector<std::size_t>>& cells,
                    std::size_t total_cells, std::size_t center_cell);

/// Key mask for the encoder: slots that appear in `cells` at any frame.
std::vector<unsigned char> slot_mask(const std::vector<std::vector<std::size_t>>& cells, std::size_t total_cells);

}  // namespace gava
