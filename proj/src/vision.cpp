#include "gava/vision.hpp"

#include <algorithm>
#include <cmath>

namespace gava {

VisualSectorSpec sector_for_speed(double speed, const VisionConfig& config) {
  if (!(speed >= 0.0)) throw ContractError("sector_for_speed: speed must be >= 0, got " + std::to_string(speed));
  const double kmh = speed * kMpsToKmh;
  std::size_t band = 0;
  while (band < config.thresholds_kmh.size() && kmh >= config.thresholds_kmh[band]) ++band;
  VisualSectorSpec s;
  s.radius = config.radii_m.at(band);
  s.half_angle = config.apex_deg.at(band) / 2.0;
  s.fringe_weight = config.fringe_weight;
  s.peripheral_weight = config.peripheral_weight;
  return s;
}

double visual_weight(const VisualSectorSpec& sector, std::array<double, 2> heading, double dx, double dy) {
  const double range = std::hypot(dx, dy);
  if (range > sector.radius) return sector.peripheral_weight;
  double bearing = 0.0;
  if (range > 0.0) {
    const double cross = heading[0] * dy - heading[1] * dx;
    const double dot = heading[0] * dx + heading[1] * dy;
    bearing = std::abs(std::atan2(cross, dot)) * 180.0 / M_PI;
  }
  if (bearing <= sector.half_angle) return sector.central_weight;
  if (bearing <= 90.0) return sector.fringe_weight;
  return sector.peripheral_weight;
}

std::array<double, 2> target_heading(const SceneSample& sample, std::size_t t, const VisionConfig& config) {
  const std::array<double, 2> forward{0.0, 1.0};
  if (sample.target_speed_history[t] < config.heading_min_speed || sample.T < 2) return forward;
  const std::size_t a = t == 0 ? 0 : t - 1;
  const std::size_t b = t == 0 ? 1 : t;
  const double dx = sample.target(b, kFeatX) - sample.target(a, kFeatX);
  const double dy = sample.target(b, kFeatY) - sample.target(a, kFeatY);
  const double n = std::hypot(dx, dy);
  if (n < 1e-9) return forward;
  return {dx / n, dy / n};
}

std::vector<double> build_visual_matrix(const SceneSample& sample, const VisionConfig& config) {
  const std::size_t cells = sample.cells();
  std::vector<double> v(sample.T * cells);
  for (std::size_t t = 0; t < sample.T; ++t) {
    const VisualSectorSpec sector = sector_for_speed(sample.target_speed_history[t], config);
    const auto heading = target_heading(sample, t, config);
    for (std::size_t c = 0; c < cells; ++c) {
      const auto off = sample.grid.cell_offset(c);
      v[t * cells + c] = visual_weight(sector, heading, off[0], off[1]);
    }
  }
  return v;
}

MaskedNodes apply_visual_mask(const Tensor& h_conv, std::span<const double> visual, const SceneSample& sample,
                              bool append_unmasked) {
  const std::size_t T = sample.T, cells = sample.cells();
  if (h_conv.rank() != 2 || h_conv.dim(0) != T || h_conv.dim(1) != cells || visual.size() != T * cells) {
    throw DimensionError("apply_visual_mask: expected [" + std::to_string(T) + "x" + std::to_string(cells) +
                         "] features and weights, got " + shape_str(h_conv.shape()));
  }
  Tensor masked = mul(h_conv, Tensor({T, cells}, std::vector<double>(visual.begin(), visual.end())));
  MaskedNodes out;
  const std::size_t center = sample.grid.center_cell();
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> nodes{center};
    for (std::size_t c = 0; c < cells; ++c)
      if (c != center && sample.occupied(t, c)) nodes.push_back(c);
    Tensor column = gather_rows(transpose(slice_rows(masked, t, t + 1)), nodes);
    if (append_unmasked) column = concat_cols({column, gather_rows(transpose(slice_rows(h_conv, t, t + 1)), nodes)});
    out.cells.push_back(std::move(nodes));
    out.features.push_back(std::move(column));
  }
  return out;
}

Tensor EdgeGraph::bias_matrix() const {
  std::vector<double> b(nodes * nodes, 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = nearby[i] ? bias : 0.0;
  return Tensor({nodes, nodes}, std::move(b));
}

double safety_distance(double speed, const VisionConfig& config) {
  return std::max(config.safety_time_s * speed, config.safety_floor_m);
}

EdgeGraph build_edge_graph(std::span<const std::array<double, 2>> neighbor_offsets, double target_speed,
                           const VisionConfig& config) {
  const std::size_t n = neighbor_offsets.size() + 1;
  const double radius = safety_distance(target_speed, config);
  std::vector<unsigned char> inside(n, 1);
  for (std::size_t i = 1; i < n; ++i)
    inside[i] = std::hypot(neighbor_offsets[i - 1][0], neighbor_offsets[i - 1][1]) <= radius;
  EdgeGraph g;
  g.nodes = n;
  g.bias = config.nearby_bias;
  g.adjacency.assign(n * n, 1);
  g.nearby.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.nearby[i * n + j] = inside[i] && inside[j];
  return g;
}

GatLayer::GatLayer(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, double slope,
                   bool rowsum)
    : slope_(slope), rowsum_(rowsum) {
  project = Linear(store, name + ".W", in, out, false);
  attn_src = store.add(name + ".a_src", {out, 1}, Init::Xavier);
  attn_dst = store.add(name + ".a_dst", {out, 1}, Init::Xavier);
}

Tensor GatLayer::operator()(const Tensor& nodes, const EdgeGraph& graph, Tensor* alpha) const {
  const std::size_t n = graph.nodes;
  if (nodes.rank() != 2 || nodes.dim(0) != n) {
    throw DimensionError("gat: " + std::to_string(n) + "-node graph given features " + shape_str(nodes.shape()));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!graph.adjacency[i * n + i]) throw ContractError("gat: node without self-loop");
  Tensor wn = project(nodes);
  Tensor scores = outer_sum(matmul(wn, attn_src), matmul(wn, attn_dst));
  scores = leaky_relu(scores, slope_);
  if (graph.bias != 0.0) scores = add(scores, graph.bias_matrix());
  Tensor a;
  if (!rowsum_) {
    a = softmax_masked(scores, graph.adjacency);
  } else {
    std::vector<double> adj(graph.adjacency.begin(), graph.adjacency.end());
    Tensor masked = mul(scores, Tensor({n, n}, std::move(adj)));
    Tensor denom = sum_cols(masked);
    for (double d : denom.data())
      if (std::abs(d) < 1e-12) throw NumericError("gat: rowsum normalization has a zero denominator");
    a = mul_col(masked, reciprocal(denom));
  }
  if (alpha) *alpha = a;
  return elu(matmul(a, wn));
}

GatStack::GatStack(ParamStore& store, const std::string& name, std::size_t in, std::size_t dim, double slope,
                   bool rowsum, double dropout)
    : dropout_(dropout) {
  first = GatLayer(store, name + ".gat1", in, dim, slope, rowsum);
  second = GatLayer(store, name + ".gat2", dim, dim, slope, rowsum);
}

Tensor GatStack::frame(const Tensor& nodes, const EdgeGraph& graph, bool training, std::mt19937_64& rng) const {
  Tensor h = dropout(first(nodes, graph), dropout_, training, rng);
  return dropout(second(h, graph), dropout_, training, rng);
}

Tensor slot_readout(const std::vector<Tensor>& frame_outputs, const std::vector<std::vector<std::size_t>>& cells,
                    std::size_t total_cells, std::size_t center_cell) {
  if (frame_outputs.size() != cells.size() || frame_outputs.empty()) {
    throw DimensionError("slot_readout: frame count mismatch");
  }
  std::vector<double> count(total_cells, 0.0);
  for (const auto& frame : cells)
    for (auto c : frame) count[c] += 1.0;
  Tensor z;
  for (std::size_t t = 0; t < frame_outputs.size(); ++t) {
    const auto& nodes = cells[t];
    const std::size_t k = nodes.size();
    // Row c of the placement matrix picks node(c) / count[c]; the center row
    // also averages the neighbor nodes of this frame.
    std::vector<double> place(total_cells * k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t c = nodes[j];
      place[c * k + j] += 1.0 / count[c];
      if (c != center_cell && k > 1) place[center_cell * k + j] += 1.0 / (count[center_cell] * static_cast<double>(k - 1));
    }
    Tensor contrib = matmul(Tensor({total_cells, k}, std::move(place)), frame_outputs[t]);
    z = z.defined() ? add(z, contrib) : contrib;
  }
  return z;
}

std::vector<unsigned char> slot_mask(const std::vector<std::vector<std::size_t>>& cells, std::size_t total_cells) {
  std::vector<unsigned char> mask(total_cells, 0);
  for (const auto& frame : cells)
    for (auto c : frame) mask[c] = 1;
  return mask;
}

}  // namespace gava
