#include "gava/model.hpp"

namespace gava {

namespace {

Tensor rows_tensor(const double* data, std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols}, std::vector<double>(data, data + rows * cols));
}

}  // namespace

void check_sample(const SceneSample& sample, const TrainConfig& config) {
  const std::size_t cells = config.grid.cells();
  if (sample.T != config.T || sample.F != config.F || sample.cells() != cells ||
      sample.target_history.size() != sample.T * kStateDim || sample.future_truth.size() != sample.F * 2 ||
      sample.frame_cells.size() != sample.T * cells * kStateDim || sample.frame_mask.size() != sample.T * cells ||
      sample.neighbor_histories.size() != cells * sample.T * kStateDim) {
    throw DataError("sample " + sample.recording + "/" + std::to_string(sample.agent_id) + "@" +
                    std::to_string(sample.start_frame) + " does not match the configured T=" +
                    std::to_string(config.T) + " F=" + std::to_string(config.F) + " grid");
  }
}

GavaModel::GavaModel(const TrainConfig& config)
    : config_(config), store_(std::make_unique<ParamStore>(config.seed)), rng_(config.seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  ParamStore& s = *store_;
  stat_mean_ = s.add_buffer("norm.mean", {kStateDim}, 0.0);
  stat_scale_ = s.add_buffer("norm.scale", {kStateDim}, 1.0);
  stat_future_ = s.add_buffer("norm.future_scale", {2}, 1.0);
  context = ContextEncoder(s, "context", kStateDim, config.dim, config.heads, config.elu_alpha);
  if (config.variant != Variant::NoInteraction) {
    InteractionShape shape;
    shape.T = config.T;
    shape.slots = config.grid.slots;
    shape.lanes = config.grid.lanes;
    shape.channels = config.conv_channels;
    shape.hidden = config.interaction_hidden;
    shape.dropout = config.dropout;
    shape.elu_alpha = config.elu_alpha;
    shape.norm_after_elu = config.norm_after_elu;
    shape.bn_momentum = config.bn_momentum;
    shape.bn_eps = config.bn_eps;
    interaction = InteractionEncoder(s, "interaction", shape);
  }
  gat = GatStack(s, "vision", node_width(), config.dim, config.leaky_slope, config.vision.rowsum_attention, config.dropout);
  DecoderShape dshape;
  dshape.T = config.T;
  dshape.F = config.F;
  dshape.cells = config.grid.cells();
  dshape.dim = config.dim;
  dshape.heads = config.heads;
  dshape.layers = config.layers;
  dshape.ffn_mult = config.ffn_mult;
  dshape.dropout = config.dropout;
  dshape.elu_alpha = config.elu_alpha;
  decoder = PriorityDecoder(s, "priority", dshape);
}

std::size_t GavaModel::node_width() const {
  switch (config_.variant) {
    case Variant::NoInteraction: return config_.dim;
    case Variant::PlusUnmasked: return 2;
    default: return 1;
  }
}

void GavaModel::set_stats(const NormalizationStats& stats) {
  auto m = stat_mean_.mutable_data();
  auto sc = stat_scale_.mutable_data();
  for (std::size_t f = 0; f < kStateDim; ++f) {
    m[f] = stats.mean[f];
    sc[f] = stats.scale[f];
  }
  auto fs = stat_future_.mutable_data();
  fs[0] = stats.future_scale[0];
  fs[1] = stats.future_scale[1];
}

NormalizationStats GavaModel::stats() const {
  NormalizationStats s;
  for (std::size_t f = 0; f < kStateDim; ++f) {
    s.mean[f] = stat_mean_[f];
    s.scale[f] = stat_scale_[f];
  }
  s.future_scale = {stat_future_[0], stat_future_[1]};
  return s;
}

std::array<double, 2> GavaModel::position_scale() const { return {stat_future_[0], stat_future_[1]}; }

DecoderOutput GavaModel::forward(const SceneSample& raw, bool training, ForwardTrace* trace) {
  check_sample(raw, config_);
  SceneSample sample = raw;
  normalize_sample(sample, stats());
  const std::size_t T = sample.T, cells = sample.cells(), center = sample.grid.center_cell();

  Tensor target = rows_tensor(sample.target_history.data(), T, kStateDim);
  std::vector<Tensor> neighbors;
  for (std::size_t c = 0; c < cells; ++c)
    if (sample.neighbor_present(c)) {
      neighbors.push_back(rows_tensor(sample.neighbor_histories.data() + c * T * kStateDim, T, kStateDim));
    }
  Tensor h0 = context(target, neighbors);

  std::vector<double> visual = config_.variant == Variant::NoVisual ? std::vector<double>(T * cells, 1.0)
                                                                    : build_visual_matrix(raw, config_.vision);
  MaskedNodes nodes;
  Tensor h_conv;
  if (config_.variant != Variant::NoInteraction) {
    const auto d = build_interaction_tensor(sample);
    h_conv = interaction(Tensor({T, kInteractionChannels, sample.grid.slots, sample.grid.lanes}, d), training, rng_);
    nodes = apply_visual_mask(h_conv, visual, sample, config_.variant == Variant::PlusUnmasked);
  } else {
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::size_t> cell_ids{center};
      std::vector<double> states(sample.target_history.begin() + t * kStateDim,
                                 sample.target_history.begin() + (t + 1) * kStateDim);
      for (std::size_t c = 0; c < cells; ++c)
        if (c != center && sample.occupied(t, c)) {
          cell_ids.push_back(c);
          states.insert(states.end(), sample.cell_state(t, c), sample.cell_state(t, c) + kStateDim);
        }
      std::vector<double> weights;
      for (auto c : cell_ids) weights.push_back(visual[t * cells + c]);
      const std::size_t k = cell_ids.size();
      nodes.features.push_back(
          mul_col(context.embed(Tensor({k, kStateDim}, std::move(states))), Tensor({k}, std::move(weights))));
      nodes.cells.push_back(std::move(cell_ids));
    }
  }

  std::vector<Tensor> frame_out;
  frame_out.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double tx = raw.target(t, kFeatX), ty = raw.target(t, kFeatY);
    std::vector<std::array<double, 2>> offsets;
    for (std::size_t j = 1; j < nodes.cells[t].size(); ++j) {
      const double* st = raw.cell_state(t, nodes.cells[t][j]);
      offsets.push_back({st[kFeatX] - tx, st[kFeatY] - ty});
    }
    const EdgeGraph graph = build_edge_graph(offsets, raw.target_speed_history[t], config_.vision);
    frame_out.push_back(gat.frame(nodes.features[t], graph, training, rng_));
  }
  Tensor z = slot_readout(frame_out, nodes.cells, cells, center);
  auto mask = slot_mask(nodes.cells, cells);
  DecoderOutput out = decoder(z, mask, h0, training, rng_);
  if (trace) {
    trace->context = h0;
    trace->h_conv = h_conv;
    trace->visual = std::move(visual);
    trace->nodes = std::move(nodes);
    trace->visual_feature = z;
    trace->slot_mask = std::move(mask);
  }
  return out;
}

GaussianTrajectory GavaModel::predict(const SceneSample& sample) {
  NoGradGuard guard;
  GaussianTrajectory traj = to_trajectory(forward(sample, false), config_.F);
  const auto s = position_scale();
  for (auto& mode : traj.modes)
    for (auto& g : mode) {
      g.mu_x *= s[0];
      g.mu_y *= s[1];
      g.sigma_x *= s[0];
      g.sigma_y *= s[1];
    }
  return traj;
}

}  // namespace gava
