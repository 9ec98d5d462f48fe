#include "gava/interaction.hpp"

namespace gava {

std::vector<double> build_interaction_tensor(const SceneSample& sample) {
  const std::size_t cells = sample.cells();
  const std::size_t plane = cells;
  std::vector<double> d(sample.T * kInteractionChannels * plane, 0.0);
  for (std::size_t t = 0; t < sample.T; ++t) {
    const double v = sample.target(t, kFeatVelocity);
    const double a = sample.target(t, kFeatAcceleration);
    double* frame = d.data() + t * kInteractionChannels * plane;
    for (std::size_t c = 0; c < cells; ++c) {
      if (!sample.occupied(t, c)) continue;
      const double* s = sample.cell_state(t, c);
      frame[c] = s[kFeatVelocity] - v;
      frame[plane + c] = s[kFeatAcceleration] - a;
      frame[2 * plane + c] = sample.frame_mode[t * cells + c] == sample.target_mode[t] ? 1.0 : 0.0;
    }
  }
  return d;
}

InteractionEncoder::InteractionEncoder(ParamStore& store, const std::string& name, const InteractionShape& shape)
    : shape_(shape) {
  const std::size_t C = shape.channels;
  expand_kernel = store.add(name + ".expand.kernel", {C, kInteractionChannels, 1, 1}, Init::Xavier);
  expand_bias = store.add(name + ".expand.bias", {C}, Init::Zeros);
  norm = BatchNorm2d(store, name + ".norm", C, shape.bn_momentum, shape.bn_eps);
  mix_kernel = store.add(name + ".mix.kernel", {C, C, 3, 3}, Init::Xavier);
  mix_bias = store.add(name + ".mix.bias", {C}, Init::Zeros);
  reduce_kernel = store.add(name + ".reduce.kernel", {1, C, 1, 1}, Init::Xavier);
  reduce_bias = store.add(name + ".reduce.bias", {1}, Init::Zeros);
  gru = GRUCell(store, name + ".gru", 1, shape.hidden);
  readout = Linear(store, name + ".readout", shape.hidden, 1);
}

Tensor InteractionEncoder::feature_maps(const Tensor& d, bool training, std::mt19937_64& rng) {
  const Shape expected{shape_.T, kInteractionChannels, shape_.slots, shape_.lanes};
  if (d.shape() != expected) {
    throw DimensionError("interaction: expected " + shape_str(expected) + ", got " + shape_str(d.shape()));
  }
  Tensor h = conv2d(d, expand_kernel, expand_bias, 0);
  if (shape_.norm_after_elu) {
    h = norm(elu(h, shape_.elu_alpha), training);
  } else {
    h = elu(norm(h, training), shape_.elu_alpha);
  }
  h = elu(conv2d(h, mix_kernel, mix_bias, 1), shape_.elu_alpha);
  return dropout(h, shape_.dropout, training, rng);
}

Tensor InteractionEncoder::operator()(const Tensor& d, bool training, std::mt19937_64& rng) {
  const std::size_t T = shape_.T, cells = shape_.slots * shape_.lanes;
  Tensor reduced = reshape(conv2d(feature_maps(d, training, rng), reduce_kernel, reduce_bias, 0), {T, cells});
  Tensor h = Tensor::zeros({cells, shape_.hidden});
  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    h = gru(transpose(slice_rows(reduced, t, t + 1)), h);
    rows.push_back(transpose(readout(h)));
  }
  return concat_rows(rows);
}

}  // namespace gava
