#include "gava/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gava {

GaussianParams gaussian_constrain(std::span<const double, kGaussianParams> raw) {
  GaussianParams g;
  g.mu_x = raw[0];
  g.mu_y = raw[1];
  g.sigma_x = std::clamp(std::exp(raw[2]), kSigmaMin, kSigmaMax);
  g.sigma_y = std::clamp(std::exp(raw[3]), kSigmaMin, kSigmaMax);
  g.rho = kRhoLimit * std::tanh(raw[4]);
  return g;
}

Tensor gaussian_constrain(const Tensor& raw) {
  if (raw.rank() != 2 || raw.dim(1) != kGaussianParams) {
    throw DimensionError("gaussian_constrain: expected [n×5], got " + shape_str(raw.shape()));
  }
  // exp overflows to inf before the clamp can act; bound the exponent first.
  Tensor log_sigma = clamp(slice_cols(raw, 2, 4), std::log(kSigmaMin) - 1.0, std::log(kSigmaMax) + 1.0);
  return concat_cols({slice_cols(raw, 0, 2), clamp(exp(log_sigma), kSigmaMin, kSigmaMax),
                      scale(tanh(slice_cols(raw, 4, 5)), kRhoLimit)});
}

double bivariate_log_density(const GaussianParams& g, double x, double y) {
  const double dx = (x - g.mu_x) / g.sigma_x;
  const double dy = (y - g.mu_y) / g.sigma_y;
  const double one_m = 1.0 - g.rho * g.rho;
  const double z = dx * dx + dy * dy - 2.0 * g.rho * dx * dy;
  return -std::log(2.0 * M_PI) - std::log(g.sigma_x) - std::log(g.sigma_y) - 0.5 * std::log(one_m) -
         z / (2.0 * one_m);
}

double mixture_log_density(const GaussianTrajectory& traj, std::span<const double> truth) {
  if (truth.size() != traj.F * 2) throw DimensionError("mixture_log_density: truth length mismatch");
  std::array<double, kModes> terms{};
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < kModes; ++m) {
    double lp = std::log(std::max(traj.maneuvers.joint(m), std::numeric_limits<double>::min()));
    for (std::size_t f = 0; f < traj.F; ++f) lp += bivariate_log_density(traj.modes[m][f], truth[2 * f], truth[2 * f + 1]);
    terms[m] = lp;
    peak = std::max(peak, lp);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - peak);
  return peak + std::log(acc);
}

std::size_t best_mode(const ManeuverDistribution& dist) {
  static constexpr std::size_t kPreference[kModes] = {
      mode_index(LateralManeuver::Keep, LongitudinalManeuver::Normal),
      mode_index(LateralManeuver::Keep, LongitudinalManeuver::Braking),
      mode_index(LateralManeuver::LeftChange, LongitudinalManeuver::Normal),
      mode_index(LateralManeuver::RightChange, LongitudinalManeuver::Normal),
      mode_index(LateralManeuver::LeftChange, LongitudinalManeuver::Braking),
      mode_index(LateralManeuver::RightChange, LongitudinalManeuver::Braking)};
  std::size_t best = kPreference[0];
  for (std::size_t m : kPreference)
    if (dist.joint(m) > dist.joint(best)) best = m;
  return best;
}

std::vector<double> point_prediction(const GaussianTrajectory& traj, bool weighted_mean) {
  std::vector<double> out(traj.F * 2, 0.0);
  if (!weighted_mean) {
    const auto& mode = traj.modes[best_mode(traj.maneuvers)];
    for (std::size_t f = 0; f < traj.F; ++f) {
      out[2 * f] = mode[f].mu_x;
      out[2 * f + 1] = mode[f].mu_y;
    }
    return out;
  }
  for (std::size_t m = 0; m < kModes; ++m) {
    const double p = traj.maneuvers.joint(m);
    for (std::size_t f = 0; f < traj.F; ++f) {
      out[2 * f] += p * traj.modes[m][f].mu_x;
      out[2 * f + 1] += p * traj.modes[m][f].mu_y;
    }
  }
  return out;
}

GaussianTrajectory to_trajectory(const DecoderOutput& out, std::size_t F) {
  GaussianTrajectory traj;
  traj.F = F;
  const auto p = out.params.data();
  for (std::size_t m = 0; m < kModes; ++m) {
    traj.modes[m].resize(F);
    for (std::size_t f = 0; f < F; ++f) {
      const double* r = p.data() + (f * kModes + m) * kGaussianParams;
      traj.modes[m][f] = {r[0], r[1], r[2], r[3], r[4]};
    }
  }
  for (std::size_t i = 0; i < kLateralClasses; ++i) traj.maneuvers.p_lateral[i] = out.p_lateral[i];
  for (std::size_t i = 0; i < kLongitudinalClasses; ++i) traj.maneuvers.p_longitudinal[i] = out.p_longitudinal[i];
  return traj;
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, const DecoderShape& shape)
    : dropout_(shape.dropout), elu_alpha_(shape.elu_alpha) {
  attention = MultiHeadAttention(store, name + ".attn", shape.dim, shape.heads);
  norm1 = LayerNorm(store, name + ".norm1", shape.dim);
  ffn_in = Linear(store, name + ".ffn_in", shape.dim, shape.ffn_mult * shape.dim);
  ffn_out = Linear(store, name + ".ffn_out", shape.ffn_mult * shape.dim, shape.dim);
  norm2 = LayerNorm(store, name + ".norm2", shape.dim);
}

Tensor EncoderLayer::operator()(const Tensor& z, const std::vector<unsigned char>* mask, bool training,
                                std::mt19937_64& rng) const {
  Tensor a = norm1(add(z, dropout(attention(z, z, mask), dropout_, training, rng)));
  Tensor f = ffn_out(elu(ffn_in(a), elu_alpha_));
  return norm2(add(a, dropout(f, dropout_, training, rng)));
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& name, const DecoderShape& shape)
    : dropout_(shape.dropout), elu_alpha_(shape.elu_alpha) {
  self_attention = MultiHeadAttention(store, name + ".self", shape.dim, shape.heads);
  norm1 = LayerNorm(store, name + ".norm1", shape.dim);
  cross_attention = MultiHeadAttention(store, name + ".cross", shape.dim, shape.heads);
  norm2 = LayerNorm(store, name + ".norm2", shape.dim);
  ffn_in = Linear(store, name + ".ffn_in", shape.dim, shape.ffn_mult * shape.dim);
  ffn_out = Linear(store, name + ".ffn_out", shape.ffn_mult * shape.dim, shape.dim);
  norm3 = LayerNorm(store, name + ".norm3", shape.dim);
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const std::vector<unsigned char>* mask,
                                bool training, std::mt19937_64& rng) const {
  Tensor a = norm1(add(x, dropout(self_attention(x, x), dropout_, training, rng)));
  Tensor b = norm2(add(a, dropout(cross_attention(a, memory, mask), dropout_, training, rng)));
  Tensor f = ffn_out(elu(ffn_in(b), elu_alpha_));
  return norm3(add(b, dropout(f, dropout_, training, rng)));
}

PriorityDecoder::PriorityDecoder(ParamStore& store, const std::string& name, const DecoderShape& shape)
    : shape_(shape) {
  for (std::size_t l = 0; l < shape.layers; ++l)
    encoder.emplace_back(store, name + ".encoder" + std::to_string(l), shape);
  input_embed = Linear(store, name + ".input_embed", shape.dim, shape.dim);
  for (std::size_t l = 0; l < shape.layers; ++l)
    decoder.emplace_back(store, name + ".decoder" + std::to_string(l), shape);
  output_proj = Linear(store, name + ".output", shape.dim, 2 * shape.dim);
  lateral_head = Linear(store, name + ".lateral", shape.dim, kLateralClasses);
  longitudinal_head = Linear(store, name + ".longitudinal", shape.dim, kLongitudinalClasses);
  time_weight = store.add(name + ".time.weight", {shape.F, shape.T}, Init::Xavier);
  time_bias = store.add(name + ".time.bias", {shape.F, shape.dim}, Init::Zeros);
  intention = Linear(store, name + ".intention", shape.dim + kLateralClasses + kLongitudinalClasses, shape.dim);
  lstm = LSTMCell(store, name + ".lstm", shape.dim, shape.dim);
  emission = Linear(store, name + ".emission", shape.dim, kGaussianParams);
}

Tensor PriorityDecoder::encode(const Tensor& z, const std::vector<unsigned char>* mask, bool training,
                               std::mt19937_64& rng) const {
  if (z.rank() != 2 || z.dim(0) != shape_.cells || z.dim(1) != shape_.dim) {
    throw DimensionError("decoder: visual feature " + shape_str(z.shape()) + ", expected [" +
                         std::to_string(shape_.cells) + "x" + std::to_string(shape_.dim) + "]");
  }
  Tensor h = z;
  for (const auto& layer : encoder) h = layer(h, mask, training, rng);
  return h;
}

Tensor PriorityDecoder::decode(const Tensor& memory, const std::vector<unsigned char>* mask, const Tensor& context,
                               bool training, std::mt19937_64& rng) const {
  if (context.rank() != 2 || context.dim(0) != shape_.T || context.dim(1) != shape_.dim) {
    throw DimensionError("decoder: context " + shape_str(context.shape()) + ", expected [" +
                         std::to_string(shape_.T) + "x" + std::to_string(shape_.dim) + "]");
  }
  Tensor x = add(input_embed(context), positional_encoding(shape_.T, shape_.dim));
  for (const auto& layer : decoder) x = layer(x, memory, mask, training, rng);
  return glu(output_proj(dropout(x, shape_.dropout, training, rng)));
}

std::array<Tensor, 2> PriorityDecoder::maneuver_heads(const Tensor& decoded) const {
  Tensor pooled = mean_rows(decoded);
  return {softmax(lateral_head(pooled)), softmax(longitudinal_head(pooled))};
}

Tensor PriorityDecoder::emit(const Tensor& decoded) const {
  const std::size_t F = shape_.F;
  Tensor future = elu(add(matmul(time_weight, decoded), time_bias), shape_.elu_alpha);
  std::vector<std::size_t> rows(F * kModes);
  std::vector<double> onehot(F * kModes * (kLateralClasses + kLongitudinalClasses), 0.0);
  const std::size_t width = kLateralClasses + kLongitudinalClasses;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t m = 0; m < kModes; ++m) {
      const std::size_t r = f * kModes + m;
      rows[r] = f;
      onehot[r * width + static_cast<std::size_t>(mode_lateral(m))] = 1.0;
      onehot[r * width + kLateralClasses + static_cast<std::size_t>(mode_longitudinal(m))] = 1.0;
    }
  Tensor fused = elu(intention(concat_cols({gather_rows(future, rows), Tensor({F * kModes, width}, std::move(onehot))})),
                     shape_.elu_alpha);
  LSTMState state{Tensor::zeros({kModes, shape_.dim}), Tensor::zeros({kModes, shape_.dim})};
  std::vector<Tensor> hidden;
  hidden.reserve(F);
  for (std::size_t f = 0; f < F; ++f) {
    state = lstm(slice_rows(fused, f * kModes, (f + 1) * kModes), state);
    hidden.push_back(state.h);
  }
  return gaussian_constrain(emission(concat_rows(hidden)));
}

DecoderOutput PriorityDecoder::operator()(const Tensor& z, const std::vector<unsigned char>& mask,
                                          const Tensor& context, bool training, std::mt19937_64& rng) const {
  if (mask.size() != shape_.cells) throw DimensionError("decoder: cell mask size mismatch");
  DecoderOutput out;
  out.memory = encode(z, &mask, training, rng);
  out.context = decode(out.memory, &mask, context, training, rng);
  auto heads = maneuver_heads(out.context);
  out.p_lateral = heads[0];
  out.p_longitudinal = heads[1];
  out.params = emit(out.context);
  return out;
}

}  // namespace gava
