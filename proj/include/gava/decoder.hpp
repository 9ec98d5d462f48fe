#pragma once

// Transformer encoder over the visual feature, a context-conditioned decoder,
// maneuver heads, and per-mode bivariate Gaussian emission.

#include <array>
#include <random>
#include <vector>

#include "gava/nn.hpp"
#include "gava/scene.hpp"

namespace gava {

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 1e3;
inline constexpr double kRhoLimit = 0.999;
inline constexpr std::size_t kGaussianParams = 5;

struct GaussianParams {
  double mu_x = 0.0, mu_y = 0.0;
  double sigma_x = 1.0, sigma_y = 1.0;
  double rho = 0.0;
};

struct ManeuverDistribution {
  std::array<double, kLateralClasses> p_lateral{};
  std::array<double, kLongitudinalClasses> p_longitudinal{};

  double joint(std::size_t mode) const {
    return p_lateral[static_cast<std::size_t>(mode_lateral(mode))] *
           p_longitudinal[static_cast<std::size_t>(mode_longitudinal(mode))];
  }
};

struct GaussianTrajectory {
  std::size_t F = 0;
  /// modes[m][f]
  std::array<std::vector<GaussianParams>, kModes> modes;
  ManeuverDistribution maneuvers;
};

/// μ = raw[0:2]; σ = clamp(exp(raw[2:4]), 1e-3, 1e3); ρ = 0.999·tanh(raw[4]).
GaussianParams gaussian_constrain(std::span<const double, kGaussianParams> raw);

/// Tensor form over rows of [n×5]; returns [n×5] columns (μx, μy, σx, σy, ρ).
Tensor gaussian_constrain(const Tensor& raw);

/// log N(x, y; θ) for one step.
double bivariate_log_density(const GaussianParams& g, double x, double y);

/// log Σ_m P(m) Π_f N(y_f; θ^m_f); truth is F×2.
double mixture_log_density(const GaussianTrajectory& traj, std::span<const double> truth);

/// Highest joint-probability mode; ties go to the mode closest to keep/normal.
std::size_t best_mode(const ManeuverDistribution& dist);

/// F×2 point prediction: best mode mean, or probability-weighted mean over modes.
std::vector<double> point_prediction(const GaussianTrajectory& traj, bool weighted_mean = false);

struct DecoderShape {
  std::size_t T = 15;
  std::size_t F = 25;
  std::size_t cells = 39;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_mult = 2;
  double dropout = 0.1;
  double elu_alpha = 1.0;
};

/// Raw decoder outputs; row f·6 + m of `params` is mode m at future step f.
struct DecoderOutput {
  Tensor params;        // [F·6 × 5] constrained
  Tensor p_lateral;     // [1×3]
  Tensor p_longitudinal;  // [1×2]
  Tensor context;       // H̃⁰ [T×dim]
  Tensor memory;        // Z''' [cells×dim]
};

GaussianTrajectory to_trajectory(const DecoderOutput& out, std::size_t F);

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, const DecoderShape& shape);
  Tensor operator()(const Tensor& z, const std::vector<unsigned char>* mask, bool training,
                    std::mt19937_64& rng) const;
  MultiHeadAttention attention;
  LayerNorm norm1, norm2;
  Linear ffn_in, ffn_out;

 private:
  double dropout_ = 0.0, elu_alpha_ = 1.0;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParamStore& store, const std::string& name, const DecoderShape& shape);
  Tensor operator()(const Tensor& x, const Tensor& memory, const std::vector<unsigned char>* mask, bool training,
                    std::mt19937_64& rng) const;
  MultiHeadAttention self_attention, cross_attention;
  LayerNorm norm1, norm2, norm3;
  Linear ffn_in, ffn_out;

 private:
  double dropout_ = 0.0, elu_alpha_ = 1.0;
};

class PriorityDecoder {
 public:
  PriorityDecoder() = default;
  PriorityDecoder(ParamStore& store, const std::string& name, const DecoderShape& shape);

  /// z [cells×dim] with key mask over cells, context H⁰ [T×dim].
  DecoderOutput operator()(const Tensor& z, const std::vector<unsigned char>& mask, const Tensor& context,
                           bool training, std::mt19937_64& rng) const;

  Tensor encode(const Tensor& z, const std::vector<unsigned char>* mask, bool training, std::mt19937_64& rng) const;
  Tensor decode(const Tensor& memory, const std::vector<unsigned char>* mask, const Tensor& context, bool training,
                std::mt19937_64& rng) const;
  /// Mean-pooled H̃⁰ through the two softmax heads: {[1×3], [1×2]}.
  std::array<Tensor, 2> maneuver_heads(const Tensor& decoded) const;
  /// [F·6×5] constrained parameters.
  Tensor emit(const Tensor& decoded) const;

  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Linear input_embed, output_proj, lateral_head, longitudinal_head, intention, emission;
  Tensor time_weight, time_bias;  // [F×T], [F×dim]
  LSTMCell lstm;

 private:
  DecoderShape shape_;
};

}  // namespace gava
