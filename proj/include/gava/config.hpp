#pragma once

// Experiment configuration. Every field has a dotted key; the same keys are
// used by the config file (`key = value`, `#` comments) and by CLI overrides.

#include <cstdint>
#include <string>
#include <vector>

#include "gava/scene.hpp"

namespace gava {

enum class Variant { Full, NoInteraction, NoVisual, PlusUnmasked };
enum class PointMode { BestMode, WeightedMean };

std::string variant_id(Variant v);     // full | no_iam | no_vam | plus_nvm
std::string variant_label(Variant v);  // GaVa | GaVa(-IaM) | ...
Variant parse_variant(const std::string& s);
inline constexpr Variant kAllVariants[] = {Variant::Full, Variant::NoInteraction, Variant::NoVisual,
                                           Variant::PlusUnmasked};

struct VisionConfig {
  /// Band upper edges in km/h; band i covers [thresholds[i-1], thresholds[i]).
  std::vector<double> thresholds_kmh{30.0, 60.0, 90.0};
  std::vector<double> radii_m{30.0, 50.0, 70.0, 90.0};
  std::vector<double> apex_deg{90.0, 75.0, 60.0, 45.0};
  double fringe_weight = 0.5;
  double peripheral_weight = 0.2;
  double safety_time_s = 2.0;
  double safety_floor_m = 10.0;
  double nearby_bias = 1.0;
  /// Normalize raw LeakyReLU scores by their row sum instead of a softmax.
  bool rowsum_attention = false;
  /// Below this speed the heading defaults to +y.
  double heading_min_speed = 0.5;
};

struct TrainConfig {
  // Protocol.
  double dt = 0.2;
  std::size_t T = 15;
  std::size_t F = 25;
  std::size_t stride = 1;
  bool protocol_override = false;
  GridSpec grid;

  // Model.
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t conv_channels = 16;
  std::size_t interaction_hidden = 8;
  std::size_t ffn_mult = 2;
  double dropout = 0.1;
  double elu_alpha = 1.0;
  double leaky_slope = 0.2;
  bool norm_after_elu = true;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  VisionConfig vision;
  Variant variant = Variant::Full;
  PointMode point_mode = PointMode::BestMode;

  // Optimization.
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double lambda_nll = 1.0;
  double lambda_man = 1.0;
  double clip_norm = 0.0;
  /// Learning rate is multiplied by this after every epoch.
  double lr_decay = 1.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;

  // Data.
  LengthUnit units = LengthUnit::Feet;
  double frame_dt = 0.1;
  double label_horizon_s = 2.0;

  /// Throws ConfigError on any out-of-range or inconsistent value.
  void validate() const;
  /// Sets one field from its textual value; throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Canonical `key = value` listing of every field, in key order.
  std::string serialize() const;
  /// 64-bit FNV-1a over serialize(), as 16 hex digits.
  std::string fingerprint() const;

  static const std::vector<std::string>& keys();
  /// Unknown keys and malformed values throw; range checks are left to validate().
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
};

/// Desk-scale settings used by the tests and quick CLI runs.
TrainConfig tiny_config();

}  // namespace gava
