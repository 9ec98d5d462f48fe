#pragma once

// Full predictor: context encoder, interaction encoder, visual masking + graph
// attention, and the priority decoder, wired per the configured variant.

#include <memory>
#include <random>

#include "gava/config.hpp"
#include "gava/context.hpp"
#include "gava/decoder.hpp"
#include "gava/interaction.hpp"
#include "gava/vision.hpp"

namespace gava {

struct ForwardTrace {
  Tensor context;       // H⁰
  Tensor h_conv;        // undefined for the -IaM variant
  std::vector<double> visual;
  MaskedNodes nodes;
  Tensor visual_feature;  // Z
  std::vector<unsigned char> slot_mask;
};

/// Takes raw (SI, target-relative) samples; normalization statistics live in
/// checkpointed buffers so a loaded model is self-contained. Decoder outputs
/// are in normalized position units; predict() converts to meters.
class GavaModel {
 public:
  explicit GavaModel(const TrainConfig& config);

  const TrainConfig& config() const { return config_; }
  ParamStore& store() { return *store_; }
  const ParamStore& store() const { return *store_; }

  void set_stats(const NormalizationStats& stats);
  NormalizationStats stats() const;
  /// Per-axis scale (x, y) between decoder outputs and meters.
  std::array<double, 2> position_scale() const;

  DecoderOutput forward(const SceneSample& sample, bool training, ForwardTrace* trace = nullptr);
  /// Eval-mode, no-grad prediction in meters.
  GaussianTrajectory predict(const SceneSample& sample);

  std::mt19937_64& rng() { return rng_; }

  ContextEncoder context;
  InteractionEncoder interaction;
  GatStack gat;
  PriorityDecoder decoder;

 private:
  std::size_t node_width() const;

  TrainConfig config_;
  std::unique_ptr<ParamStore> store_;
  Tensor stat_mean_, stat_scale_, stat_future_;
  std::mt19937_64 rng_;
};

/// Raw sample shape check against the model's protocol; throws DataError.
void check_sample(const SceneSample& sample, const TrainConfig& config);

}  // namespace gava
