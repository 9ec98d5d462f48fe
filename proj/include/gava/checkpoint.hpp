#pragma once

// Checkpoint container: a text header (format version, config fingerprint,
// the full config block, an entry table of name/shape/offset) followed by
// little-endian float32 arrays in header order.

#include <iosfwd>
#include <memory>
#include <string>

#include "gava/model.hpp"

namespace gava {

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const GavaModel& model, const std::string& path);
void save_checkpoint(const GavaModel& model, std::ostream& out);

/// Rebuilds the model from the config stored in the checkpoint.
std::unique_ptr<GavaModel> load_checkpoint(const std::string& path);

/// Loads values into an existing model; every entry must match by name and
/// shape. A fingerprint mismatch is reported on `warn` but does not fail.
/// Returns false when the fingerprints differ.
bool load_parameters(GavaModel& model, const std::string& path, std::ostream* warn);
bool load_parameters(GavaModel& model, std::istream& in, std::ostream* warn);

/// Config text embedded in a checkpoint header.
TrainConfig checkpoint_config(const std::string& path);

}  // namespace gava
