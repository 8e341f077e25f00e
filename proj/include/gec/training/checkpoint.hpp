#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "gec/model/config.hpp"
#include "gec/model/params.hpp"

namespace gec::training {

struct Checkpoint {
  model::ModelParams params;
  long step = 0;
  model::ModelConfig config;
  /// Fingerprint of the subword vocabulary the model was trained with; 0 if unknown.
  std::uint64_t vocab_fingerprint = 0;
};

/// File layout: the line "gec-checkpoint 1", an 8-byte little-endian manifest
/// length, the JSON manifest (step, config, fingerprints, tensor directory
/// with name/shape/offset, payload hash), then the raw little-endian float32
/// payload. Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError on a missing, truncated or corrupted file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Elementwise mean of every tensor, accumulated in double after sorting the
/// inputs by (step, payload hash) so the result does not depend on their order.
/// The result carries the largest step. Shape or config mismatch is a ConfigError.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);

/// Checkpoint files ("ckpt-<step>.bin") in `dir`, ascending by step.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long step);

/// FNV-1a over the float payload.
std::uint64_t params_hash(const model::ModelParams& params);

}  // namespace gec::training
