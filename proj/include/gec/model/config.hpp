#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace gec::model {

/// Encoder-decoder shape plus the regularizers and objective weight.
struct ModelConfig {
  int layers = 2;  // encoder and decoder each
  int heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 4000;
  double internal_dropout = 0.0;
  double source_word_dropout = 0.0;
  double target_word_dropout = 0.0;
  /// Loss weight Λ for target subwords that are not copied from the source.
  double mle_weight = 1.0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Hash over the fields that determine parameter shapes.
  std::uint64_t shape_fingerprint() const;

  /// Named presets: "desk" (2+2 layers, 128 wide), "base", "big".
  static ModelConfig preset(const std::string& name);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace gec::model
