#include "gec/model/config.hpp"

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"

namespace gec::model {

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1)
    throw ConfigError("model config: sizes must be positive");
  if (d_model % heads != 0) throw ConfigError("model config: d_model must be divisible by heads");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string("model config: ") + name + " must be in [0, 1)");
  };
  prob(internal_dropout, "internal_dropout");
  prob(source_word_dropout, "source_word_dropout");
  prob(target_word_dropout, "target_word_dropout");
  if (!(mle_weight >= 1.0)) throw ConfigError("model config: mle_weight must be >= 1");
}

std::uint64_t ModelConfig::shape_fingerprint() const {
  const std::string key = std::to_string(layers) + "/" + std::to_string(heads) + "/" + std::to_string(d_model) + "/" +
                          std::to_string(d_ff) + "/" + std::to_string(vocab_size);
  return fnv1a(key);
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  if (name == "desk") return c;
  if (name == "tiny") {
    c.layers = 2;
    c.heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_size = 32;
    return c;
  }
  if (name == "base") {
    c.layers = 6;
    c.heads = 8;
    c.d_model = 512;
    c.d_ff = 2048;
    c.vocab_size = 32000;
    c.internal_dropout = 0.1;
    return c;
  }
  if (name == "big") {
    c.layers = 6;
    c.heads = 16;
    c.d_model = 1024;
    c.d_ff = 4096;
    c.vocab_size = 32000;
    c.internal_dropout = 0.3;
    return c;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"heads", c.heads},
                     {"d_model", c.d_model},
                     {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size},
                     {"internal_dropout", c.internal_dropout},
                     {"source_word_dropout", c.source_word_dropout},
                     {"target_word_dropout", c.target_word_dropout},
                     {"mle_weight", c.mle_weight}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.internal_dropout = j.value("internal_dropout", d.internal_dropout);
  c.source_word_dropout = j.value("source_word_dropout", d.source_word_dropout);
  c.target_word_dropout = j.value("target_word_dropout", d.target_word_dropout);
  c.mle_weight = j.value("mle_weight", d.mle_weight);
}

}  // namespace gec::model
