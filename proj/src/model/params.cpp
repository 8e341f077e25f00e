#include "gec/model/params.hpp"

#include <cmath>

#include "gec/common/rng.hpp"

namespace gec::model {

template <typename T>
ParamSet<T> make_layout(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index f = cfg.d_ff;
  ParamSet<T> p;
  p.add("embedding", cfg.vocab_size, d);
  auto layer_norm = [&](const std::string& prefix) {
    p.add(prefix + ".g", 1, d);
    p.add(prefix + ".b", 1, d);
  };
  auto attention = [&](const std::string& prefix) {
    for (const char* w : {".q", ".k", ".v", ".o"}) p.add(prefix + w, d, d);
  };
  auto ffn = [&](const std::string& prefix) {
    p.add(prefix + ".w1", d, f);
    p.add(prefix + ".b1", 1, f);
    p.add(prefix + ".w2", f, d);
    p.add(prefix + ".b2", 1, d);
  };
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string e = "enc." + std::to_string(l);
    layer_norm(e + ".ln1");
    attention(e + ".self");
    layer_norm(e + ".ln2");
    ffn(e + ".ffn");
  }
  layer_norm("enc.ln");
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string e = "dec." + std::to_string(l);
    layer_norm(e + ".ln1");
    attention(e + ".self");
    layer_norm(e + ".ln2");
    attention(e + ".cross");
    layer_norm(e + ".ln3");
    ffn(e + ".ffn");
  }
  layer_norm("dec.ln");
  p.add("output", d, cfg.vocab_size);
  return p;
}

template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = make_layout<T>(cfg);
  Rng rng(seed);
  for (auto& t : p) {
    const auto& n = t.name;
    const bool is_gain = n.size() > 2 && n.compare(n.size() - 2, 2, ".g") == 0;
    const bool is_bias = n.size() > 2 && (n.compare(n.size() - 2, 2, ".b") == 0 || n.ends_with(".b1") || n.ends_with(".b2"));
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), T(1));
    } else if (is_bias) {
      continue;
    } else {
      // The embedding doubles as the output projection, whose fan-in is d_model.
      const double fan_in = n == "embedding" ? static_cast<double>(t.cols) : static_cast<double>(t.rows);
      const double limit = 1.0 / std::sqrt(fan_in);
      for (auto& x : t.data) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
    }
  }
  return p;
}

template ParamSet<float> make_layout<float>(const ModelConfig&);
template ParamSet<double> make_layout<double>(const ModelConfig&);
template ParamSet<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ParamSet<double> init_params<double>(const ModelConfig&, std::uint64_t);

}  // namespace gec::model
