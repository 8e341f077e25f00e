#include "gec/decoding/iterative.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <set>
#include <thread>

#include "gec/common/errors.hpp"

namespace gec::decoding {

ModelCorrector::ModelCorrector(const model::Transformer<float>& model, const model::ParamSet<float>& params,
                               const subword::Vocab& vocab, BeamConfig beam, std::size_t max_source_len)
    : model_(model), params_(params), vocab_(vocab), beam_(beam), max_source_len_(max_source_len) {
  beam_.validate();
}

std::vector<TextHypothesis> ModelCorrector::decode(const std::string& sentence) {
  const auto ids = vocab_.encode(sentence);
  if (ids.size() > max_source_len_) return {{sentence, 0.0}};
  const int max_len = beam_.max_output_len > 0
                          ? beam_.max_output_len
                          : static_cast<int>(std::min(max_source_len_ + 1, 2 * ids.size() + 10));
  TransformerStepper<float> stepper(model_, params_, ids);
  const auto hyps = beam_search(stepper, beam_, max_len);
  std::vector<TextHypothesis> out;
  std::set<std::string> seen;
  for (const auto& h : hyps) {
    auto text = vocab_.decode(subword::Ids(h.tokens.begin(), h.tokens.end()));
    if (seen.insert(text).second) out.push_back({std::move(text), h.cost});
  }
  return out;
}

std::vector<TextHypothesis> CachingCorrector::decode(const std::string& sentence) {
  auto it = cache_.find(sentence);
  if (it == cache_.end()) {
    ++misses_;
    it = cache_.emplace(sentence, inner_.decode(sentence)).first;
  }
  return it->second;
}

void IterativeDecodeConfig::validate() const {
  if (!(threshold >= 0)) throw ConfigError("threshold must be >= 0");
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
}

IterativeResult iterative_decode(Corrector& corrector, const std::string& input, const IterativeDecodeConfig& cfg) {
  cfg.validate();
  IterativeResult r;
  r.text = input;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const auto beam = corrector.decode(r.text);
    ++r.iterations;
    const TextHypothesis* identity = nullptr;
    const TextHypothesis* best = nullptr;
    for (const auto& item : beam) {
      if (item.text == r.text) {
        identity = &item;
      } else if (!best || item.cost < best->cost) {
        best = &item;
      }
    }
    if (!best) break;
    const bool accept = !identity || best->cost <= cfg.threshold * identity->cost;
    if (!accept) break;
    r.text = best->text;
    r.accepted.push_back(r.text);
  }
  return r;
}

namespace {

template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& body) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  std::atomic<std::size_t> next{0};
  auto run = [&](unsigned w) {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) body(w, i);
  };
  if (workers == 1) {
    run(0);
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
}

}  // namespace

GridResult grid_search(std::span<const DevSentence> dev, const CorrectorFactory& factory,
                       std::span<const double> thresholds, std::span<const int> max_iters_list, unsigned workers) {
  if (thresholds.empty() || max_iters_list.empty()) throw ConfigError("grid_search: empty grid");
  if (dev.empty()) throw EmptyInputError("grid_search: empty dev set");
  for (int k : max_iters_list)
    if (k < 1) throw ConfigError("grid_search: max_iters must be >= 1");
  const int K = *std::max_element(max_iters_list.begin(), max_iters_list.end());

  // outputs[s][t][k-1]: sentence s at threshold t after at most k iterations.
  std::vector<std::vector<std::vector<std::string>>> outputs(dev.size());
  workers = std::max(1u, workers);
  std::vector<std::unique_ptr<Corrector>> correctors;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, dev.size()); ++w) correctors.push_back(factory());
  parallel_for(dev.size(), workers, [&](unsigned w, std::size_t s) {
    CachingCorrector cached(*correctors[w]);
    auto& per = outputs[s];
    per.resize(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto r = iterative_decode(cached, dev[s].source, {thresholds[t], K});
      per[t].resize(static_cast<std::size_t>(K));
      for (int k = 1; k <= K; ++k) {
        const auto a = std::min<std::size_t>(static_cast<std::size_t>(k), r.accepted.size());
        per[t][static_cast<std::size_t>(k - 1)] = a == 0 ? dev[s].source : r.accepted[a - 1];
      }
    }
  });

  GridResult g;
  for (std::size_t t = 0; t < thresholds.size(); ++t)
    for (int k : max_iters_list) {
      std::vector<eval::ScoredSentence> scored;
      scored.reserve(dev.size());
      for (std::size_t s = 0; s < dev.size(); ++s)
        scored.push_back({split_ws(dev[s].source), split_ws(outputs[s][t][static_cast<std::size_t>(k - 1)]),
                          split_ws(dev[s].reference), dev[s].tag});
      g.cells.push_back({thresholds[t], k, eval::score_sentences(scored, workers)});
      if (g.cells.back().score.f05 > g.cells[g.best].score.f05) g.best = g.cells.size() - 1;
    }
  return g;
}

std::string grid_tsv(const GridResult& grid) {
  std::string out = "threshold\tmax_iters\tP\tR\tF0.5\n";
  char buf[128];
  for (const auto& c : grid.cells) {
    std::snprintf(buf, sizeof buf, "%g\t%d\t%.2f\t%.2f\t%.2f\n", c.threshold, c.max_iters, 100 * c.score.precision,
                  100 * c.score.recall, 100 * c.score.f05);
    out += buf;
  }
  return out;
}

std::string grid_matrix(const GridResult& grid) {
  std::vector<double> ts;
  std::vector<int> ks;
  for (const auto& c : grid.cells) {
    if (std::find(ts.begin(), ts.end(), c.threshold) == ts.end()) ts.push_back(c.threshold);
    if (std::find(ks.begin(), ks.end(), c.max_iters) == ks.end()) ks.push_back(c.max_iters);
  }
  char buf[64];
  std::string out = "threshold";
  for (int k : ks) {
    std::snprintf(buf, sizeof buf, "\titers=%d", k);
    out += buf;
  }
  out += '\n';
  for (double t : ts) {
    std::snprintf(buf, sizeof buf, "%g", t);
    out += buf;
    for (int k : ks)
      for (const auto& c : grid.cells)
        if (c.threshold == t && c.max_iters == k) {
          std::snprintf(buf, sizeof buf, "\t%.2f", 100 * c.score.f05);
          out += buf;
        }
    out += '\n';
  }
  return out;
}

std::vector<std::string> decode_all(std::span<const std::string> inputs, const CorrectorFactory& factory,
                                    const IterativeDecodeConfig& cfg, unsigned workers) {
  cfg.validate();
  std::vector<std::string> out(inputs.size());
  workers = std::max(1u, workers);
  std::vector<std::unique_ptr<Corrector>> correctors;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, inputs.size()); ++w) correctors.push_back(factory());
  parallel_for(inputs.size(), workers,
               [&](unsigned w, std::size_t i) { out[i] = iterative_decode(*correctors[w], inputs[i], cfg).text; });
  return out;
}

}  // namespace gec::decoding
