#include "gec/decoding/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gec/common/errors.hpp"

namespace gec::decoding {

void BeamConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (!(alpha >= 0)) throw ConfigError("alpha must be >= 0");
  if (max_output_len < 0) throw ConfigError("max_output_len must be >= 0");
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

double hypothesis_cost(double raw_logprob, std::size_t length, double alpha) {
  return -raw_logprob / length_penalty(length, alpha);
}

namespace {

struct Prefix {
  std::vector<int> tokens;
  double raw = 0.0;
};

struct Candidate {
  double raw;
  int parent;
  int token;
};

bool by_cost(const Hypothesis& a, const Hypothesis& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(StepModel& model, const BeamConfig& cfg, int max_len) {
  cfg.validate();
  if (max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");
  const auto B = static_cast<std::size_t>(cfg.beam_size);
  const int V = model.vocab_size();
  const int eos = model.eos();

  std::vector<Prefix> alive(1);
  std::vector<Hypothesis> finished;
  Eigen::MatrixXd lp = model.start();

  auto before = [&](const Candidate& a, const Candidate& b) {
    if (a.raw != b.raw) return a.raw > b.raw;
    const auto& ta = alive[static_cast<std::size_t>(a.parent)].tokens;
    const auto& tb = alive[static_cast<std::size_t>(b.parent)].tokens;
    // Lexicographic on parent tokens + token; equal lengths at a given step.
    if (ta != tb) return ta < tb;
    return a.token < b.token;
  };

  for (int t = 0; t < max_len; ++t) {
    std::vector<Candidate> cands;
    cands.reserve(alive.size() * static_cast<std::size_t>(V));
    for (std::size_t i = 0; i < alive.size(); ++i)
      for (int v = 0; v < V; ++v) {
        const double s = lp(static_cast<Eigen::Index>(i), v);
        if (std::isfinite(s)) cands.push_back({alive[i].raw + s, static_cast<int>(i), v});
      }
    const std::size_t keep = std::min(B, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);
    cands.resize(keep);

    std::vector<Prefix> next;
    std::vector<int> parents, tokens;
    for (const auto& c : cands) {
      auto toks = alive[static_cast<std::size_t>(c.parent)].tokens;
      if (c.token == eos) {
        const auto len = toks.size() + 1;
        finished.push_back({std::move(toks), c.raw, hypothesis_cost(c.raw, len, cfg.alpha), true});
        continue;
      }
      if (t + 1 == max_len) continue;  // no room left for EOS
      toks.push_back(c.token);
      next.push_back({std::move(toks), c.raw});
      parents.push_back(c.parent);
      tokens.push_back(c.token);
    }
    std::sort(finished.begin(), finished.end(), by_cost);
    if (finished.size() > B) finished.resize(B);
    if (next.empty()) {
      if (finished.empty()) {
        // Best prefix that could not finish.
        Hypothesis best;
        bool have = false;
        for (const auto& c : cands) {
          if (c.token == eos) continue;
          auto toks = alive[static_cast<std::size_t>(c.parent)].tokens;
          toks.push_back(c.token);
          Hypothesis h{std::move(toks), c.raw, 0.0, false};
          h.cost = hypothesis_cost(h.raw_logprob, h.tokens.size(), cfg.alpha);
          if (!have || by_cost(h, best)) best = std::move(h), have = true;
        }
        if (have) return {best};
      }
      break;
    }
    if (finished.size() == B) {
      // No continuation can beat -raw / lp(max_len) and raw only decreases.
      const double bound = hypothesis_cost(next.front().raw, static_cast<std::size_t>(max_len), cfg.alpha);
      if (bound >= finished.back().cost) break;
    }
    alive = std::move(next);
    lp = model.extend(parents, tokens);
  }
  return finished;
}

Hypothesis greedy(StepModel& model, double alpha, int max_len) {
  if (max_len < 1) throw ConfigError("greedy: max_len must be >= 1");
  Eigen::MatrixXd lp = model.start();
  Hypothesis h;
  const int eos = model.eos();
  for (int t = 0; t < max_len; ++t) {
    int best = -1;
    for (int v = 0; v < lp.cols(); ++v)
      if (std::isfinite(lp(0, v)) && (best < 0 || lp(0, v) > lp(0, best))) best = v;
    if (best < 0) break;
    h.raw_logprob += lp(0, best);
    if (best == eos) {
      h.finished = true;
      h.cost = hypothesis_cost(h.raw_logprob, h.tokens.size() + 1, alpha);
      return h;
    }
    h.tokens.push_back(best);
    if (t + 1 == max_len) break;
    const int parent = 0;
    lp = model.extend({&parent, 1}, {&best, 1});
  }
  h.finished = false;
  h.cost = hypothesis_cost(h.raw_logprob, h.tokens.size(), alpha);
  return h;
}

template <typename T>
TransformerStepper<T>::TransformerStepper(const model::Transformer<T>& model, const model::ParamSet<T>& params,
                                          std::span<const subword::Id> source)
    : model_(model), params_(params), enc_(model.encode(params, source)) {}

template <typename T>
Eigen::MatrixXd TransformerStepper<T>::step(std::span<const subword::Id> tokens) {
  std::vector<typename model::Transformer<T>::DecoderState*> ptrs;
  for (auto& s : states_) ptrs.push_back(&s);
  Eigen::MatrixXd lp = model_.decode_step(params_, enc_, ptrs, tokens).template cast<double>();
  const double ninf = -std::numeric_limits<double>::infinity();
  lp.col(subword::kPad).setConstant(ninf);
  lp.col(subword::kBos).setConstant(ninf);
  lp.col(subword::kFill).setConstant(ninf);
  return lp;
}

template <typename T>
Eigen::MatrixXd TransformerStepper<T>::start() {
  states_.assign(1, model_.initial_state());
  const subword::Id bos = subword::kBos;
  return step({&bos, 1});
}

template <typename T>
Eigen::MatrixXd TransformerStepper<T>::extend(std::span<const int> parents, std::span<const int> tokens) {
  std::vector<typename model::Transformer<T>::DecoderState> next;
  next.reserve(parents.size());
  for (int p : parents) next.push_back(states_[static_cast<std::size_t>(p)]);
  states_ = std::move(next);
  return step(tokens);
}

template class TransformerStepper<float>;
template class TransformerStepper<double>;

}  // namespace gec::decoding
