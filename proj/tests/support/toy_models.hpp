#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gec/common/rng.hpp"
#include "gec/decoding/beam.hpp"
#include "gec/decoding/iterative.hpp"

namespace test {

/// Small tanh RNN with random weights. Token 0 is EOS.
class ToyRnn final : public gec::decoding::StepModel {
 public:
  ToyRnn(int vocab, int hidden, std::uint64_t seed, double scale = 2.0) : V_(vocab), H_(hidden) {
    gec::Rng rng(seed);
    auto fill = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
      m.resize(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * (2 * rng.uniform() - 1);
    };
    fill(W_, H_, H_);
    fill(U_, H_, V_ + 1);  // last column embeds the start symbol
    fill(O_, V_, H_);
  }

  int vocab_size() const override { return V_; }
  int eos() const override { return 0; }

  Eigen::MatrixXd start() override {
    states_.assign(1, advance(Eigen::VectorXd::Zero(H_), V_));
    return rows();
  }

  Eigen::MatrixXd extend(std::span<const int> parents, std::span<const int> tokens) override {
    std::vector<Eigen::VectorXd> next;
    for (std::size_t i = 0; i < parents.size(); ++i)
      next.push_back(advance(states_[static_cast<std::size_t>(parents[i])], tokens[i]));
    states_ = std::move(next);
    return rows();
  }

  /// Sum of log-probabilities of `tokens` (EOS included if present).
  double score(const std::vector<int>& tokens) {
    Eigen::VectorXd h = advance(Eigen::VectorXd::Zero(H_), V_);
    double total = 0;
    for (int t : tokens) {
      total += log_softmax(h)(t);
      h = advance(h, t);
    }
    return total;
  }

 private:
  Eigen::VectorXd advance(const Eigen::VectorXd& h, int token) const {
    return (W_ * h + U_.col(token)).array().tanh().matrix();
  }
  Eigen::VectorXd log_softmax(const Eigen::VectorXd& h) const {
    Eigen::VectorXd z = O_ * h;
    const double m = z.maxCoeff();
    return z.array() - (m + std::log((z.array() - m).exp().sum()));
  }
  Eigen::MatrixXd rows() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(states_.size()), V_);
    for (std::size_t i = 0; i < states_.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = log_softmax(states_[i]).transpose();
    return out;
  }

  int V_, H_;
  Eigen::MatrixXd W_, U_, O_;
  std::vector<Eigen::VectorXd> states_;
};

struct BruteForceBest {
  std::vector<int> tokens;  // without EOS
  double cost;
  std::size_t enumerated;
};

/// Enumerates every sequence of length 1..max_len over the vocabulary and
/// keeps those whose only EOS is the final symbol.
inline BruteForceBest brute_force_best(ToyRnn& model, int max_len, double alpha) {
  const int V = model.vocab_size();
  BruteForceBest best{{}, INFINITY, 0};
  std::vector<int> seq;
  for (int len = 1; len <= max_len; ++len) {
    seq.assign(static_cast<std::size_t>(len), 0);
    for (;;) {
      ++best.enumerated;
      const bool valid = seq.back() == 0 && std::count(seq.begin(), seq.end(), 0) == 1;
      if (valid) {
        const double cost = gec::decoding::hypothesis_cost(model.score(seq), seq.size(), alpha);
        std::vector<int> body(seq.begin(), seq.end() - 1);
        if (cost < best.cost || (cost == best.cost && body < best.tokens)) best = {body, cost, best.enumerated};
      }
      int i = len - 1;
      while (i >= 0 && ++seq[static_cast<std::size_t>(i)] == V) seq[static_cast<std::size_t>(i--)] = 0;
      if (i < 0) break;
    }
  }
  return best;
}

/// Returns a fixed beam per input text.
class ScriptedCorrector final : public gec::decoding::Corrector {
 public:
  std::map<std::string, std::vector<gec::decoding::TextHypothesis>> script;
  std::vector<std::string> calls;

  std::vector<gec::decoding::TextHypothesis> decode(const std::string& sentence) override {
    calls.push_back(sentence);
    auto it = script.find(sentence);
    if (it == script.end()) return {{sentence, 1.0}};
    return it->second;
  }
};

}  // namespace test
