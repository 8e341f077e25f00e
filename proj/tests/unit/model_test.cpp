#include <cmath>
#include <set>

#include "doctest.h"
#include "gec/common/errors.hpp"
#include "gec/model/transformer.hpp"
#include "gradcheck.hpp"

using namespace gec;
using namespace gec::model;

namespace {

ModelConfig tiny() { return ModelConfig::preset("tiny"); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.source_word_dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.mle_weight = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nlohmann::json j = ModelConfig::preset("desk");
  CHECK(j.get<ModelConfig>().d_model == 128);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
}

TEST_CASE("forward rows are normalized log-distributions") {
  const auto cfg = tiny();
  Transformer<float> model(cfg);
  const auto params = init_params<float>(cfg, 1);
  const auto batch = test::random_batch(cfg.vocab_size, 3, 4);
  for (const auto& ex : batch) {
    const auto lp = model.log_probs(params, ex, Mode::Eval, nullptr);
    CHECK(lp.rows() == static_cast<Eigen::Index>(ex.target.size() + 1));
    CHECK(lp.cols() == cfg.vocab_size);
    for (Eigen::Index r = 0; r < lp.rows(); ++r) CHECK(std::abs(lp.row(r).array().exp().sum() - 1.0f) < 1e-5f);
  }
}

TEST_CASE("eval mode is deterministic; train mode follows the seed") {
  auto cfg = tiny();
  cfg.source_word_dropout = 0.3;
  cfg.internal_dropout = 0.1;
  Transformer<float> model(cfg);
  const auto params = init_params<float>(cfg, 2);
  const auto ex = test::random_batch(cfg.vocab_size, 1, 5).front();
  CHECK(model.log_probs(params, ex, Mode::Eval, nullptr) == model.log_probs(params, ex, Mode::Eval, nullptr));
  Rng a(7), b(7);
  CHECK(model.log_probs(params, ex, Mode::Train, &a) == model.log_probs(params, ex, Mode::Train, &b));
  CHECK_THROWS_AS(model.log_probs(params, ex, Mode::Train, nullptr), ConfigError);
}

TEST_CASE("untrained loss is close to the uniform baseline") {
  ModelConfig cfg;
  cfg.vocab_size = 1000;
  Transformer<float> model(cfg);
  const auto params = init_params<float>(cfg, 3);
  const auto batch = test::random_batch(cfg.vocab_size, 16, 6);
  const auto r = model.run(params, batch, Mode::Eval, nullptr, nullptr);
  const double per_token = r.nll / static_cast<double>(r.tokens);
  // Logits start with variance ~1/3, adding about 1/6 nat over ln(V).
  CHECK(std::abs(per_token - std::log(1000.0)) < 0.1 * std::log(1000.0));
}

TEST_CASE("ids outside the vocabulary are rejected") {
  const auto cfg = tiny();
  Transformer<float> model(cfg);
  const auto params = init_params<float>(cfg, 1);
  Example ex;
  ex.source = {5, cfg.vocab_size};
  ex.target = {6};
  CHECK_THROWS_AS(model.log_probs(params, ex, Mode::Eval, nullptr), RangeError);
}

TEST_CASE("word_dropout") {
  Matrix<float> x = Matrix<float>::Constant(6, 4, 2.0f);
  const std::vector<int> words{0, 0, 1, 2, 2, 2};
  Rng rng(1);
  CHECK(word_dropout(x, words, 0.0, rng, Mode::Train) == x);
  CHECK(word_dropout(x, words, 0.9, rng, Mode::Eval) == x);
  CHECK(word_dropout(x, words, 1.0, rng, Mode::Train).isZero());

  // Rows of one word are zeroed together and survivors keep their values.
  for (int trial = 0; trial < 200; ++trial) {
    const auto y = word_dropout(x, words, 0.5, rng, Mode::Train);
    for (std::size_t r = 1; r < words.size(); ++r)
      if (words[r] == words[r - 1]) REQUIRE(y.row(static_cast<Eigen::Index>(r)).isZero() == y.row(static_cast<Eigen::Index>(r - 1)).isZero());
    for (Eigen::Index r = 0; r < y.rows(); ++r) REQUIRE((y.row(r).isZero() || y.row(r) == x.row(r)));
  }
}

TEST_CASE("word_dropout zeroes p of the words") {
  const std::size_t n = 100000;
  std::vector<int> words(n);
  for (std::size_t i = 0; i < n; ++i) words[i] = static_cast<int>(i);
  Rng rng(42);
  const auto keep = word_keep_mask(words, 0.2, rng, Mode::Train);
  const double dropped = static_cast<double>(std::count(keep.begin(), keep.end(), 0)) / static_cast<double>(n);
  // 3 sigma of Binomial(1e5, 0.2) / 1e5 is 0.0038.
  CHECK(std::abs(dropped - 0.2) < 0.004);
}

TEST_CASE("target_weights") {
  const Tokens a{"a", "b"}, b{"a", "x", "b"};
  CHECK(target_weights(corpus::align(a, b), 3, 3.0).lambda == std::vector<double>{1, 3, 1});
  CHECK(target_weights(corpus::align(a, a), 2, 3.0).lambda == std::vector<double>{1, 1});
  CHECK(target_weights(corpus::align(a, b), 3, 1.0).lambda == std::vector<double>{1, 1, 1});
  // Deleted source tokens leave no weight.
  CHECK(target_weights(corpus::align(b, a), 2, 3.0).lambda == std::vector<double>{1, 1});
  CHECK_THROWS_AS(target_weights(corpus::align(a, b), 2, 3.0), RangeError);

  const subword::Ids src{7, 8}, tgt{7, 9, 8};
  CHECK(target_weights(src, tgt, 3.0).lambda == std::vector<double>{1, 3, 1, 1});
}

TEST_CASE("edited_mle_loss") {
  const int V = 7;
  const Matrix<double> uniform = Matrix<double>::Constant(3, V, -std::log(double(V)));
  const subword::Ids ids{1, 2, 3};
  const auto ones = edited_mle_loss(uniform, ids, LossWeights{{1, 1, 1}});
  CHECK(ones.sum == doctest::Approx(3 * std::log(double(V))));
  CHECK(ones.per_token == doctest::Approx(std::log(double(V))));
  CHECK(edited_mle_loss(uniform, ids, LossWeights{{1, 3, 1}}).sum == doctest::Approx(5 * std::log(double(V))));

  // Linearity in λ on a pure-insertion target.
  const double l2 = edited_mle_loss(uniform, ids, LossWeights{{2, 2, 2}}).sum;
  const double l4 = edited_mle_loss(uniform, ids, LossWeights{{4, 4, 4}}).sum;
  CHECK(l4 == doctest::Approx(2 * l2));

  Matrix<double> bad = uniform;
  bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(edited_mle_loss(bad, ids, LossWeights{{1, 1, 1}}), NumericError);
  CHECK_THROWS_AS(edited_mle_loss(uniform, ids, LossWeights{{1, 1}}), RangeError);
}

TEST_CASE("edited MLE with λ = 1 equals the model's plain NLL; larger Λ raises the loss") {
  const auto cfg = tiny();
  Transformer<double> model(cfg);
  const auto params = test::random_params(cfg, 8);
  auto batch = test::random_batch(cfg.vocab_size, 4, 9, 1.0);
  const auto r = model.run(params, batch, Mode::Eval, nullptr, nullptr);
  CHECK(std::abs(r.loss - r.nll) < 1e-6);

  double sum = 0;
  for (const auto& ex : batch) {
    const auto lp = model.log_probs(params, ex, Mode::Eval, nullptr);
    subword::Ids out = ex.target;
    out.push_back(subword::kEos);
    sum += edited_mle_loss(lp, out, LossWeights{ex.weights}).sum;
  }
  CHECK(std::abs(sum - r.loss) < 1e-6);

  double prev = r.loss;
  for (double lambda : {2.0, 3.0, 5.0}) {
    const auto b = test::random_batch(cfg.vocab_size, 4, 9, lambda);
    const double l = model.run(params, b, Mode::Eval, nullptr, nullptr).loss;
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("analytic gradients match central differences") {
  ModelConfig cfg = tiny();
  SUBCASE("no dropout, lambda 1") {
    const auto batch = test::random_batch(cfg.vocab_size, 2, 10, 1.0);
    const auto r = test::gradient_check(cfg, batch, Mode::Eval, 100, 300);
    CHECK(r.pass_fraction() >= 0.99);
  }
  SUBCASE("no dropout, lambda 3") {
    const auto batch = test::random_batch(cfg.vocab_size, 2, 11, 3.0);
    const auto r = test::gradient_check(cfg, batch, Mode::Eval, 101, 300);
    CHECK(r.pass_fraction() >= 0.99);
  }
  SUBCASE("word and internal dropout active") {
    cfg.source_word_dropout = 0.3;
    cfg.target_word_dropout = 0.2;
    cfg.internal_dropout = 0.1;
    const auto batch = test::random_batch(cfg.vocab_size, 2, 12, 3.0);
    const auto r = test::gradient_check(cfg, batch, Mode::Train, 102, 300);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("zero loss weights give zero gradients; unused embedding rows get none") {
  const auto cfg = tiny();
  Transformer<double> model(cfg);
  const auto params = test::random_params(cfg, 13);
  auto batch = test::random_batch(cfg.vocab_size, 2, 14, 1.0, 10);
  for (auto& ex : batch) std::fill(ex.weights.begin(), ex.weights.end(), 0.0);
  auto grads = params.zeros_like();
  model.run(params, batch, Mode::Eval, nullptr, &grads);
  for (const auto& t : grads)
    for (double g : t.data) REQUIRE(g == 0.0);

  batch = test::random_batch(cfg.vocab_size, 2, 14, 1.0, 10);
  grads.set_zero();
  model.run(params, batch, Mode::Eval, nullptr, &grads);
  std::set<int> used{subword::kBos, subword::kEos};
  for (const auto& ex : batch) {
    used.insert(ex.source.begin(), ex.source.end());
    used.insert(ex.target.begin(), ex.target.end());
  }
  const auto E = grads.at("embedding").mat();
  for (int id = 0; id < cfg.vocab_size; ++id)
    if (!used.contains(id)) REQUIRE(E.row(id).isZero(0.0));
}

TEST_CASE("incremental decoding matches the full forward pass") {
  auto cfg = tiny();
  Transformer<double> model(cfg);
  const auto params = test::random_params(cfg, 15);
  const auto ex = test::random_batch(cfg.vocab_size, 1, 16).front();
  const auto full = model.log_probs(params, ex, Mode::Eval, nullptr);
  const auto enc = model.encode(params, ex.source);
  auto state = model.initial_state();
  subword::Ids inputs{subword::kBos};
  inputs.insert(inputs.end(), ex.target.begin(), ex.target.end());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto* s = &state;
    const auto step = model.decode_step(params, enc, std::span<decltype(s) const>(&s, 1), std::span(&inputs[t], 1));
    REQUIRE((step.row(0) - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-10);
  }
}
