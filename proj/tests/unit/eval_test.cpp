#include "doctest.h"
#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"
#include "gec/eval/eval.hpp"

using namespace gec;
using namespace gec::eval;

namespace {

Tokens toks(std::string_view s) { return split_ws(s); }

Tokens random_tokens(Rng& rng, std::size_t max_len) {
  static const char* alphabet[] = {"a", "b", "c", "d", "e"};
  Tokens t(rng.below(max_len + 1));
  for (auto& x : t) x = alphabet[rng.below(5)];
  return t;
}

}  // namespace

TEST_CASE("extract_edits examples") {
  CHECK(extract_edits(toks("a b c"), toks("a b c")).empty());
  CHECK(extract_edits(toks("a b c"), toks("a x y c")) == std::vector<Edit>{{1, 2, toks("x y")}});
  CHECK(extract_edits(toks("a b"), toks("b")) == std::vector<Edit>{{0, 1, {}}});
  CHECK(extract_edits(toks("a b"), toks("a b c")) == std::vector<Edit>{{2, 2, toks("c")}});
  CHECK(extract_edits({}, toks("x")) == std::vector<Edit>{{0, 0, toks("x")}});
  CHECK(extract_edits(toks("a b c d"), toks("x b c y")) == std::vector<Edit>{{0, 1, toks("x")}, {3, 4, toks("y")}});
}

TEST_CASE("apply_edits inverts extract_edits") {
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const auto src = random_tokens(rng, 8), hyp = random_tokens(rng, 8);
    const auto edits = extract_edits(src, hyp);
    REQUIRE(apply_edits(src, edits) == hyp);
    // Merged runs never touch each other.
    for (std::size_t k = 1; k < edits.size(); ++k) REQUIRE(edits[k].start > edits[k - 1].end);
  }
  CHECK_THROWS_AS(apply_edits(toks("a b"), std::vector<Edit>{{1, 2, {}}, {0, 1, {}}}), RangeError);
  CHECK_THROWS_AS(apply_edits(toks("a b"), std::vector<Edit>{{1, 3, {}}}), RangeError);
}

TEST_CASE("F0.5 reproduces published rows") {
  CHECK(std::abs(100 * f_beta(0.6733, 0.4037) - 59.39) <= 0.02);
  CHECK(std::abs(100 * f_beta(0.6817, 0.5325) - 64.55) <= 0.02);
  CHECK(std::abs(100 * f_beta(0.5047, 0.2938) - 44.13) <= 0.02);
  CHECK(f_beta(0, 0) == 0.0);
  CHECK(f_beta(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("score counts") {
  const Tokens src = toks("a b c d");
  const std::vector<Edit> ref{{1, 2, toks("x")}, {3, 4, {}}};
  const std::vector<Edit> hyp{{1, 2, toks("x")}, {2, 2, toks("z")}};
  const auto c = count_edits(hyp, ref);
  CHECK(c == Counts{1, 1, 1});

  const std::vector<std::vector<Edit>> H{hyp, {}}, R{ref, {}};
  const auto r = score(H, R);
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(0.5));

  // No edits on either side: nothing is counted.
  const std::vector<std::vector<Edit>> empty(3);
  const auto e = score(empty, empty);
  CHECK(e.counts == Counts{});
  CHECK(e.precision == 1.0);
  CHECK(e.recall == 1.0);

  // A system that changes nothing has P = 1 and R = 0.
  const std::vector<std::vector<Edit>> none{{}};
  const std::vector<std::vector<Edit>> one{ref};
  const auto n = score(none, one);
  CHECK(n.precision == 1.0);
  CHECK(n.recall == 0.0);
  CHECK(n.f05 == 0.0);
}

TEST_CASE("score is invariant to sentence order; reference as hypothesis is perfect") {
  Rng rng(3);
  std::vector<ScoredSentence> s;
  for (int i = 0; i < 200; ++i) {
    ScoredSentence x;
    x.source = random_tokens(rng, 7);
    x.hypothesis = random_tokens(rng, 7);
    x.reference = random_tokens(rng, 7);
    s.push_back(x);
  }
  const auto a = score_sentences(s);
  auto shuffled = s;
  rng.shuffle(shuffled.begin(), shuffled.end());
  CHECK(score_sentences(shuffled, 4).counts == a.counts);

  for (auto& x : s) x.hypothesis = x.reference;
  const auto p = score_sentences(s);
  CHECK(p.counts.fp == 0);
  CHECK(p.counts.fn == 0);
  CHECK(p.f05 == 1.0);
}

TEST_CASE("dev_combined") {
  std::vector<ScoredSentence> s{
      {toks("a b"), toks("a x"), toks("a x"), "A"},
      {toks("a b"), toks("a y"), toks("a x"), "B"},
      {toks("c"), toks("c"), toks("d"), "B"},
  };
  const auto r = dev_combined(s, {"A", "B", "N"});
  CHECK(r.subsets.at("A").counts == Counts{1, 0, 0});
  CHECK(r.subsets.at("B").counts == Counts{0, 1, 2});
  CHECK(r.combined.counts == Counts{1, 1, 2});
  CHECK_THROWS_AS(dev_combined(s, {"A"}), ConfigError);

  const std::vector<ScoredSentence> single(s.begin(), s.begin() + 1);
  const auto one = dev_combined(single);
  CHECK(one.combined.counts == one.subsets.at("A").counts);

  const auto j = to_json(r);
  CHECK(j["combined"]["P"] == 50.0);
  CHECK(j["combined"]["tp"] == 1);
  CHECK(format_table(r).find("combined") != std::string::npos);
}
