#include <zlib.h>

#include <cmath>
#include <set>

#include "doctest.h"
#include "gec/common/errors.hpp"
#include "gec/noising/revisions.hpp"
#include "gec/noising/synth.hpp"
#include "test_util.hpp"

using namespace gec;
using namespace gec::noising;

namespace {

NoiseConfig spell(double p) {
  NoiseConfig c;
  c.p_spell = p;
  return c;
}

// Straight re-derivation of the spelling noise on ASCII text from raw draws.
std::string spell_by_hand(const std::string& s, double p, Rng& rng) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(rng.uniform() < p)) {
      out += s[i];
      continue;
    }
    const auto op = rng.below(4);
    if (op == 0) {
      out += static_cast<char>(' ' + rng.below(95));
      out += s[i];
    } else if (op == 2 && i + 1 < s.size()) {
      out += s[i + 1];
      out += s[i];
      ++i;
    } else if (op == 2) {
      out += s[i];
    } else if (op == 3) {
      out += static_cast<char>(' ' + rng.below(95));
    }
  }
  return out;
}

std::string random_ascii(Rng& rng, std::size_t max_len) {
  std::string s(rng.below(max_len + 1), ' ');
  for (auto& c : s) c = static_cast<char>('a' + rng.below(26));
  return s;
}

}  // namespace

TEST_CASE("spelling noise") {
  Rng rng(1);
  CHECK(apply_spelling_noise("hello world", spell(0), rng) == "hello world");
  CHECK(apply_spelling_noise("", spell(0.5), rng).empty());

  // Golden output, checked against the by-hand derivation below.
  Rng g(2024);
  const auto golden = apply_spelling_noise("hello", spell(0.2), g);
  Rng h(2024);
  CHECK(golden == spell_by_hand("hello", 0.2, h));
  CHECK(golden == "hell");

  for (int trial = 0; trial < 2000; ++trial) {
    const auto s = random_ascii(rng, 30);
    const auto seed = rng.next_u64();
    Rng a(seed), b(seed);
    SpellCounts c;
    const auto out = apply_spelling_noise(s, spell(0.1), a, &c);
    REQUIRE(out == spell_by_hand(s, 0.1, b));
    REQUIRE(static_cast<long>(out.size()) - static_cast<long>(s.size()) ==
            static_cast<long>(c.insertions) - static_cast<long>(c.deletions));
    for (char ch : out) REQUIRE((ch >= 0x20 && ch <= 0x7e));
  }

  // The marker is never damaged; multi-byte characters stay whole.
  for (int trial = 0; trial < 200; ++trial) {
    Rng r(trial);
    const auto out = apply_spelling_noise("ab <fill> cd é ü", spell(0.5), r);
    REQUIRE(out.find("<fill>") != std::string::npos);
    REQUIRE(utf8::decode(out).find(U'�') == std::u32string::npos);
  }
  NoiseConfig bad;
  bad.p_spell = 1.5;
  CHECK_THROWS_AS(apply_spelling_noise("x", bad, rng), ConfigError);
}

TEST_CASE("infill noise") {
  NoiseConfig c;
  c.p_infill = 0;
  Rng rng(1);
  CHECK(apply_infill_noise("abcdefghij", c, rng) == "abcdefghij");
  c.p_infill = 1;
  CHECK(apply_infill_noise("", c, rng).empty());
  CHECK(apply_infill_noise("a <fill> b", c, rng) == "a <fill> b");

  Rng g(7);
  const auto golden = apply_infill_noise("abcdefghij", c, g);
  Rng h(7);
  h.uniform();  // the p_infill draw
  const auto len = 1 + h.below(8);
  const auto start = h.below(10 - len + 1);
  CHECK(golden == std::string("abcdefghij").replace(start, len, "<fill>"));
  CHECK(golden == "abcdef<fill>j");

  for (int trial = 0; trial < 2000; ++trial) {
    const auto s = random_ascii(rng, 20);
    const auto out = apply_infill_noise(s, c, rng);
    if (s.empty()) continue;
    const auto m = out.find(kFillMarker);
    REQUIRE(m != std::string::npos);
    const auto prefix = out.substr(0, m), suffix = out.substr(m + kFillMarker.size());
    REQUIRE(s.starts_with(prefix));
    REQUIRE(s.ends_with(suffix));
    const auto removed = s.size() - prefix.size() - suffix.size();
    REQUIRE(removed >= 1);
    REQUIRE(removed <= 8);
  }
}

TEST_CASE("identity downsampling") {
  std::vector<corpus::SentencePair> pairs;
  for (int i = 0; i < 10000; ++i) pairs.push_back(corpus::SentencePair::make({"a"}, {"a"}));
  for (int i = 0; i < 100; ++i) pairs.push_back(corpus::SentencePair::make({"a"}, {"b"}));
  NoiseConfig c;
  Rng rng(5);
  const auto kept = downsample_identity(pairs, c, rng);
  const auto edits = std::count_if(kept.begin(), kept.end(), [](const auto& p) { return !p.is_identity; });
  CHECK(edits == 100);
  const double bound = 3 * std::sqrt(10000 * 0.04 * 0.96);
  CHECK(std::abs(static_cast<double>(kept.size() - 100) - 400.0) <= bound);

  c.identity_keep = 1.0;
  CHECK(downsample_identity(pairs, c, rng).size() == pairs.size());
  const std::vector<corpus::SentencePair> none(pairs.end() - 100, pairs.end());
  c.identity_keep = 0.0;
  CHECK(downsample_identity(none, c, rng).size() == 100);

  Rng a(9), b(9);
  CHECK(downsample_identity(pairs, NoiseConfig{}, a).size() == downsample_identity(pairs, NoiseConfig{}, b).size());
}

TEST_CASE("word corruption") {
  Rng rng(3);
  const Tokens clean = tokenize("She wants to buy an apple because the shop is open .");
  CHECK(corrupt_words(clean, 0.0, rng) == clean);
  std::set<std::string> seen;
  for (int i = 0; i < 500; ++i) {
    std::vector<std::string> kinds;
    const auto out = corrupt_words(clean, 0.5, rng, &kinds);
    seen.insert(kinds.begin(), kinds.end());
    if (kinds.empty()) REQUIRE(out == clean);
  }
  for (const char* k : {"agreement", "article", "drop-article", "drop-to", "preposition", "repeat", "swap"})
    CHECK(seen.contains(k));
}

TEST_CASE("synthetic corpus") {
  const auto clean = generate_clean_sentences(4000, 11);
  CHECK(clean == generate_clean_sentences(4000, 11));
  CHECK(clean != generate_clean_sentences(4000, 12));
  for (const auto& s : clean) REQUIRE(join(tokenize(s)) == s);

  SynthConfig zero;
  zero.p_word = 0;
  zero.noise.p_spell = 0;
  zero.noise.p_infill = 0;
  const auto ident = make_synthetic_corpus(clean, zero);
  CHECK(corpus::compute_stats(ident).error_rate == 0.0);

  const SynthConfig def;
  const auto pairs = make_synthetic_corpus(clean, def);
  const double rate = corpus::compute_stats(pairs).error_rate;
  MESSAGE("default synthetic error rate " << rate);
  CHECK(rate >= 0.10);
  CHECK(rate <= 0.15);
  for (std::size_t i = 0; i < pairs.size(); ++i) REQUIRE(join(pairs[i].target) == clean[i]);

  const auto again = make_synthetic_corpus(clean, def, "synth", 3);
  REQUIRE(again.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) REQUIRE(again[i].source == pairs[i].source);
}

TEST_CASE("revision pairs") {
  RevisionConfig cfg;
  auto snaps = [](std::vector<std::string> texts) {
    std::vector<Snapshot> out;
    for (auto& t : texts) out.push_back({t, ""});
    return out;
  };
  ExtractCounts c;
  auto same = extract_revision_pairs(snaps({"the cat sat", "the cat sat"}), cfg, "wiki", &c);
  REQUIRE(same.size() == 1);
  CHECK(same[0].is_identity);
  CHECK(c.edit_pairs == 0);

  auto one = extract_revision_pairs(snaps({"he go home now", "he goes home now"}), cfg);
  REQUIRE(one.size() == 1);
  CHECK(join(one[0].source) == "he go home now");
  CHECK(join(one[0].target) == "he goes home now");

  // Context stops at sentence ends; untouched sentences become identity pairs.
  auto multi = extract_revision_pairs(
      snaps({"It rains . He go home now . She is here .", "It rains . He goes home now . She is here ."}), cfg);
  REQUIRE(multi.size() == 3);
  CHECK(join(multi[0].source) == "It rains .");
  CHECK(join(multi[1].source) == "He go home now .");
  CHECK(join(multi[1].target) == "He goes home now .");
  CHECK(join(multi[2].source) == "She is here .");

  // Context is capped.
  cfg.context_tokens = 2;
  auto capped = extract_revision_pairs(snaps({"a b c d e x f g h i", "a b c d e y f g h i"}), cfg);
  REQUIRE(capped.size() == 1);
  CHECK(join(capped[0].source) == "d e x f g");
  cfg.context_tokens = 10;

  std::vector<std::string> ten;
  for (int i = 0; i < 10; ++i) ten.push_back("v" + std::to_string(i));
  cfg.keep_every = 2;
  c = {};
  extract_revision_pairs(snaps(ten), cfg, "wiki", &c);
  CHECK(c.alignments == 4);
  cfg.keep_every = 1;

  CHECK(extract_revision_pairs(snaps({"only one"}), cfg).empty());

  cfg.max_tokens = 3;
  c = {};
  CHECK(extract_revision_pairs(snaps({"a b c d e", "a b x d e"}), cfg, "wiki", &c).empty());
  CHECK(c.dropped_long == 1);
}

TEST_CASE("XML dumps and snapshot directories") {
  const std::string xml = R"(<mediawiki>
  <page><title>Cats &amp; dogs</title><ns>0</ns><id>12</id>
    <revision><id>1</id><timestamp>2001-01-02T00:00:00Z</timestamp>
      <text xml:space="preserve">He go home now . {{cite|x}} [[Home|home]] is '''big''' .</text></revision>
    <revision><id>2</id><timestamp>2001-01-03T00:00:00Z</timestamp>
      <text xml:space="preserve">He goes home now . [[Home|home]] is '''big''' .&lt;ref&gt;r&lt;/ref&gt;</text></revision>
  </page>
  <page><title>Empty</title><id>13</id>
    <revision><id>3</id><timestamp>2001-01-01T00:00:00Z</timestamp><text /></revision>
  </page>
</mediawiki>)";
  const auto pages = parse_xml_dump(xml);
  REQUIRE(pages.size() == 2);
  CHECK(pages[0].title == "Cats & dogs");
  CHECK(pages[0].page_id == "12");
  REQUIRE(pages[0].snapshots.size() == 2);
  CHECK(join(tokenize(pages[0].snapshots[1].text)) == "He goes home now . home is big .");
  CHECK(pages[1].snapshots.empty());

  test::TempDir dir;
  const auto gz = dir.path() / "dump.xml.gz";
  gzFile f = gzopen(gz.string().c_str(), "wb");
  gzwrite(f, xml.data(), static_cast<unsigned>(xml.size()));
  gzclose(f);
  CHECK(read_xml_dump(gz).size() == 2);
  test::write_file(dir.path() / "plain.xml", xml);
  CHECK(read_xml_dump(dir.path() / "plain.xml")[0].snapshots.size() == 2);
  CHECK_THROWS_AS(read_xml_dump(dir.path() / "missing.xml"), IoError);

  std::filesystem::create_directories(dir.path() / "snaps" / "p1");
  test::write_file(dir.path() / "snaps" / "p1" / "001.txt", "he go home now");
  test::write_file(dir.path() / "snaps" / "p1" / "002.txt", "he goes home now");
  const auto sd = read_snapshot_dirs(dir.path() / "snaps");
  REQUIRE(sd.size() == 1);
  CHECK(sd[0].snapshots[1].text == "he goes home now");

  RevisionConfig cfg;
  cfg.noise.identity_keep = 1.0;
  MiningReport rep;
  const auto mined = mine_pages(pages, cfg, 1, &rep);
  CHECK(rep.pages == 2);
  CHECK(rep.extract.edit_pairs == 1);
  CHECK(rep.pairs == mined.size());
  CHECK(to_json(rep)["pages"] == 2);
}

TEST_CASE("page mining does not depend on the worker count") {
  std::vector<PageHistory> pages;
  const auto clean = generate_clean_sentences(300, 4);
  SynthConfig sc;
  sc.p_word = 0.3;
  const auto noisy = make_synthetic_corpus(clean, sc);
  for (int p = 0; p < 30; ++p) {
    PageHistory h;
    h.page_id = "page" + std::to_string(p);
    std::string older, newer;
    for (int s = 0; s < 10; ++s) {
      older += join(noisy[static_cast<std::size_t>(p * 10 + s)].source) + " ";
      newer += clean[static_cast<std::size_t>(p * 10 + s)] + " ";
    }
    h.snapshots = {{older, "1"}, {newer, "2"}};
    pages.push_back(h);
  }
  RevisionConfig cfg;
  cfg.noise.p_spell = 0.01;
  const auto a = mine_pages(pages, cfg, 1);
  const auto b = mine_pages(pages, cfg, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE((a[i].source == b[i].source && a[i].target == b[i].target));
  CHECK(!a.empty());
}
