#include "gec/noising/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <thread>
#include <unordered_set>

#include "gec/common/errors.hpp"

namespace gec::noising {

void SynthConfig::validate() const {
  noise.validate();
  if (!(p_word >= 0 && p_word <= 1)) throw ConfigError("p_word must be in [0, 1]");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = c.noise;
  j["p_word"] = c.p_word;
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.noise = j.get<NoiseConfig>();
  c.p_word = j.value("p_word", SynthConfig{}.p_word);
}

namespace {

using Words = std::vector<std::string_view>;

struct Verb {
  std::string_view base, third, past;
};

// Transitive verbs.
const std::vector<Verb> kVerbs = {
    {"like", "likes", "liked"},     {"read", "reads", "read"},       {"buy", "buys", "bought"},
    {"write", "writes", "wrote"},   {"visit", "visits", "visited"},  {"cook", "cooks", "cooked"},
    {"watch", "watches", "watched"}, {"need", "needs", "needed"},    {"clean", "cleans", "cleaned"},
    {"open", "opens", "opened"},    {"find", "finds", "found"},      {"bring", "brings", "brought"},
    {"use", "uses", "used"},        {"see", "sees", "saw"},          {"take", "takes", "took"},
    {"make", "makes", "made"},      {"sell", "sells", "sold"},       {"carry", "carries", "carried"},
    {"describe", "describes", "described"}, {"remember", "remembers", "remembered"},
};

// Verbs with a fixed preposition and matching objects.
struct PrepVerb {
  Verb v;
  std::string_view prep;
  Words objects;
};
const std::vector<PrepVerb> kPrepVerbs = {
    {{"listen", "listens", "listened"}, "to", {"music", "the radio", "the teacher", "the news"}},
    {{"wait", "waits", "waited"}, "for", {"the bus", "my friend", "the results", "an answer"}},
    {{"look", "looks", "looked"}, "for", {"my keys", "a job", "a new flat", "the manager"}},
    {{"depend", "depends", "depended"}, "on", {"the weather", "the price", "our parents"}},
    {{"arrive", "arrives", "arrived"}, "at", {"the station", "the airport", "the hotel", "school"}},
    {{"talk", "talks", "talked"}, "about", {"the problem", "the weather", "the future", "the film"}},
    {{"agree", "agrees", "agreed"}, "with", {"my parents", "the decision", "the teacher", "you"}},
    {{"think", "thinks", "thought"}, "about", {"the future", "the holiday", "the exam", "her family"}},
    {{"belong", "belongs", "belonged"}, "to", {"my brother", "the school", "an old friend"}},
    {{"pay", "pays", "paid"}, "for", {"the tickets", "the meal", "the books", "an expensive course"}},
    {{"laugh", "laughs", "laughed"}, "at", {"the joke", "the clown", "the story"}},
    {{"care", "cares", "cared"}, "about", {"the environment", "the animals", "other people"}},
};

const std::vector<Verb> kToVerbs = {
    {"want", "wants", "wanted"}, {"need", "needs", "needed"}, {"plan", "plans", "planned"},
    {"try", "tries", "tried"},   {"decide", "decides", "decided"}, {"hope", "hopes", "hoped"},
};

const Words kSingular = {"the teacher", "my brother", "my sister",  "the doctor",  "our neighbour", "the manager",
                         "this student", "my mother", "my father", "the old man", "the little girl", "he",
                         "she",          "everyone",  "the company", "the government", "the city", "my best friend"};
const Words kPlural = {"the teachers", "my parents", "the children", "our neighbours", "these students", "many people",
                       "the workers",  "we",         "they",         "my classmates",  "the tourists",   "my friends"};

struct Noun {
  std::string_view sg, pl;
};
const std::vector<Noun> kNouns = {
    {"book", "books"},     {"apple", "apples"},   {"house", "houses"},     {"car", "cars"},
    {"letter", "letters"}, {"umbrella", "umbrellas"}, {"egg", "eggs"},     {"idea", "ideas"},
    {"orange", "oranges"}, {"computer", "computers"}, {"question", "questions"}, {"answer", "answers"},
    {"island", "islands"}, {"email", "emails"},   {"hour", "hours"},       {"uniform", "uniforms"},
    {"animal", "animals"}, {"garden", "gardens"}, {"story", "stories"},    {"office", "offices"},
    {"university", "universities"}, {"present", "presents"}, {"picture", "pictures"}, {"article", "articles"},
};
const Words kAdjectives = {"old",   "new",    "big",      "small",  "interesting", "expensive", "cheap",
                           "beautiful", "important", "easy", "difficult", "useful", "honest", "unusual", "European"};
const Words kPresentAdverbials = {"every day",   "every morning", "on Sundays", "at the weekend", "in the evening",
                                  "twice a week", "at school",    "at home",    "in the park",    "after work"};
const Words kPastAdverbials = {"yesterday", "last week", "last year", "two days ago", "last night", "in 2010"};
const Words kPredicates = {"happy", "tired", "busy", "ready", "late", "hungry", "right", "interested in the project",
                           "afraid of dogs", "good at math", "responsible for the project", "at home", "in the garden"};
const Words kPlaces = {"in the kitchen", "on the table", "near the station", "in our street", "in the garden",
                       "at the end of the road", "next to the bank"};
const Words kCounts = {"two", "three", "many", "some", "a few", "several", "five"};

bool an_word(std::string_view w) {
  static const Words exceptions_an = {"hour", "honest", "honour"};
  static const Words exceptions_a = {"uniform", "university", "useful", "unusual", "european", "one", "unique", "user"};
  std::string lower(w);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (std::find(exceptions_an.begin(), exceptions_an.end(), lower) != exceptions_an.end()) return true;
  if (std::find(exceptions_a.begin(), exceptions_a.end(), lower) != exceptions_a.end()) return false;
  return !lower.empty() && std::string_view("aeiou").find(lower[0]) != std::string_view::npos;
}

template <typename C>
const auto& pick(const C& c, Rng& rng) {
  return c[rng.below(c.size())];
}

std::string noun_phrase(Rng& rng, bool allow_plural = true) {
  const auto& n = pick(kNouns, rng);
  if (allow_plural && rng.bernoulli(0.3)) {
    std::string out(pick(kCounts, rng));
    if (rng.bernoulli(0.3)) out += " " + std::string(pick(kAdjectives, rng));
    return out + " " + std::string(n.pl);
  }
  if (rng.bernoulli(0.25)) return "the " + std::string(n.sg);
  std::string rest(n.sg);
  if (rng.bernoulli(0.4)) rest = std::string(pick(kAdjectives, rng)) + " " + rest;
  return std::string(an_word(rest) ? "an " : "a ") + rest;
}

struct Subject {
  std::string text;
  bool third_singular;
  bool first_person;  // "I"
};

Subject subject(Rng& rng) {
  const auto r = rng.below(10);
  if (r == 0) return {"I", false, true};
  if (r < 6) return {std::string(pick(kSingular, rng)), true, false};
  return {std::string(pick(kPlural, rng)), false, false};
}

std::string be_present(const Subject& s) { return s.first_person ? "am" : s.third_singular ? "is" : "are"; }
std::string be_past(const Subject& s) { return s.first_person || s.third_singular ? "was" : "were"; }
std::string present(const Verb& v, const Subject& s) { return std::string(s.third_singular ? v.third : v.base); }

std::string clause(Rng& rng) {
  const Subject s = subject(rng);
  switch (rng.below(10)) {
    case 0:
    case 1:
      return s.text + " " + present(pick(kVerbs, rng), s) + " " + noun_phrase(rng) + " " +
             std::string(pick(kPresentAdverbials, rng));
    case 2: {
      const auto& pv = pick(kPrepVerbs, rng);
      return s.text + " " + present(pv.v, s) + " " + std::string(pv.prep) + " " + std::string(pick(pv.objects, rng)) +
             (rng.bernoulli(0.5) ? " " + std::string(pick(kPresentAdverbials, rng)) : "");
    }
    case 3: {
      const auto& pv = pick(kPrepVerbs, rng);
      return std::string(pick(kPastAdverbials, rng)) + " , " + s.text + " " + std::string(pv.v.past) + " " +
             std::string(pv.prep) + " " + std::string(pick(pv.objects, rng));
    }
    case 4:
      return s.text + " " + std::string(pick(kVerbs, rng).past) + " " + noun_phrase(rng) + " " +
             std::string(pick(kPastAdverbials, rng));
    case 5:
      return s.text + " " + be_present(s) + " " + std::string(pick(kPredicates, rng));
    case 6:
      return s.text + " " + present(pick(kToVerbs, rng), s) + " to " + std::string(pick(kVerbs, rng).base) + " " +
             noun_phrase(rng);
    case 7: {
      if (rng.bernoulli(0.5)) return "there is " + noun_phrase(rng, false) + " " + std::string(pick(kPlaces, rng));
      const auto& n = pick(kNouns, rng);
      return "there are " + std::string(pick(kCounts, rng)) + " " + std::string(n.pl) + " " +
             std::string(pick(kPlaces, rng));
    }
    case 8:
      return s.text + " " + (s.third_singular ? "does n't " : "do n't ") + std::string(pick(kVerbs, rng).base) + " " +
             noun_phrase(rng);
    default:
      return s.text + " " + be_past(s) + " " + std::string(pick(kPredicates, rng)) + " " +
             std::string(pick(kPastAdverbials, rng));
  }
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string sentence(Rng& rng) {
  const auto r = rng.below(10);
  if (r == 0) {
    const Subject s = subject(rng);
    const auto& v = pick(kVerbs, rng);
    return capitalize(std::string(s.third_singular ? "does " : "do ") + s.text + " " + std::string(v.base) + " " +
                      noun_phrase(rng) + " ?");
  }
  if (r == 1) return capitalize(clause(rng) + " because " + clause(rng) + " .");
  if (r == 2) return capitalize(clause(rng) + " , but " + clause(rng) + " .");
  return capitalize(clause(rng) + " .");
}

// Word-level confusion tables, keyed by lowercase form.
struct Tables {
  std::map<std::string, std::vector<std::string>> agreement;  // verb form -> wrong number forms
  std::map<std::string, std::string> past_to_base;
  std::map<std::string, std::string> number;  // noun singular <-> plural
  std::vector<std::string> preps{"in", "on", "at", "to", "for", "of", "with", "about", "from"};

  Tables() {
    auto pair = [&](std::string_view a, std::string_view b) {
      agreement[std::string(a)].emplace_back(b);
      agreement[std::string(b)].emplace_back(a);
    };
    pair("is", "are");
    pair("was", "were");
    pair("has", "have");
    pair("does", "do");
    agreement["am"].emplace_back("is");
    auto verb = [&](const Verb& v) {
      pair(v.base, v.third);
      if (v.past != v.base) past_to_base[std::string(v.past)] = std::string(v.base);
    };
    for (const auto& v : kVerbs) verb(v);
    for (const auto& v : kToVerbs) verb(v);
    for (const auto& p : kPrepVerbs) verb(p.v);
    for (const auto& n : kNouns) {
      number[std::string(n.sg)] = std::string(n.pl);
      number[std::string(n.pl)] = std::string(n.sg);
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string match_case(std::string_view like, std::string word) {
  if (!like.empty() && !word.empty() && std::isupper(static_cast<unsigned char>(like[0])))
    word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  return word;
}

bool is_word(std::string_view t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

enum class Kind { Agreement, Article, DropArticle, DropTo, Preposition, Tense, Number, Repeat, Swap };
constexpr std::array<std::string_view, 9> kKindNames = {"agreement", "article", "drop-article", "drop-to",
                                                        "preposition", "tense", "number", "repeat", "swap"};

}  // namespace

std::vector<std::string> generate_clean_sentences(std::size_t n, std::uint64_t seed, bool distinct) {
  std::vector<std::string> out;
  out.reserve(n);
  Rng rng(seed);
  std::unordered_set<std::string> seen;
  // The grammar is finite; give up long before looping forever.
  const std::size_t max_draws = 50 * n + 1000;
  for (std::size_t draws = 0; out.size() < n; ++draws) {
    if (draws == max_draws)
      throw ConfigError("the sentence grammar cannot produce " + std::to_string(n) + " distinct sentences");
    auto s = join(tokenize(sentence(rng)));
    if (distinct && !seen.insert(s).second) continue;
    out.push_back(std::move(s));
  }
  return out;
}

Tokens corrupt_words(const Tokens& clean, double p_word, Rng& rng, std::vector<std::string>* kinds) {
  const auto& T = tables();
  Tokens out;
  out.reserve(clean.size() + 2);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& tok = clean[i];
    const std::string w = lower(tok);
    const bool has_next = i + 1 < clean.size();
    std::vector<Kind> options;
    if (T.agreement.contains(w)) options.push_back(Kind::Agreement);
    if (w == "a" || w == "an") options.push_back(Kind::Article);
    if ((w == "a" || w == "an" || w == "the") && has_next) options.push_back(Kind::DropArticle);
    if (w == "to" && i > 0 && has_next) options.push_back(Kind::DropTo);
    if (std::find(T.preps.begin(), T.preps.end(), w) != T.preps.end()) options.push_back(Kind::Preposition);
    if (T.past_to_base.contains(w)) options.push_back(Kind::Tense);
    if (T.number.contains(w)) options.push_back(Kind::Number);
    if (is_word(tok)) options.push_back(Kind::Repeat);
    if (is_word(tok) && has_next && is_word(clean[i + 1]) && lower(clean[i + 1]) != w) options.push_back(Kind::Swap);
    if (options.empty() || !rng.bernoulli(p_word)) {
      out.push_back(tok);
      continue;
    }
    const Kind k = options[rng.below(options.size())];
    if (kinds) kinds->emplace_back(kKindNames[static_cast<std::size_t>(k)]);
    switch (k) {
      case Kind::Agreement: {
        const auto& alts = T.agreement.at(w);
        out.push_back(match_case(tok, alts[rng.below(alts.size())]));
        break;
      }
      case Kind::Article:
        out.push_back(match_case(tok, w == "a" ? "an" : "a"));
        break;
      case Kind::DropArticle:
      case Kind::DropTo:
        break;
      case Kind::Preposition: {
        std::string alt;
        do alt = T.preps[rng.below(T.preps.size())];
        while (alt == w);
        out.push_back(match_case(tok, alt));
        break;
      }
      case Kind::Tense:
        out.push_back(match_case(tok, T.past_to_base.at(w)));
        break;
      case Kind::Number:
        out.push_back(match_case(tok, T.number.at(w)));
        break;
      case Kind::Repeat:
        out.push_back(tok);
        out.push_back(lower(tok) == tok ? tok : w);
        break;
      case Kind::Swap:
        out.push_back(match_case(tok, lower(clean[i + 1])));
        out.push_back(lower(tok));
        ++i;
        break;
    }
    // Leave the right neighbour clean.
    if (k != Kind::Swap && has_next) out.push_back(clean[++i]);
  }
  return out;
}

std::vector<corpus::SentencePair> make_synthetic_corpus(std::span<const std::string> clean, const SynthConfig& cfg,
                                                        const std::string& tag, unsigned workers) {
  cfg.validate();
  std::vector<corpus::SentencePair> out(clean.size());
  auto work = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(derive_seed(cfg.noise.seed, static_cast<std::uint64_t>(i)));
      Tokens target = tokenize(clean[i]);
      std::string src = join(corrupt_words(target, cfg.p_word, rng));
      src = apply_spelling_noise(src, cfg.noise, rng);
      src = apply_infill_noise(src, cfg.noise, rng);
      out[i] = corpus::SentencePair::make(tokenize(src), std::move(target), tag);
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(clean.size() / 256 + 1)));
  if (workers == 1) {
    work(0, clean.size());
  } else {
    const std::size_t chunk = (clean.size() + workers - 1) / workers;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back(work, std::min(clean.size(), w * chunk), std::min(clean.size(), (w + 1) * chunk));
  }
  return out;
}

}  // namespace gec::noising
