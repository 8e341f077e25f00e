#include "gec/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"
#include "gec/common/text.hpp"
#include "gec/corpus/corpus.hpp"
#include "gec/decoding/iterative.hpp"
#include "gec/eval/eval.hpp"
#include "gec/noising/revisions.hpp"
#include "gec/noising/synth.hpp"
#include "gec/subword/vocab.hpp"
#include "gec/training/checkpoint.hpp"
#include "gec/training/trainer.hpp"

namespace gec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("no such file: " + p.string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  require_file(p);
  std::ifstream in(p, std::ios::binary);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(p.string(), 1, e.what());
  }
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a number, got '" + item + "'");
    }
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (double d : parse_doubles(s)) {
    if (d != static_cast<int>(d)) throw ConfigError("expected an integer, got " + fmt("%g", d));
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::set<std::string> parse_tags(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

std::string canonical(const std::string& line) { return join(tokenize(line)); }

// Everything a command needs besides its own flags.
struct Env {
  Env(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  bool quiet = false;
  std::string manifest;
  std::vector<std::string> argv;

  void log(const std::string& msg) const {
    if (!quiet) err << msg << "\n";
  }
};

class Manifest {
 public:
  Manifest(const Env& env, std::string command, const CLI::App* sub) : env_(env), command_(std::move(command)) {
    started_ = utc_now();
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->get_lnames().empty() || opt->get_name() == "--help") continue;
      const std::string key = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& r = opt->results();
        options_[key] = r.size() == 1 ? json(r.front()) : json(r);
      } else {
        options_[key] = opt->get_default_str();
      }
    }
    config_text_ = sub->config_to_str(true, true);
  }

  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void extra(const std::string& key, json value) { extra_[key] = std::move(value); }

  // Writes to --manifest when given, otherwise next to `primary`.
  void write(const fs::path& primary) const {
    fs::path path = env_.manifest.empty() ? fs::path() : fs::path(env_.manifest);
    if (path.empty()) {
      if (fs::is_directory(primary))
        path = primary / "manifest.json";
      else
        path = fs::path(primary.string() + ".manifest.json");
    }
    json j{{"command", command_},
           {"argv", env_.argv},
           {"seed", env_.seed},
           {"workers", env_.workers},
           {"options", options_},
           {"config", config_text_},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"version", kVersion},
           {"started", started_},
           {"finished", utc_now()}};
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    write_json(path, j);
  }

 private:
  const Env& env_;
  std::string command_;
  std::string started_;
  json options_ = json::object();
  std::string config_text_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  json extra_ = json::object();
};

// ---- shared loaders

std::vector<corpus::SentencePair> load_pairs(const fs::path& p, const std::string& tag = {}) {
  require_file(p);
  return corpus::load_tsv(p, tag);
}

subword::Vocab load_vocab(const fs::path& p) {
  require_file(p);
  return subword::Vocab::load(p);
}

training::Checkpoint load_ckpt(const fs::path& p) {
  require_file(p);
  return training::load_checkpoint(p);
}

void check_compatible(const training::Checkpoint& ck, const subword::Vocab& vocab) {
  if (ck.config.vocab_size != static_cast<int>(vocab.size()))
    throw ConfigError("checkpoint expects a vocabulary of " + std::to_string(ck.config.vocab_size) +
                      " pieces, vocab file has " + std::to_string(vocab.size()));
  if (ck.vocab_fingerprint != 0 && ck.vocab_fingerprint != vocab.fingerprint())
    throw ConfigError("checkpoint was trained with a different vocabulary");
}

// A loaded model bundle used by decode and grid-search.
struct Loaded {
  training::Checkpoint ckpt;
  subword::Vocab vocab;
  std::unique_ptr<model::Transformer<float>> model;

  decoding::CorrectorFactory factory(const decoding::BeamConfig& beam) const {
    return [this, beam] {
      return std::unique_ptr<decoding::Corrector>(new decoding::ModelCorrector(*model, ckpt.params, vocab, beam));
    };
  }
};

std::unique_ptr<Loaded> load_model(const fs::path& ckpt, const fs::path& vocab) {
  auto l = std::make_unique<Loaded>(Loaded{load_ckpt(ckpt), load_vocab(vocab), nullptr});
  check_compatible(l->ckpt, l->vocab);
  l->model = std::make_unique<model::Transformer<float>>(l->ckpt.config);
  return l;
}

std::vector<decoding::DevSentence> dev_sentences(std::span<const corpus::SentencePair> pairs) {
  std::vector<decoding::DevSentence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({join(p.source), join(p.target), p.dataset_tag});
  return out;
}

void add_beam_flags(CLI::App* sub, decoding::BeamConfig& beam) {
  sub->add_option("--beam-size", beam.beam_size, "Beam width")->capture_default_str();
  sub->add_option("--alpha", beam.alpha, "Length penalty exponent")->capture_default_str();
  sub->add_option("--max-output-len", beam.max_output_len, "Output length cap in subwords (0: 2n+10)")
      ->capture_default_str();
}

// ---- corpus

void cmd_corpus_stats(Env& env, const std::vector<std::string>& inputs, const std::string& default_tag,
                      const std::string& json_out, const CLI::App* sub) {
  std::vector<corpus::SentencePair> pairs;
  for (const auto& in : inputs) {
    auto part = load_pairs(in, default_tag);
    pairs.insert(pairs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const auto by_tag = corpus::compute_stats_by_tag(pairs, env.workers);
  const auto all = corpus::compute_stats(pairs, env.workers);
  json j = json::object();
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %12s %12s %12s %8s\n", "tag", "sentences", "edits", "edges", "err%");
  env.out << line;
  auto row = [&](const std::string& tag, const corpus::DatasetStats& s) {
    std::snprintf(line, sizeof line, "%-16s %12zu %12zu %12zu %8.2f\n", tag.empty() ? "(none)" : tag.c_str(),
                  s.sentence_count, s.edit_edges, s.total_edges, 100.0 * s.error_rate);
    env.out << line;
    j[tag.empty() ? "(none)" : tag] = {{"sentences", s.sentence_count},
                                       {"edit_edges", s.edit_edges},
                                       {"total_edges", s.total_edges},
                                       {"error_rate", std::round(s.error_rate * 1e4) / 1e4}};
  };
  for (const auto& [tag, s] : by_tag) row(tag, s);
  if (by_tag.size() != 1) row("all", all);
  if (!json_out.empty()) {
    write_json(json_out, j);
    Manifest m(env, "corpus stats", sub);
    for (const auto& in : inputs) m.input(in);
    m.output(json_out);
    m.write(json_out);
  }
}

void cmd_corpus_oversample(Env& env, const std::string& in, const std::string& counts_path, const std::string& out,
                           const std::string& multipliers, bool strict, const CLI::App* sub) {
  const auto spec = corpus::parse_oversample_spec(multipliers, strict);
  if (!counts_path.empty()) {
    const json j = read_json(counts_path);
    std::map<std::string, std::size_t> counts;
    for (const auto& [tag, n] : j.items()) counts[tag] = n.get<std::size_t>();
    env.out << corpus::oversampled_size(counts, spec) << "\n";
    return;
  }
  if (in.empty() || out.empty()) throw ConfigError("corpus oversample needs --in and --out (or --counts)");
  const auto pairs = load_pairs(in);
  const auto mixed = corpus::oversample(pairs, spec, derive_seed(env.seed, "oversample"));
  corpus::write_tsv(out, mixed);
  env.out << mixed.size() << "\n";
  Manifest m(env, "corpus oversample", sub);
  m.input(in);
  m.output(out);
  m.extra("pairs_in", pairs.size());
  m.extra("pairs_out", mixed.size());
  m.write(out);
}

// ---- vocab

std::vector<std::string> vocab_corpus(const std::vector<std::string>& inputs) {
  std::vector<std::string> text;
  for (const auto& in : inputs) {
    require_file(in);
    for (const auto& line : corpus::read_lines(in)) {
      if (line.empty()) continue;
      // Pair files contribute both sides; the optional tag column is not text.
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        text.push_back(canonical(line));
        continue;
      }
      const auto tab2 = line.find('\t', tab + 1);
      text.push_back(canonical(line.substr(0, tab)));
      text.push_back(canonical(line.substr(tab + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab - 1)));
    }
  }
  if (text.empty()) throw EmptyInputError("vocab train: no text in the inputs");
  return text;
}

void cmd_vocab_train(Env& env, const std::vector<std::string>& inputs, std::size_t size, const std::string& out,
                     const CLI::App* sub) {
  const auto text = vocab_corpus(inputs);
  const auto vocab = subword::Vocab::train(text, size);
  ensure_parent(out);
  vocab.save(out);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(vocab.fingerprint()));
  env.out << "pieces " << vocab.size() << " merges " << vocab.num_merges() << " fingerprint " << buf << "\n";
  Manifest m(env, "vocab train", sub);
  for (const auto& in : inputs) m.input(in);
  m.output(out);
  m.extra("pieces", vocab.size());
  m.extra("fingerprint", buf);
  m.write(out);
}

void cmd_vocab_encode(Env& env, const std::string& vocab_path, const std::string& in, const std::string& out,
                      bool decode, const CLI::App* sub) {
  const auto vocab = load_vocab(vocab_path);
  require_file(in);
  std::vector<std::string> lines;
  for (const auto& line : corpus::read_lines(in)) {
    if (decode) {
      subword::Ids ids;
      std::stringstream ss(line);
      long v = 0;
      while (ss >> v) {
        if (v < 0 || v >= static_cast<long>(vocab.size()))
          throw RangeError("id " + std::to_string(v) + " outside the vocabulary");
        ids.push_back(static_cast<subword::Id>(v));
      }
      lines.push_back(vocab.decode(ids));
    } else {
      std::string s;
      for (auto id : vocab.encode(canonical(line))) {
        if (!s.empty()) s += ' ';
        s += std::to_string(id);
      }
      lines.push_back(std::move(s));
    }
  }
  ensure_parent(out);
  corpus::write_lines(out, lines);
  Manifest m(env, "vocab encode", sub);
  m.input(vocab_path);
  m.input(in);
  m.output(out);
  m.write(out);
}

// ---- noise

json pair_stats(std::span<const corpus::SentencePair> pairs, unsigned workers) {
  const auto s = corpus::compute_stats(pairs, workers);
  std::size_t identity = 0;
  for (const auto& p : pairs) identity += p.is_identity;
  return {{"pairs", s.sentence_count}, {"identity_pairs", identity}, {"error_rate", std::round(s.error_rate * 1e4) / 1e4}};
}

void cmd_noise_synth(Env& env, noising::SynthConfig cfg, const std::string& clean_path, std::size_t generate,
                     bool allow_repeats,
                     const std::string& out, const std::string& dev_out, std::size_t dev_size, const std::string& tag,
                     std::string report, const CLI::App* sub) {
  cfg.noise.seed = derive_seed(env.seed, "synth");
  cfg.validate();
  std::vector<std::string> clean;
  if (!clean_path.empty()) {
    require_file(clean_path);
    for (auto& line : corpus::read_lines(clean_path))
      if (!split_ws(line).empty()) clean.push_back(std::move(line));
  } else if (generate > 0) {
    clean = noising::generate_clean_sentences(generate, derive_seed(env.seed, "generate"), !allow_repeats);
  } else {
    throw ConfigError("noise synth needs --clean or --generate");
  }
  if (clean.empty()) throw EmptyInputError("noise synth: no clean sentences");
  auto pairs = noising::make_synthetic_corpus(clean, cfg, tag, env.workers);
  if (dev_size > 0 && dev_out.empty()) throw ConfigError("--dev-size needs --dev-out");
  if (dev_size >= pairs.size()) throw ConfigError("--dev-size leaves no training pairs");
  std::vector<corpus::SentencePair> dev(pairs.end() - static_cast<std::ptrdiff_t>(dev_size), pairs.end());
  pairs.resize(pairs.size() - dev_size);
  ensure_parent(out);
  corpus::write_tsv(out, pairs);
  if (!dev_out.empty()) {
    ensure_parent(dev_out);
    corpus::write_tsv(dev_out, dev);
  }
  if (report.empty()) report = out + ".json";
  json j{{"config", cfg}, {"train", pair_stats(pairs, env.workers)}};
  if (!dev_out.empty()) j["dev"] = pair_stats(dev, env.workers);
  write_json(report, j);
  env.out << "train " << pairs.size() << " pairs, error rate "
          << fmt("%.2f%%", 100.0 * j["train"]["error_rate"].get<double>()) << "\n";
  Manifest m(env, "noise synth", sub);
  if (!clean_path.empty()) m.input(clean_path);
  m.output(out);
  if (!dev_out.empty()) m.output(dev_out);
  m.output(report);
  m.write(out);
}

void cmd_noise_wiki(Env& env, noising::RevisionConfig cfg, const std::string& dump, const std::string& snapshots,
                    const std::string& out, std::string report, const CLI::App* sub) {
  cfg.noise.seed = derive_seed(env.seed, "wiki");
  cfg.validate();
  std::vector<noising::PageHistory> pages;
  if (!dump.empty()) {
    require_file(dump);
    pages = noising::read_xml_dump(dump);
  } else if (!snapshots.empty()) {
    require_file(snapshots);
    pages = noising::read_snapshot_dirs(snapshots);
  } else {
    throw ConfigError("noise wiki-pairs needs --dump or --snapshots");
  }
  noising::MiningReport rep;
  const auto pairs = noising::mine_pages(pages, cfg, env.workers, &rep);
  ensure_parent(out);
  corpus::write_tsv(out, pairs);
  if (report.empty()) report = out + ".json";
  json j{{"config", cfg}, {"report", noising::to_json(rep)}, {"pairs", pair_stats(pairs, env.workers)}};
  write_json(report, j);
  env.out << "pages " << rep.pages << " snapshots " << rep.snapshots << " pairs " << rep.pairs << "\n";
  Manifest m(env, "noise wiki-pairs", sub);
  m.input(dump.empty() ? snapshots : dump);
  m.output(out);
  m.output(report);
  m.write(out);
}

// ---- train / finetune

struct ModelFlags {
  std::string preset = "desk";
  model::ModelConfig cfg = model::ModelConfig::preset("desk");
  CLI::Option* layers = nullptr;
  CLI::Option* heads = nullptr;
  CLI::Option* d_model = nullptr;
  CLI::Option* d_ff = nullptr;
};

void add_regularizer_flags(CLI::App* sub, model::ModelConfig& c) {
  sub->add_option("--internal-dropout", c.internal_dropout, "Dropout inside the network")->capture_default_str();
  sub->add_option("--source-word-dropout", c.source_word_dropout, "Source word dropout rate")
      ->capture_default_str();
  sub->add_option("--target-word-dropout", c.target_word_dropout, "Target word dropout rate")
      ->capture_default_str();
  sub->add_option("--mle-weight", c.mle_weight, "Edited-token weight (1: plain likelihood)")->capture_default_str();
}

void add_model_flags(CLI::App* sub, ModelFlags& f) {
  sub->add_option("--preset", f.preset, "Model shape preset: tiny, desk, base, big")->capture_default_str();
  f.layers = sub->add_option("--layers", f.cfg.layers, "Encoder and decoder layers");
  f.heads = sub->add_option("--heads", f.cfg.heads, "Attention heads");
  f.d_model = sub->add_option("--d-model", f.cfg.d_model, "Model width");
  f.d_ff = sub->add_option("--d-ff", f.cfg.d_ff, "Feed-forward width");
  add_regularizer_flags(sub, f.cfg);
}

model::ModelConfig resolve_model(const ModelFlags& f, int vocab_size) {
  model::ModelConfig c = model::ModelConfig::preset(f.preset);
  if (f.layers->count()) c.layers = f.cfg.layers;
  if (f.heads->count()) c.heads = f.cfg.heads;
  if (f.d_model->count()) c.d_model = f.cfg.d_model;
  if (f.d_ff->count()) c.d_ff = f.cfg.d_ff;
  c.internal_dropout = f.cfg.internal_dropout;
  c.source_word_dropout = f.cfg.source_word_dropout;
  c.target_word_dropout = f.cfg.target_word_dropout;
  c.mle_weight = f.cfg.mle_weight;
  c.vocab_size = vocab_size;
  c.validate();
  return c;
}

struct TrainFlags {
  training::TrainConfig cfg;
  std::string schedule;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  auto& c = f.cfg;
  f.schedule = training::to_string(c.schedule);
  sub->add_option("--peak-lr", c.peak_lr, "Peak learning rate")->capture_default_str();
  sub->add_option("--warmup-steps", c.warmup_steps, "Warmup steps")->capture_default_str();
  sub->add_option("--schedule", f.schedule, "rsqrt or linear-constant")->capture_default_str();
  sub->add_option("--batch-tokens", c.batch_tokens, "Tokens per batch")->capture_default_str();
  sub->add_option("--max-steps", c.max_steps, "Optimizer steps")->capture_default_str();
  sub->add_option("--checkpoint-every", c.checkpoint_every, "Steps between checkpoints")->capture_default_str();
  sub->add_option("--dev-every", c.dev_every, "Steps between dev evaluations (0: with checkpoints)")
      ->capture_default_str();
  sub->add_option("--log-every", c.log_every, "Steps between log lines")->capture_default_str();
  sub->add_option("--max-seconds", c.max_seconds, "Wall-clock budget (0: none)")->capture_default_str();
  sub->add_option("--clip-norm", c.clip_norm, "Gradient norm clip")->capture_default_str();
  sub->add_option("--max-subwords", c.max_subwords, "Drop pairs longer than this")->capture_default_str();
}

training::TrainConfig resolve_train(const TrainFlags& f, const Env& env) {
  training::TrainConfig c = f.cfg;
  c.schedule = training::parse_schedule(f.schedule);
  c.seed = env.seed;
  c.workers = env.workers;
  c.validate();
  return c;
}

struct DataBundle {
  subword::Vocab vocab;
  std::vector<model::Example> train;
  std::vector<model::Example> dev;
  std::vector<decoding::DevSentence> dev_text;
};

DataBundle load_data(const Env& env, const std::string& vocab_path, const std::string& train_path,
                     const std::string& dev_path, double mle_weight, std::size_t max_subwords) {
  DataBundle d{load_vocab(vocab_path), {}, {}, {}};
  const auto train_pairs = load_pairs(train_path);
  const auto dev_pairs = load_pairs(dev_path);
  d.train = training::encode_corpus(d.vocab, train_pairs, mle_weight, max_subwords, env.workers);
  d.dev = training::encode_corpus(d.vocab, dev_pairs, 1.0, max_subwords, env.workers);
  d.dev_text = dev_sentences(dev_pairs);
  if (d.train.empty()) throw EmptyInputError("no training pairs within " + std::to_string(max_subwords) + " subwords");
  if (d.dev.empty()) throw EmptyInputError("no dev pairs within " + std::to_string(max_subwords) + " subwords");
  env.log("train " + std::to_string(d.train.size()) + " pairs, dev " + std::to_string(d.dev.size()) + " pairs");
  return d;
}

// Decodes a dev prefix with the default beam and scores it. Used for
// best-checkpoint selection while training.
std::function<double(const model::ModelParams&, long)> f05_hook(const Env& env, const model::ModelConfig& mcfg,
                                                                 const DataBundle& data, std::size_t limit) {
  if (limit == 0) return nullptr;
  auto model = std::make_shared<model::Transformer<float>>(mcfg);
  const std::size_t n = std::min(limit, data.dev_text.size());
  return [&env, &data, model, n](const model::ModelParams& params, long) {
    decoding::CorrectorFactory factory = [&] {
      return std::unique_ptr<decoding::Corrector>(
          new decoding::ModelCorrector(*model, params, data.vocab, decoding::BeamConfig{}));
    };
    std::vector<std::string> src;
    for (std::size_t i = 0; i < n; ++i) src.push_back(data.dev_text[i].source);
    const auto hyp = decoding::decode_all(src, factory, {}, env.workers);
    std::vector<eval::ScoredSentence> scored;
    for (std::size_t i = 0; i < n; ++i)
      scored.push_back({tokenize(src[i]), tokenize(hyp[i]), tokenize(data.dev_text[i].reference), {}});
    return 100.0 * eval::score_sentences(scored, env.workers).f05;
  };
}

training::TrainOptions make_opts(const Env& env, const std::string& out_dir, const DataBundle& data,
                                 const model::ModelConfig& mcfg, std::size_t f05_sentences) {
  training::TrainOptions o;
  o.out_dir = out_dir;
  o.metrics_path = fs::path(out_dir) / "metrics.jsonl";
  o.vocab_fingerprint = data.vocab.fingerprint();
  o.log = [&env](const std::string& s) { env.log(s); };
  o.dev_f05 = f05_hook(env, mcfg, data, f05_sentences);
  return o;
}

// Wraps the F0.5 hook so the best scoring parameters are written to best.bin.
struct BestTracker {
  double best = -1.0;
  long step = -1;
};

void track_best(training::TrainOptions& o, const model::ModelConfig& mcfg, std::uint64_t vocab_fp,
                std::shared_ptr<BestTracker> tracker) {
  if (!o.dev_f05) return;
  auto inner = o.dev_f05;
  const fs::path path = o.out_dir / "best.bin";
  o.dev_f05 = [inner, tracker, path, mcfg, vocab_fp](const model::ModelParams& p, long step) {
    const double f = inner(p, step);
    if (f > tracker->best) {
      tracker->best = f;
      tracker->step = step;
      training::save_checkpoint(path, {p, step, mcfg, vocab_fp});
    }
    return f;
  };
}

void cmd_train(Env& env, const ModelFlags& mf, const TrainFlags& tf, const std::string& vocab_path,
               const std::string& train_path, const std::string& dev_path, const std::string& out_dir,
               std::size_t f05_sentences, const CLI::App* sub) {
  const auto tcfg = resolve_train(tf, env);
  require_file(vocab_path);
  const auto vocab_size = static_cast<int>(subword::Vocab::load(vocab_path).size());
  const auto mcfg = resolve_model(mf, vocab_size);
  const auto data = load_data(env, vocab_path, train_path, dev_path, mcfg.mle_weight, tcfg.max_subwords);
  fs::create_directories(out_dir);
  auto opts = make_opts(env, out_dir, data, mcfg, f05_sentences);
  auto tracker = std::make_shared<BestTracker>();
  track_best(opts, mcfg, data.vocab.fingerprint(), tracker);
  const auto r = training::train(mcfg, tcfg, data.train, data.dev, opts);
  env.out << "steps " << r.steps << " loss " << fmt("%.4f", r.last_loss) << " dev_loss "
          << fmt("%.4f", r.final_dev_loss) << " checkpoints " << r.checkpoints.size() << "\n";
  Manifest m(env, "train", sub);
  m.input(vocab_path);
  m.input(train_path);
  m.input(dev_path);
  for (const auto& p : r.checkpoints) m.output(p);
  m.output(opts.metrics_path);
  m.extra("model", mcfg);
  m.extra("train", tcfg);
  m.extra("initial_dev_loss", r.initial_dev_loss);
  m.extra("final_dev_loss", r.final_dev_loss);
  if (tracker->step >= 0) {
    m.output(fs::path(out_dir) / "best.bin");
    m.extra("best", {{"step", tracker->step}, {"dev_f05", tracker->best}});
  }
  m.write(out_dir);
}

void cmd_finetune(Env& env, const model::ModelConfig& reg, const TrainFlags& tf, const std::string& base_path,
                  const std::string& vocab_path, const std::string& train_path, const std::string& dev_path,
                  const std::string& out_dir, std::size_t f05_sentences, bool compare, const CLI::App* sub) {
  auto tcfg = resolve_train(tf, env);
  const auto base = load_ckpt(base_path);
  auto mcfg = base.config;
  mcfg.internal_dropout = reg.internal_dropout;
  mcfg.source_word_dropout = reg.source_word_dropout;
  mcfg.target_word_dropout = reg.target_word_dropout;
  mcfg.mle_weight = reg.mle_weight;
  mcfg.validate();
  const auto data = load_data(env, vocab_path, train_path, dev_path, mcfg.mle_weight, tcfg.max_subwords);
  check_compatible(base, data.vocab);
  fs::create_directories(out_dir);
  auto opts = make_opts(env, out_dir, data, mcfg, f05_sentences);
  Manifest m(env, "finetune", sub);
  m.input(base_path);
  m.input(vocab_path);
  m.input(train_path);
  m.input(dev_path);
  m.extra("model", mcfg);
  if (compare) {
    std::vector<training::ScheduleRun> runs;
    for (auto s : {training::Schedule::Rsqrt, training::Schedule::LinearConstant}) {
      auto c = tcfg;
      c.schedule = s;
      runs.push_back({training::to_string(s), c, 0.0, std::nullopt});
    }
    runs = training::compare_schedules(base, mcfg, runs, data.train, data.dev, data.vocab.fingerprint(), opts);
    json j = json::array();
    for (const auto& r : runs) {
      json e{{"schedule", r.name}, {"config", r.cfg}, {"dev_loss", r.dev_loss}};
      if (r.dev_f05) e["dev_f05"] = *r.dev_f05;
      j.push_back(e);
      env.out << r.name << " dev_loss " << fmt("%.4f", r.dev_loss);
      if (r.dev_f05) env.out << " dev_f05 " << fmt("%.2f", *r.dev_f05);
      env.out << "\n";
    }
    const fs::path report = fs::path(out_dir) / "schedules.json";
    write_json(report, j);
    m.output(report);
    m.extra("schedules", j);
  } else {
    auto tracker = std::make_shared<BestTracker>();
    track_best(opts, mcfg, data.vocab.fingerprint(), tracker);
    const auto r = training::finetune(base, mcfg, tcfg, data.train, data.dev, data.vocab.fingerprint(), opts);
    env.out << "steps " << r.steps << " loss " << fmt("%.4f", r.last_loss) << " dev_loss "
            << fmt("%.4f", r.final_dev_loss) << " checkpoints " << r.checkpoints.size() << "\n";
    for (const auto& p : r.checkpoints) m.output(p);
    m.output(opts.metrics_path);
    m.extra("train", tcfg);
    m.extra("initial_dev_loss", r.initial_dev_loss);
    m.extra("final_dev_loss", r.final_dev_loss);
    if (tracker->step >= 0) {
      m.output(fs::path(out_dir) / "best.bin");
      m.extra("best", {{"step", tracker->step}, {"dev_f05", tracker->best}});
    }
  }
  m.write(out_dir);
}

// ---- checkpoints

void cmd_average(Env& env, const std::string& dir, int last, const std::vector<std::string>& inputs,
                 const std::string& out, const CLI::App* sub) {
  std::vector<fs::path> paths;
  if (!inputs.empty()) {
    paths.assign(inputs.begin(), inputs.end());
  } else if (!dir.empty()) {
    require_file(dir);
    paths = training::list_checkpoints(dir);
    if (paths.empty()) throw EmptyInputError("no checkpoints in " + dir);
    if (last <= 0) throw ConfigError("--last must be positive");
    if (paths.size() < static_cast<std::size_t>(last))
      env.log("only " + std::to_string(paths.size()) + " checkpoints available, averaging all of them");
    else
      paths.erase(paths.begin(), paths.end() - last);
  } else {
    throw ConfigError("checkpoints average needs --dir or --inputs");
  }
  std::vector<training::Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_ckpt(p));
  const auto avg = training::average_checkpoints(cks);
  ensure_parent(out);
  training::save_checkpoint(out, avg);
  env.out << "averaged " << cks.size() << " checkpoints, step " << avg.step << "\n";
  Manifest m(env, "checkpoints average", sub);
  for (const auto& p : paths) m.input(p);
  m.output(out);
  m.write(out);
}

// ---- decode / grid / evaluate

void cmd_decode(Env& env, const decoding::BeamConfig& beam, const decoding::IterativeDecodeConfig& it,
                const std::string& ckpt, const std::string& vocab, const std::string& in, const std::string& out,
                const CLI::App* sub) {
  beam.validate();
  it.validate();
  const auto loaded = load_model(ckpt, vocab);
  require_file(in);
  const auto lines = corpus::read_lines(in);
  std::vector<std::string> inputs;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    // Pair files decode their source column.
    auto c = canonical(lines[i].substr(0, lines[i].find('\t')));
    if (c.empty()) continue;
    where.push_back(i);
    inputs.push_back(std::move(c));
  }
  const auto decoded = decoding::decode_all(inputs, loaded->factory(beam), it, env.workers);
  std::vector<std::string> result(lines.size());
  for (std::size_t k = 0; k < where.size(); ++k) result[where[k]] = decoded[k];
  ensure_parent(out);
  corpus::write_lines(out, result);
  std::size_t changed = 0;
  for (std::size_t k = 0; k < where.size(); ++k) changed += decoded[k] != inputs[k];
  env.out << "decoded " << inputs.size() << " sentences, changed " << changed << "\n";
  Manifest m(env, "decode", sub);
  m.input(ckpt);
  m.input(vocab);
  m.input(in);
  m.output(out);
  m.write(out);
}

void cmd_grid(Env& env, const decoding::BeamConfig& beam, const std::string& ckpt, const std::string& vocab,
              const std::string& dev_path, const std::string& thresholds_s, const std::string& iters_s,
              std::size_t limit, const std::string& out, const std::string& json_out, const CLI::App* sub) {
  beam.validate();
  const auto thresholds = parse_doubles(thresholds_s);
  const auto iters = parse_ints(iters_s);
  const auto loaded = load_model(ckpt, vocab);
  auto dev = dev_sentences(load_pairs(dev_path));
  if (limit > 0 && dev.size() > limit) dev.resize(limit);
  const auto grid = decoding::grid_search(dev, loaded->factory(beam), thresholds, iters, env.workers);
  ensure_parent(out);
  write_text(out, decoding::grid_tsv(grid));
  env.out << decoding::grid_matrix(grid);
  const auto& b = grid.best_cell();
  env.out << "best threshold " << fmt("%g", b.threshold) << " max_iters " << b.max_iters << " F0.5 "
          << fmt("%.2f", 100.0 * b.score.f05) << "\n";
  Manifest m(env, "grid-search", sub);
  m.input(ckpt);
  m.input(vocab);
  m.input(dev_path);
  m.output(out);
  json cells = json::array();
  for (const auto& c : grid.cells)
    cells.push_back({{"threshold", c.threshold}, {"max_iters", c.max_iters}, {"score", eval::to_json(c.score)}});
  json j{{"cells", cells},
         {"best", {{"threshold", b.threshold}, {"max_iters", b.max_iters}, {"score", eval::to_json(b.score)}}},
         {"matrix", decoding::grid_matrix(grid)},
         {"dev_sentences", dev.size()}};
  if (!json_out.empty()) {
    write_json(json_out, j);
    m.output(json_out);
  }
  m.extra("best", j["best"]);
  m.write(out);
}

void cmd_evaluate(Env& env, const std::string& dev_path, const std::string& src_path, const std::string& ref_path,
                  const std::string& hyp_path, const std::string& subsets, const std::string& json_out,
                  const CLI::App* sub) {
  std::vector<corpus::SentencePair> ref;
  if (!dev_path.empty())
    ref = load_pairs(dev_path);
  else if (!src_path.empty() && !ref_path.empty()) {
    require_file(src_path);
    require_file(ref_path);
    ref = corpus::load_two_files(src_path, ref_path);
  } else {
    throw ConfigError("evaluate needs --dev, or --source and --ref");
  }
  require_file(hyp_path);
  const auto hyp = corpus::read_lines(hyp_path);
  if (hyp.size() != ref.size())
    throw gec::ParseError(hyp_path, std::min(hyp.size(), ref.size()) + 1,
                          "expected " + std::to_string(ref.size()) + " hypotheses, found " +
                              std::to_string(hyp.size()));
  std::vector<eval::ScoredSentence> scored;
  scored.reserve(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    scored.push_back({ref[i].source, tokenize(hyp[i]), ref[i].target, ref[i].dataset_tag});
  std::set<std::string> known = parse_tags(subsets);
  if (known.empty())
    for (const auto& s : scored) known.insert(s.tag);
  const auto r = eval::dev_combined(scored, known, env.workers);
  env.out << eval::format_table(r);
  if (!json_out.empty()) {
    write_json(json_out, eval::to_json(r));
    Manifest m(env, "evaluate", sub);
    m.input(dev_path.empty() ? src_path : dev_path);
    if (!ref_path.empty()) m.input(ref_path);
    m.input(hyp_path);
    m.output(json_out);
    m.write(json_out);
  }
}

// ---- pipeline

int run_with(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string substitute(std::string s, const std::string& ws) {
  for (std::size_t pos = 0; (pos = s.find("{ws}", pos)) != std::string::npos; pos += ws.size()) s.replace(pos, 4, ws);
  return s;
}

int cmd_pipeline(Env& env, const std::string& recipe_path, std::string workspace) {
  const json recipe = read_json(recipe_path);
  if (!recipe.is_object()) throw gec::ParseError(recipe_path, 1, "recipe must be a JSON object");
  if (workspace.empty()) workspace = recipe.value("workspace", std::string());
  if (workspace.empty()) workspace = (fs::path(recipe_path).parent_path() / "workspace").string();
  const json stages = recipe.value("stages", json::array());
  if (!stages.is_array()) throw gec::ParseError(recipe_path, 1, "'stages' must be an array");
  if (stages.empty()) {
    env.out << "pipeline: no stages\n";
    return kOk;
  }
  fs::create_directories(workspace);
  json records = json::array();
  const std::string started = utc_now();
  int status = kOk;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const json& st = stages[i];
    const json& raw = st.is_object() ? st.at("args") : st;
    std::vector<std::string> args{"--seed", std::to_string(env.seed), "--workers", std::to_string(env.workers)};
    if (env.quiet) args.push_back("--quiet");
    for (const auto& a : raw) args.push_back(substitute(a.get<std::string>(), workspace));
    const std::string name = st.is_object() ? st.value("name", std::string()) : std::string();
    env.log("pipeline: stage " + std::to_string(i) + (name.empty() ? "" : " (" + name + ")"));
    const auto t0 = std::chrono::steady_clock::now();
    status = run_with(args, env.out, env.err);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    records.push_back({{"index", i}, {"name", name}, {"argv", args}, {"status", status}, {"seconds", secs}});
    if (status != kOk) {
      env.err << "pipeline: stage " << i << (name.empty() ? "" : " (" + name + ")") << " failed with status "
              << status << "\n";
      break;
    }
  }
  fs::path mpath = env.manifest.empty() ? fs::path(workspace) / "pipeline.manifest.json" : fs::path(env.manifest);
  write_json(mpath, {{"command", "pipeline run"},
                     {"recipe", recipe_path},
                     {"recipe_content", recipe},
                     {"workspace", workspace},
                     {"seed", env.seed},
                     {"workers", env.workers},
                     {"version", kVersion},
                     {"stages", records},
                     {"status", status},
                     {"started", started},
                     {"finished", utc_now()}});
  return status;
}

// ---- entry

int run_with(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Env env(out, err);
  env.argv = args;

  CLI::App app{"Grammatical error correction toolkit", "gec"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
  app.set_version_flag("--version", kVersion);
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--seed", env.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--workers", env.workers, "Worker threads (1 is bit-reproducible)")->capture_default_str();
  app.add_option("--manifest", env.manifest, "Where to write the run manifest");
  app.add_flag("--quiet", env.quiet, "Suppress progress on stderr");

  std::function<int()> action;

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "Sentence-pair corpora");
  corpus_cmd->require_subcommand(1);
  std::vector<std::string> stats_in;
  std::string stats_tag, stats_json;
  auto* stats = corpus_cmd->add_subcommand("stats", "Per-tag sentence counts and error rates");
  stats->add_option("--in", stats_in, "Pair files (TSV: source, target, optional tag)")->required();
  stats->add_option("--default-tag", stats_tag, "Tag for rows without one");
  stats->add_option("--json", stats_json, "Also write the table as JSON");
  stats->callback([&] {
    action = [&] {
      cmd_corpus_stats(env, stats_in, stats_tag, stats_json, stats);
      return kOk;
    };
  });

  std::string os_in, os_out, os_counts, os_mult;
  bool os_strict = false;
  auto* os = corpus_cmd->add_subcommand("oversample", "Repeat datasets by tag and shuffle");
  os->add_option("--in", os_in, "Pair file");
  os->add_option("--out", os_out, "Output pair file");
  os->add_option("--counts", os_counts, "JSON object of tag counts; prints the mixed size only");
  os->add_option("--multipliers", os_mult, "tag=N list, '*=N' sets the default")->required();
  os->add_flag("--strict", os_strict, "Reject tags without a multiplier");
  os->callback([&] {
    action = [&] {
      cmd_corpus_oversample(env, os_in, os_counts, os_out, os_mult, os_strict, os);
      return kOk;
    };
  });

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "Subword vocabulary");
  vocab_cmd->require_subcommand(1);
  std::vector<std::string> vt_in;
  std::size_t vt_size = 4000;
  std::string vt_out;
  auto* vt = vocab_cmd->add_subcommand("train", "Learn a subword vocabulary");
  vt->add_option("--in", vt_in, "Text or pair files")->required();
  vt->add_option("--size", vt_size, "Target vocabulary size")->capture_default_str();
  vt->add_option("--out", vt_out, "Vocabulary file")->required();
  vt->callback([&] {
    action = [&] {
      cmd_vocab_train(env, vt_in, vt_size, vt_out, vt);
      return kOk;
    };
  });

  std::string ve_vocab, ve_in, ve_out;
  bool ve_decode = false;
  auto* ve = vocab_cmd->add_subcommand("encode", "Text to subword ids, or back with --decode");
  ve->add_option("--vocab", ve_vocab, "Vocabulary file")->required();
  ve->add_option("--in", ve_in, "Input lines")->required();
  ve->add_option("--out", ve_out, "Output lines")->required();
  ve->add_flag("--decode", ve_decode, "Read ids, write text");
  ve->callback([&] {
    action = [&] {
      cmd_vocab_encode(env, ve_vocab, ve_in, ve_out, ve_decode, ve);
      return kOk;
    };
  });

  // noise
  auto* noise_cmd = app.add_subcommand("noise", "Training data generation");
  noise_cmd->require_subcommand(1);
  noising::SynthConfig sc;
  std::string ns_clean, ns_out, ns_dev_out, ns_tag = "synth", ns_report;
  std::size_t ns_generate = 0, ns_dev_size = 0;
  bool ns_allow_repeats = false;
  auto* ns = noise_cmd->add_subcommand("synth", "Corrupt clean sentences into training pairs");
  ns->add_option("--clean", ns_clean, "Clean sentences, one per line");
  ns->add_option("--generate", ns_generate, "Generate this many distinct clean sentences instead");
  ns->add_flag("--allow-repeats", ns_allow_repeats, "Let generated sentences repeat");
  ns->add_option("--out", ns_out, "Training pair file")->required();
  ns->add_option("--dev-out", ns_dev_out, "Held-out pair file");
  ns->add_option("--dev-size", ns_dev_size, "Pairs moved from the end into --dev-out")->capture_default_str();
  ns->add_option("--tag", ns_tag, "Dataset tag")->capture_default_str();
  ns->add_option("--report", ns_report, "Statistics sidecar (default: <out>.json)");
  ns->add_option("--p-word", sc.p_word, "Per-word corruption probability")->capture_default_str();
  ns->add_option("--p-spell", sc.noise.p_spell, "Per-character spelling noise")->capture_default_str();
  ns->add_option("--p-infill", sc.noise.p_infill, "Per-sentence infill probability")->capture_default_str();
  ns->add_option("--infill-max-len", sc.noise.infill_max_len, "Longest infilled span")->capture_default_str();
  ns->callback([&] {
    action = [&] {
      cmd_noise_synth(env, sc, ns_clean, ns_generate, ns_allow_repeats, ns_out, ns_dev_out, ns_dev_size, ns_tag, ns_report, ns);
      return kOk;
    };
  });

  noising::RevisionConfig rc;
  std::string nw_dump, nw_snap, nw_out, nw_report;
  bool nw_no_spell = false;
  auto* nw = noise_cmd->add_subcommand("wiki-pairs", "Mine pairs from revision histories");
  nw->add_option("--dump", nw_dump, "XML history dump (.xml or .gz)");
  nw->add_option("--snapshots", nw_snap, "Directory of page directories holding snapshot files");
  nw->add_option("--out", nw_out, "Pair file")->required();
  nw->add_option("--report", nw_report, "Statistics sidecar (default: <out>.json)");
  nw->add_option("--keep-every", rc.keep_every, "Keep every k-th snapshot")->capture_default_str();
  nw->add_option("--context-tokens", rc.context_tokens, "Context kept around an edit")->capture_default_str();
  nw->add_option("--max-tokens", rc.max_tokens, "Drop longer pairs")->capture_default_str();
  nw->add_option("--p-spell", rc.noise.p_spell, "Per-character spelling noise on sources")->capture_default_str();
  nw->add_option("--identity-keep", rc.noise.identity_keep, "Fraction of unchanged pairs kept")
      ->capture_default_str();
  nw->add_flag("--no-spelling-noise", nw_no_spell, "Leave sources as mined");
  nw->callback([&] {
    action = [&] {
      rc.spelling_noise = !nw_no_spell;
      cmd_noise_wiki(env, rc, nw_dump, nw_snap, nw_out, nw_report, nw);
      return kOk;
    };
  });

  // train
  ModelFlags tr_model;
  TrainFlags tr_flags;
  std::string tr_vocab, tr_train, tr_dev, tr_out;
  std::size_t tr_f05 = 0;
  auto* tr = app.add_subcommand("train", "Train a model from scratch");
  tr->add_option("--vocab", tr_vocab, "Vocabulary file")->required();
  tr->add_option("--train", tr_train, "Training pairs")->required();
  tr->add_option("--dev", tr_dev, "Dev pairs")->required();
  tr->add_option("--out-dir", tr_out, "Checkpoint and metrics directory")->required();
  tr->add_option("--dev-f05-sentences", tr_f05, "Score this many dev sentences at each dev evaluation (0: off)")
      ->capture_default_str();
  add_model_flags(tr, tr_model);
  add_train_flags(tr, tr_flags);
  tr->callback([&] {
    action = [&] {
      cmd_train(env, tr_model, tr_flags, tr_vocab, tr_train, tr_dev, tr_out, tr_f05, tr);
      return kOk;
    };
  });

  // finetune
  model::ModelConfig ft_reg = model::ModelConfig::preset("desk");
  TrainFlags ft_flags;
  ft_flags.cfg = training::finetune_defaults();
  std::string ft_base, ft_vocab, ft_train, ft_dev, ft_out;
  std::size_t ft_f05 = 0;
  bool ft_compare = false;
  auto* ft = app.add_subcommand("finetune", "Continue training from a checkpoint");
  ft->add_option("--base", ft_base, "Starting checkpoint")->required();
  ft->add_option("--vocab", ft_vocab, "Vocabulary file")->required();
  ft->add_option("--train", ft_train, "Training pairs")->required();
  ft->add_option("--dev", ft_dev, "Dev pairs")->required();
  ft->add_option("--out-dir", ft_out, "Checkpoint and metrics directory")->required();
  ft->add_option("--dev-f05-sentences", ft_f05, "Score this many dev sentences at each dev evaluation (0: off)")
      ->capture_default_str();
  ft->add_flag("--compare-schedules", ft_compare, "Run rsqrt and linear-constant and report both");
  add_regularizer_flags(ft, ft_reg);
  add_train_flags(ft, ft_flags);
  ft->callback([&] {
    action = [&] {
      cmd_finetune(env, ft_reg, ft_flags, ft_base, ft_vocab, ft_train, ft_dev, ft_out, ft_f05, ft_compare, ft);
      return kOk;
    };
  });

  // checkpoints
  auto* ck_cmd = app.add_subcommand("checkpoints", "Checkpoint utilities");
  ck_cmd->require_subcommand(1);
  std::string av_dir, av_out;
  int av_last = 8;
  std::vector<std::string> av_inputs;
  auto* av = ck_cmd->add_subcommand("average", "Elementwise mean of checkpoints");
  av->add_option("--dir", av_dir, "Training directory");
  av->add_option("--last", av_last, "How many of the latest checkpoints in --dir")->capture_default_str();
  av->add_option("--inputs", av_inputs, "Explicit checkpoint files");
  av->add_option("--out", av_out, "Averaged checkpoint")->required();
  av->callback([&] {
    action = [&] {
      cmd_average(env, av_dir, av_last, av_inputs, av_out, av);
      return kOk;
    };
  });

  // decode
  decoding::BeamConfig dc_beam;
  decoding::IterativeDecodeConfig dc_it;
  std::string dc_ckpt, dc_vocab, dc_in, dc_out;
  auto* dc = app.add_subcommand("decode", "Correct sentences, one per line");
  dc->add_option("--checkpoint", dc_ckpt, "Model checkpoint")->required();
  dc->add_option("--vocab", dc_vocab, "Vocabulary file")->required();
  dc->add_option("--in", dc_in, "Input sentences, or a pair file whose source column is read")->required();
  dc->add_option("--out", dc_out, "Corrected sentences")->required();
  add_beam_flags(dc, dc_beam);
  dc->add_option("--threshold", dc_it.threshold, "Accept a rewrite when its cost is within this factor of identity")
      ->capture_default_str();
  dc->add_option("--max-iters", dc_it.max_iters, "Rewrite rounds per sentence")->capture_default_str();
  dc->callback([&] {
    action = [&] {
      cmd_decode(env, dc_beam, dc_it, dc_ckpt, dc_vocab, dc_in, dc_out, dc);
      return kOk;
    };
  });

  // grid-search
  decoding::BeamConfig gs_beam;
  std::string gs_ckpt, gs_vocab, gs_dev, gs_th = "0.8,0.9,1.0,1.1,1.2,1.3", gs_it = "1,2,3,4", gs_out, gs_json;
  std::size_t gs_limit = 0;
  auto* gs = app.add_subcommand("grid-search", "Threshold by max-iters sweep on dev");
  gs->add_option("--checkpoint", gs_ckpt, "Model checkpoint")->required();
  gs->add_option("--vocab", gs_vocab, "Vocabulary file")->required();
  gs->add_option("--dev", gs_dev, "Dev pairs")->required();
  gs->add_option("--thresholds", gs_th, "Comma-separated thresholds")->capture_default_str();
  gs->add_option("--max-iters", gs_it, "Comma-separated iteration caps")->capture_default_str();
  gs->add_option("--limit", gs_limit, "Use only the first N dev pairs (0: all)")->capture_default_str();
  gs->add_option("--out", gs_out, "Grid TSV")->required();
  gs->add_option("--json", gs_json, "Grid and best cell as JSON");
  add_beam_flags(gs, gs_beam);
  gs->callback([&] {
    action = [&] {
      cmd_grid(env, gs_beam, gs_ckpt, gs_vocab, gs_dev, gs_th, gs_it, gs_limit, gs_out, gs_json, gs);
      return kOk;
    };
  });

  // evaluate
  std::string ev_dev, ev_src, ev_ref, ev_hyp, ev_subsets, ev_json;
  auto* ev = app.add_subcommand("evaluate", "Precision, recall and F0.5 against references");
  ev->add_option("--dev", ev_dev, "Pair file with references (and tags)");
  ev->add_option("--source", ev_src, "Source lines");
  ev->add_option("--ref", ev_ref, "Reference lines");
  ev->add_option("--hyp", ev_hyp, "System output lines")->required();
  ev->add_option("--subsets", ev_subsets, "Comma-separated tags to report separately");
  ev->add_option("--json", ev_json, "Report as JSON");
  ev->callback([&] {
    action = [&] {
      cmd_evaluate(env, ev_dev, ev_src, ev_ref, ev_hyp, ev_subsets, ev_json, ev);
      return kOk;
    };
  });

  // pipeline
  auto* pl_cmd = app.add_subcommand("pipeline", "Run a recipe of commands");
  pl_cmd->require_subcommand(1);
  std::string pl_recipe, pl_ws;
  auto* pl = pl_cmd->add_subcommand("run", "Execute recipe stages in order");
  pl->add_option("--recipe", pl_recipe, "JSON recipe")->required();
  pl->add_option("--workspace", pl_ws, "Overrides the recipe workspace");
  pl->callback([&] { action = [&] { return cmd_pipeline(env, pl_recipe, pl_ws); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help, --version
    err << "error: " << e.what() << "\n";
    err << "run 'gec --help' for usage\n";
    return kUsage;
  }
  if (!action) {
    err << "error: no command given\n";
    return kUsage;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "error: io: " << e.what() << "\n";
  } catch (const gec::ParseError& e) {
    err << "error: parse: " << e.what() << "\n";
  } catch (const EmptyInputError& e) {
    err << "error: empty input: " << e.what() << "\n";
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
  } catch (const RangeError& e) {
    err << "error: range: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run_with(args, out, err);
}

}  // namespace gec::cli
