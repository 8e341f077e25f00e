#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

#include "gec/cli/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int status;
  std::string out;
  std::string err;
};

Outcome gec_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = gec::cli::run(args, out, err);
  return {status, out.str(), err.str()};
}

std::set<std::string> files_under(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), dir).string());
  return out;
}

const std::string kPairs =
    "he go home .\the goes home .\tlearner\n"
    "she is here .\tshe is here .\tlearner\n"
    "a dog barks .\ta dog barks .\tnative\n";

// Small but complete: data, vocabulary and a few tiny-model steps.
void tiny_workspace(const fs::path& ws, const std::string& seed) {
  auto s = std::string("--seed");
  REQUIRE(gec_run({s, seed, "--quiet", "noise", "synth", "--generate", "240", "--dev-size", "40", "--out",
                   (ws / "train.tsv").string(), "--dev-out", (ws / "dev.tsv").string()})
              .status == 0);
  REQUIRE(gec_run({s, seed, "--quiet", "vocab", "train", "--in", (ws / "train.tsv").string(), "--size", "420",
                   "--out", (ws / "vocab.txt").string()})
              .status == 0);
  REQUIRE(gec_run({s, seed, "--quiet", "train", "--vocab", (ws / "vocab.txt").string(), "--train",
                   (ws / "train.tsv").string(), "--dev", (ws / "dev.tsv").string(), "--out-dir",
                   (ws / "run").string(), "--preset", "tiny", "--max-steps", "12", "--checkpoint-every", "4",
                   "--warmup-steps", "4", "--peak-lr", "0.003", "--batch-tokens", "400"})
              .status == 0);
}

}  // namespace

TEST_CASE("exit codes") {
  test::TempDir dir;
  auto r = gec_run({"corpus", "stats", "--in", "x.tsv", "--no-such-flag"});
  CHECK(r.status == 2);
  CHECK(r.err.find("--no-such-flag") != std::string::npos);

  CHECK(gec_run({"frobnicate"}).status == 2);
  CHECK(gec_run({}).status == 2);

  const auto missing = (dir.path() / "absent.tsv").string();
  r = gec_run({"corpus", "stats", "--in", missing});
  CHECK(r.status == 1);
  CHECK(r.err.find(missing) != std::string::npos);

  test::write_file(dir.path() / "bad.tsv", "no tab here\n");
  r = gec_run({"corpus", "stats", "--in", (dir.path() / "bad.tsv").string()});
  CHECK(r.status == 1);
  CHECK(r.err.find("bad.tsv:1") != std::string::npos);

  r = gec_run({"corpus", "oversample", "--multipliers", "x=zero", "--counts", missing});
  CHECK(r.status == 2);

  r = gec_run({"--help"});
  CHECK(r.status == 0);
  CHECK(r.out.find("grid-search") != std::string::npos);
  CHECK(gec_run({"--version"}).out == std::string(gec::cli::kVersion) + "\n");
}

TEST_CASE("corpus stats table and json") {
  test::TempDir dir;
  test::write_file(dir.path() / "p.tsv", kPairs);
  const auto json_path = dir.path() / "stats.json";
  auto r = gec_run({"corpus", "stats", "--in", (dir.path() / "p.tsv").string(), "--json", json_path.string()});
  REQUIRE(r.status == 0);
  CHECK(r.out.find("learner") != std::string::npos);
  CHECK(r.out.find("native") != std::string::npos);
  const json j = json::parse(test::read_file(json_path));
  CHECK(j["learner"]["sentences"] == 2);
  CHECK(j["learner"]["edit_edges"] == 1);
  CHECK(j["learner"]["total_edges"] == 8);
  CHECK(j["native"]["error_rate"] == 0.0);
  CHECK(j["all"]["sentences"] == 3);
  CHECK(fs::exists(json_path.string() + ".manifest.json"));
}

TEST_CASE("oversample counts") {
  test::TempDir dir;
  const auto counts = dir.path() / "counts.json";
  test::write_file(counts, R"({"lang8_a0": 1037561, "lang8_a1": 67975, "fce_train": 28350, "fce_dev": 2191,
    "fce_test": 2695, "nucle": 57151, "wi_a": 10493, "wi_b": 13032, "wi_c": 10783})");
  auto r = gec_run({"corpus", "oversample", "--counts", counts.string(), "--multipliers",
                    "wi_a=10,wi_b=10,wi_c=10,fce_train=5,fce_dev=5,fce_test=5,nucle=5"});
  CHECK(r.status == 0);
  CHECK(r.out == "1900551\n");
  r = gec_run({"corpus", "oversample", "--counts", counts.string(), "--multipliers", "*=1"});
  CHECK(r.out == "1230231\n");

  test::write_file(dir.path() / "p.tsv", kPairs);
  r = gec_run({"--seed", "3", "corpus", "oversample", "--in", (dir.path() / "p.tsv").string(), "--out",
               (dir.path() / "mixed.tsv").string(), "--multipliers", "learner=3"});
  CHECK(r.status == 0);
  CHECK(r.out == "7\n");
}

TEST_CASE("config file supplies values and flags override it") {
  test::TempDir dir;
  test::write_file(dir.path() / "p.tsv", kPairs);
  const auto cfg = dir.path() / "gec.toml";
  test::write_file(cfg, "seed = 11\n[corpus.oversample]\nmultipliers = \"native=4\"\n");
  const auto out = (dir.path() / "o.tsv").string();
  auto r = gec_run({"--config", cfg.string(), "corpus", "oversample", "--in", (dir.path() / "p.tsv").string(),
                    "--out", out});
  REQUIRE(r.status == 0);
  CHECK(r.out == "6\n");
  json m = json::parse(test::read_file(out + ".manifest.json"));
  CHECK(m["seed"] == 11);
  CHECK(m["options"]["multipliers"] == "native=4");

  r = gec_run({"--config", cfg.string(), "--seed", "12", "corpus", "oversample", "--in",
               (dir.path() / "p.tsv").string(), "--out", out, "--multipliers", "native=2"});
  REQUIRE(r.status == 0);
  CHECK(r.out == "4\n");
  m = json::parse(test::read_file(out + ".manifest.json"));
  CHECK(m["seed"] == 12);
}

TEST_CASE("commands write only their declared outputs") {
  test::TempDir dir;
  const auto ws = dir.path() / "ws";
  fs::create_directories(ws);
  auto r = gec_run({"--quiet", "noise", "synth", "--generate", "50", "--dev-size", "10", "--out",
                    (ws / "t.tsv").string(), "--dev-out", (ws / "d.tsv").string(), "--report",
                    (ws / "t.report.json").string(), "--manifest", (ws / "t.run.json").string()});
  REQUIRE(r.status == 0);
  const json m = json::parse(test::read_file(ws / "t.run.json"));
  std::set<std::string> declared{"t.run.json"};
  for (const auto& o : m["outputs"]) declared.insert(fs::relative(o.get<std::string>(), ws).string());
  CHECK(files_under(ws) == declared);
  CHECK(declared.size() == 4);
  CHECK(m["command"] == "noise synth");
  CHECK(m["version"] == gec::cli::kVersion);
  CHECK(m.contains("started"));
  CHECK(m.contains("finished"));
  CHECK(m["options"]["p-word"] == "0.11");
}

TEST_CASE("rerunning a manifest reproduces outputs") {
  test::TempDir dir;
  const auto ws = dir.path();
  tiny_workspace(ws, "5");
  const std::string ckpt = test::read_file(ws / "run" / "ckpt-00000012.bin");
  const std::string vocab = test::read_file(ws / "vocab.txt");
  const std::string train = test::read_file(ws / "train.tsv");

  for (const char* manifest : {"train.tsv.manifest.json", "vocab.txt.manifest.json", "run/manifest.json"}) {
    const json m = json::parse(test::read_file(ws / manifest));
    REQUIRE(gec_run(m["argv"].get<std::vector<std::string>>()).status == 0);
  }
  CHECK(test::read_file(ws / "train.tsv") == train);
  CHECK(test::read_file(ws / "vocab.txt") == vocab);
  CHECK(test::read_file(ws / "run" / "ckpt-00000012.bin") == ckpt);
}

TEST_CASE("decode, grid search, evaluate and average") {
  test::TempDir dir;
  const auto ws = dir.path();
  tiny_workspace(ws, "9");
  const auto vocab = (ws / "vocab.txt").string();
  auto r = gec_run({"checkpoints", "average", "--dir", (ws / "run").string(), "--last", "2", "--out",
                    (ws / "avg.bin").string()});
  REQUIRE(r.status == 0);
  CHECK(r.out.find("averaged 2 checkpoints, step 12") != std::string::npos);

  test::write_file(ws / "in.txt", "the cat sit on mat .\n\nshe go to school .\n");
  r = gec_run({"decode", "--checkpoint", (ws / "avg.bin").string(), "--vocab", vocab, "--in",
               (ws / "in.txt").string(), "--out", (ws / "out.txt").string(), "--beam-size", "2", "--threshold",
               "1.2", "--max-iters", "2"});
  REQUIRE(r.status == 0);
  const std::string decoded = test::read_file(ws / "out.txt");
  CHECK(std::count(decoded.begin(), decoded.end(), '\n') == 3);

  r = gec_run({"grid-search", "--checkpoint", (ws / "avg.bin").string(), "--vocab", vocab, "--dev",
               (ws / "dev.tsv").string(), "--limit", "8", "--thresholds", "0.9,1.1", "--max-iters", "1,2", "--out",
               (ws / "grid.tsv").string(), "--json", (ws / "grid.json").string(), "--beam-size", "2"});
  REQUIRE(r.status == 0);
  CHECK(test::read_file(ws / "grid.tsv").rfind("threshold\tmax_iters\tP\tR\tF0.5\n", 0) == 0);
  const json g = json::parse(test::read_file(ws / "grid.json"));
  CHECK(g["cells"].size() == 4);
  CHECK(g["dev_sentences"] == 8);

  // Scoring the references against themselves is perfect.
  std::vector<std::string> refs;
  std::istringstream dev(test::read_file(ws / "dev.tsv"));
  std::string line, text;
  while (std::getline(dev, line)) text += line.substr(line.find('\t') + 1, line.rfind('\t') - line.find('\t') - 1) + "\n";
  test::write_file(ws / "ref.txt", text);
  r = gec_run({"evaluate", "--dev", (ws / "dev.tsv").string(), "--hyp", (ws / "ref.txt").string(), "--json",
               (ws / "eval.json").string()});
  REQUIRE(r.status == 0);
  const json e = json::parse(test::read_file(ws / "eval.json"));
  CHECK(e["combined"]["F0.5"] == 100.0);

  // A checkpoint from another vocabulary is refused.
  test::write_file(ws / "other.txt", "x y z\n");
  REQUIRE(gec_run({"vocab", "train", "--in", (ws / "other.txt").string(), "--size", "280", "--out",
                   (ws / "other.vocab").string()})
              .status == 0);
  r = gec_run({"decode", "--checkpoint", (ws / "avg.bin").string(), "--vocab", (ws / "other.vocab").string(),
               "--in", (ws / "in.txt").string(), "--out", (ws / "o2.txt").string()});
  CHECK(r.status == 2);
}

TEST_CASE("vocab encode and decode are inverse") {
  test::TempDir dir;
  test::write_file(dir.path() / "text.txt", "the quick brown fox .\njumps over the lazy dog .\n");
  const auto v = (dir.path() / "v.txt").string();
  REQUIRE(gec_run({"vocab", "train", "--in", (dir.path() / "text.txt").string(), "--size", "300", "--out", v})
              .status == 0);
  REQUIRE(gec_run({"vocab", "encode", "--vocab", v, "--in", (dir.path() / "text.txt").string(), "--out",
                   (dir.path() / "ids.txt").string()})
              .status == 0);
  REQUIRE(gec_run({"vocab", "encode", "--decode", "--vocab", v, "--in", (dir.path() / "ids.txt").string(),
                   "--out", (dir.path() / "back.txt").string()})
              .status == 0);
  CHECK(test::read_file(dir.path() / "back.txt") == test::read_file(dir.path() / "text.txt"));
}

TEST_CASE("pipeline runs stages, stops on failure and is deterministic") {
  test::TempDir dir;
  const auto empty = dir.path() / "empty.json";
  test::write_file(empty, R"({"workspace": ")" + (dir.path() / "nothing").string() + R"(", "stages": []})");
  CHECK(gec_run({"pipeline", "run", "--recipe", empty.string()}).status == 0);
  CHECK(!fs::exists(dir.path() / "nothing"));

  const auto failing = dir.path() / "failing.json";
  test::write_file(failing, R"({"stages": [
    {"name": "data", "args": ["noise", "synth", "--generate", "20", "--out", "{ws}/t.tsv"]},
    {"name": "stats", "args": ["corpus", "stats", "--in", "{ws}/missing.tsv"]},
    ["vocab", "train", "--in", "{ws}/t.tsv", "--out", "{ws}/v.txt"]]})");
  auto r = gec_run({"--quiet", "pipeline", "run", "--recipe", failing.string(), "--workspace",
                    (dir.path() / "f").string()});
  CHECK(r.status == 1);
  CHECK(r.err.find("stage 1 (stats) failed") != std::string::npos);
  CHECK(!fs::exists(dir.path() / "f" / "v.txt"));
  const json fm = json::parse(test::read_file(dir.path() / "f" / "pipeline.manifest.json"));
  CHECK(fm["stages"].size() == 2);
  CHECK(fm["status"] == 1);

  const auto recipe = dir.path() / "desk.json";
  test::write_file(recipe, R"({"stages": [
    ["noise", "synth", "--generate", "200", "--dev-size", "20", "--out", "{ws}/train.tsv", "--dev-out", "{ws}/dev.tsv"],
    ["vocab", "train", "--in", "{ws}/train.tsv", "--size", "420", "--out", "{ws}/vocab.txt"],
    ["train", "--vocab", "{ws}/vocab.txt", "--train", "{ws}/train.tsv", "--dev", "{ws}/dev.tsv",
     "--out-dir", "{ws}/run", "--preset", "tiny", "--max-steps", "8", "--checkpoint-every", "4",
     "--warmup-steps", "4", "--batch-tokens", "300"],
    ["checkpoints", "average", "--dir", "{ws}/run", "--last", "2", "--out", "{ws}/avg.bin"],
    ["grid-search", "--checkpoint", "{ws}/avg.bin", "--vocab", "{ws}/vocab.txt", "--dev", "{ws}/dev.tsv",
     "--thresholds", "1.0", "--max-iters", "1", "--beam-size", "2", "--out", "{ws}/grid.tsv"],
    ["decode", "--checkpoint", "{ws}/avg.bin", "--vocab", "{ws}/vocab.txt", "--in", "{ws}/train.tsv",
     "--out", "{ws}/hyp.txt", "--beam-size", "2"]]})");
  for (const char* ws : {"a", "b"})
    REQUIRE(gec_run({"--quiet", "--seed", "4", "pipeline", "run", "--recipe", recipe.string(), "--workspace",
                     (dir.path() / ws).string()})
                .status == 0);
  for (const char* f : {"train.tsv", "vocab.txt", "avg.bin", "grid.tsv", "hyp.txt"})
    CHECK_MESSAGE(test::read_file(dir.path() / "a" / f) == test::read_file(dir.path() / "b" / f), f);
}
