#include <cmath>
#include <fstream>

#include "doctest.h"
#include "gec/common/errors.hpp"
#include "gec/training/trainer.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace gec;
using namespace gec::training;
using gec::model::ModelConfig;

namespace {

ModelConfig small(int vocab = 40) {
  ModelConfig c = ModelConfig::preset("tiny");
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = vocab;
  return c;
}

TrainConfig quick(long steps) {
  TrainConfig t;
  t.peak_lr = 3e-3;
  t.warmup_steps = 50;
  t.max_steps = steps;
  t.checkpoint_every = 1000000;
  t.batch_tokens = 200;
  t.log_every = 10;
  return t;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p, bool drop_time = true) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    if (drop_time) j.erase("elapsed");
    out.push_back(j);
  }
  return out;
}

Checkpoint random_checkpoint(const ModelConfig& c, std::uint64_t seed, long step) {
  return {model::init_params<float>(c, seed), step, c, 77};
}

}  // namespace

TEST_CASE("learning-rate schedules") {
  TrainConfig c;
  c.peak_lr = 0.011;
  c.warmup_steps = 8000;
  CHECK(lr_schedule(8000, c) == doctest::Approx(0.011));
  CHECK(lr_schedule(4000, c) == doctest::Approx(0.0055));
  CHECK(lr_schedule(32000, c) == doctest::Approx(0.0055));
  CHECK_THROWS_AS(lr_schedule(0, c), RangeError);
  c.schedule = Schedule::LinearConstant;
  CHECK(lr_schedule(32000, c) == doctest::Approx(0.011));
  for (auto s : {Schedule::Rsqrt, Schedule::LinearConstant}) {
    c.schedule = s;
    CHECK(std::abs(lr_schedule(7999, c) - lr_schedule(8001, c)) < 1e-5);
  }
  CHECK(finetune_schedule(20000) == doctest::Approx(3e-4));
  CHECK(finetune_schedule(10000) == doctest::Approx(1.5e-4));
  CHECK(finetune_schedule(1000000) == doctest::Approx(3e-4));
  CHECK(parse_schedule("linear-constant") == Schedule::LinearConstant);
  CHECK_THROWS_AS(parse_schedule("cosine"), ConfigError);

  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>().warmup_steps == 8000);
  TrainConfig bad;
  bad.batch_tokens = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint save/load is exact") {
  test::TempDir dir;
  const auto c = small();
  auto ck = random_checkpoint(c, 5, 1234);
  ck.params[0].data[0] = -0.0f;
  ck.params[0].data[1] = std::numeric_limits<float>::denorm_min();
  ck.params[0].data[2] = std::numeric_limits<float>::max();
  const auto path = dir.path() / "sub" / "a.bin";
  save_checkpoint(path, ck);
  CHECK(!std::filesystem::exists(path.string() + ".tmp"));
  const auto back = load_checkpoint(path);
  CHECK(back.step == 1234);
  CHECK(back.vocab_fingerprint == 77);
  CHECK(back.config.shape_fingerprint() == c.shape_fingerprint());
  REQUIRE(back.params.same_layout(ck.params));
  for (std::size_t t = 0; t < ck.params.size(); ++t)
    REQUIRE(std::memcmp(back.params[t].data.data(), ck.params[t].data.data(), ck.params[t].numel() * 4) == 0);

  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.bin"), IoError);
  auto bytes = test::read_file(path);
  bytes[bytes.size() - 3] ^= 0x40;
  test::write_file(dir.path() / "flipped.bin", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "flipped.bin"), IoError);
  test::write_file(dir.path() / "short.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.bin"), IoError);
}

TEST_CASE("checkpoint listing") {
  test::TempDir dir;
  const auto c = small();
  for (long s : {300, 20, 1000}) save_checkpoint(checkpoint_path(dir.path(), s), random_checkpoint(c, 1, s));
  test::write_file(dir.path() / "notes.txt", "x");
  const auto found = list_checkpoints(dir.path());
  REQUIRE(found.size() == 3);
  CHECK(found[0].filename() == "ckpt-00000020.bin");
  CHECK(found[2].filename() == "ckpt-00001000.bin");
}

TEST_CASE("average_checkpoints") {
  const auto c = small();
  const auto a = random_checkpoint(c, 1, 10), b = random_checkpoint(c, 2, 20);
  const std::vector<Checkpoint> same{a, a, a};
  CHECK(params_hash(average_checkpoints(same).params) == params_hash(a.params));

  const std::vector<Checkpoint> ab{a, b};
  const auto m = average_checkpoints(ab);
  CHECK(m.step == 20);
  for (std::size_t t = 0; t < m.params.size(); ++t)
    for (std::size_t i = 0; i < m.params[t].numel(); ++i)
      REQUIRE(std::abs(m.params[t].data[i] - (a.params[t].data[i] + b.params[t].data[i]) / 2) <= 1e-7);

  std::vector<Checkpoint> many;
  for (int k = 0; k < 6; ++k) many.push_back(random_checkpoint(c, 100 + k, k % 3));
  const auto ref = params_hash(average_checkpoints(many).params);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(many.begin(), many.end());
    REQUIRE(params_hash(average_checkpoints(many).params) == ref);
  }

  auto other = small(41);
  const std::vector<Checkpoint> mixed{a, random_checkpoint(other, 1, 1)};
  CHECK_THROWS_AS(average_checkpoints(mixed), ConfigError);
  CHECK_THROWS_AS(average_checkpoints(std::span<const Checkpoint>{}), ConfigError);
}

TEST_CASE("make_batches respects the budget and covers every example once") {
  const auto data = test::random_batch(40, 300, 3);
  Rng rng(4);
  const auto batches = make_batches(data, 30, rng);
  std::vector<int> seen(data.size());
  for (const auto& b : batches) {
    std::size_t used = 0;
    for (auto i : b) ++seen[i], used += example_tokens(data[i]);
    REQUIRE(used <= 30);
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
}

TEST_CASE("training is reproducible and starts near the uniform loss") {
  test::TempDir dir;
  const auto c = small();
  const auto data = test::random_batch(c.vocab_size, 64, 5);
  const auto dev = test::random_batch(c.vocab_size, 16, 6);
  auto cfg = quick(30);
  cfg.checkpoint_every = 10;
  TrainOptions o1;
  o1.metrics_path = dir.path() / "a.jsonl";
  o1.out_dir = dir.path() / "a";
  const auto r1 = train(c, cfg, data, dev, o1);
  TrainOptions o2;
  o2.metrics_path = dir.path() / "b.jsonl";
  const auto r2 = train(c, cfg, data, dev, o2);
  CHECK(read_jsonl(o1.metrics_path) == read_jsonl(o2.metrics_path));
  CHECK(params_hash(r1.params) == params_hash(r2.params));
  CHECK(r1.checkpoints.size() == 3);
  CHECK(std::abs(r1.initial_dev_loss - std::log(double(c.vocab_size))) < 0.15 * std::log(double(c.vocab_size)));
  CHECK(read_jsonl(o1.metrics_path).front()["step"] == 0);

  // Reloaded checkpoints give the same dev loss.
  const auto last = load_checkpoint(r1.checkpoints.back());
  const model::Transformer<float> m(c);
  CHECK(dev_loss(m, last.params, dev) == dev_loss(m, r1.params, dev));
}

TEST_CASE("a small model overfits 32 pairs") {
  const auto c = small();
  const auto data = test::random_batch(c.vocab_size, 32, 7);
  auto cfg = quick(2000);
  cfg.log_every = 50;
  cfg.dev_every = 2000;
  double best = 1e9;
  long at = -1;
  TrainOptions o;
  o.log = [&](const std::string& line) {
    if (line.find(" loss ") != std::string::npos) {
      const double l = std::stod(line.substr(line.rfind(' ') + 1));
      if (l < best) best = l;
      if (l < 0.1 && at < 0) at = std::stol(line.substr(5));
    }
  };
  const auto r = train(c, cfg, data, data, o);
  MESSAGE("per-token loss < 0.1 at step " << at << ", final dev loss " << r.final_dev_loss);
  CHECK(at > 0);
  CHECK(at <= 2000);
}

TEST_CASE("finetune") {
  const auto c = small();
  const auto data = test::random_batch(c.vocab_size, 64, 8);
  const auto dev = test::random_batch(c.vocab_size, 16, 9);
  const auto base = train(c, quick(60), data, dev);
  const Checkpoint ck{base.params, 60, c, 123};

  auto cfg = finetune_defaults();
  cfg.max_steps = 0;
  CHECK(params_hash(finetune(ck, c, cfg, data, dev, 123).params) == params_hash(base.params));
  CHECK_THROWS_AS(finetune(ck, c, cfg, data, dev, 124), ConfigError);
  CHECK_THROWS_AS(finetune(ck, small(41), cfg, data, dev, 123), ConfigError);

  // Finetuning on the pretraining data does not raise the dev loss early on.
  auto ft = c;
  ft.source_word_dropout = 0.1;
  ft.target_word_dropout = 0.1;
  ft.mle_weight = 3.0;
  cfg.max_steps = 100;
  cfg.dev_every = 20;
  cfg.checkpoint_every = 1000;
  std::vector<double> losses;
  TrainOptions o;
  o.log = [&](const std::string& line) {
    const auto p = line.find("\"dev_loss\":");
    if (p != std::string::npos) losses.push_back(std::stod(line.substr(p + 11)));
  };
  finetune(ck, ft, cfg, data, data, 123, o);
  REQUIRE(losses.size() == 6);
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1]);

  std::vector<ScheduleRun> runs(2);
  runs[0].name = "rsqrt";
  runs[0].cfg = quick(20);
  runs[1].name = "linear";
  runs[1].cfg = finetune_defaults();
  runs[1].cfg.max_steps = 20;
  const auto cmp = compare_schedules(ck, c, runs, data, dev, 123);
  CHECK(cmp.size() == 2);
  CHECK(cmp[0].dev_loss != cmp[1].dev_loss);
}

TEST_CASE("training errors") {
  const auto c = small();
  const auto data = test::random_batch(c.vocab_size, 8, 10);
  CHECK_THROWS_AS(train(c, quick(5), data, {}), EmptyInputError);
  TrainOptions o;
  o.init = model::init_params<float>(c, 1);
  o.init->at("output").data[3] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(c, quick(5), data, data, o);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }

  // A learning rate that blows the weights up fails during training.
  auto hot = quick(50);
  hot.clip_norm = 0;
  TrainOptions o2;
  o2.lr = [](long) { return 1e38; };
  try {
    train(c, hot, data, data, o2);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step ") != std::string::npos);
  }
}
