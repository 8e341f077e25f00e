#include "gec/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "gec/common/errors.hpp"
#include "json.hpp"

namespace gec::training {

using model::Example;
using model::ModelParams;

namespace {

template <typename F>
void for_shards(std::size_t n, unsigned workers, F&& body) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  const std::size_t chunk = (n + workers - 1) / workers;
  if (workers == 1) {
    body(0u, std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] { body(w, std::min(n, w * chunk), std::min(n, (w + 1) * chunk)); });
}

}  // namespace

std::vector<Example> encode_corpus(const subword::Vocab& vocab, std::span<const corpus::SentencePair> pairs,
                                   double mle_weight, std::size_t max_subwords, unsigned workers) {
  std::vector<std::optional<Example>> slots(pairs.size());
  for_shards(pairs.size(), workers, [&](unsigned, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto src = vocab.encode(join(pairs[i].source));
      auto tgt = vocab.encode(join(pairs[i].target));
      if (src.size() > max_subwords || tgt.size() > max_subwords) continue;
      slots[i] = model::make_example(vocab, std::move(src), std::move(tgt), mle_weight);
    }
  });
  std::vector<Example> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

std::size_t example_tokens(const Example& ex) { return std::max(ex.source.size(), ex.target.size()) + 1; }

std::vector<std::vector<std::size_t>> make_batches(std::span<const Example> data, std::size_t batch_tokens, Rng& rng) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx.begin(), idx.end());
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return example_tokens(data[a]) < example_tokens(data[b]); });
  std::vector<std::vector<std::size_t>> batches;
  std::size_t used = 0;
  for (std::size_t i : idx) {
    const auto cost = example_tokens(data[i]);
    if (cost > batch_tokens) throw ConfigError("an example exceeds batch_tokens");
    if (batches.empty() || used + cost > batch_tokens) {
      batches.emplace_back();
      used = 0;
    }
    batches.back().push_back(i);
    used += cost;
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

Adam::Adam(const ModelParams& layout, double beta1, double beta2, double eps)
    : m_(layout.zeros_like()), v_(layout.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ModelParams& params, const ModelParams& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].data;
    const auto& g = grads[t].data;
    auto& m = m_[t].data;
    auto& v = v_[t].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

double grad_norm(const ModelParams& grads) {
  double s = 0;
  for (const auto& t : grads)
    for (float g : t.data) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

double dev_loss(const model::Transformer<float>& model, const ModelParams& params, std::span<const Example> dev,
                unsigned workers) {
  if (dev.empty()) throw EmptyInputError("dev set is empty");
  workers = std::max(1u, workers);
  std::vector<double> nll(workers, 0.0);
  std::vector<std::size_t> tokens(workers, 0);
  for_shards(dev.size(), workers, [&](unsigned w, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; i += 32) {
      const auto r = model.run(params, dev.subspan(i, std::min<std::size_t>(32, e - i)), model::Mode::Eval, nullptr,
                               nullptr);
      nll[w] += r.nll;
      tokens[w] += r.tokens;
    }
  });
  double total = 0;
  std::size_t count = 0;
  for (unsigned w = 0; w < workers; ++w) total += nll[w], count += tokens[w];
  return total / static_cast<double>(count);
}

TrainResult train(const model::ModelConfig& mcfg, const TrainConfig& cfg, std::span<const Example> data,
                  std::span<const Example> dev, TrainOptions opts) {
  mcfg.validate();
  cfg.validate();
  if (dev.empty()) throw EmptyInputError("dev set is empty");
  if (data.empty() && cfg.max_steps > 0) throw EmptyInputError("training set is empty");
  const model::Transformer<float> model(mcfg);
  TrainResult res;
  res.params = opts.init ? std::move(*opts.init) : model::init_params<float>(mcfg, derive_seed(cfg.seed, "init"));
  if (!res.params.same_layout(model::make_layout<float>(mcfg)))
    throw ConfigError("initial parameters do not match the model config");
  auto lr_of = opts.lr ? opts.lr : [&cfg](long s) { return lr_schedule(s, cfg); };

  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    if (opts.metrics_path.has_parent_path()) std::filesystem::create_directories(opts.metrics_path.parent_path());
    metrics.open(opts.metrics_path, std::ios::app);
    if (!metrics) throw IoError("cannot write " + opts.metrics_path.string());
  }
  auto emit = [&](const nlohmann::json& j) {
    if (metrics) metrics << j.dump() << '\n' << std::flush;
  };
  auto say = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  auto at_step = [](long step, const NumericError& e) {
    return NumericError("step " + std::to_string(step) + ": " + e.what());
  };
  auto evaluate = [&](long step) {
    double dl;
    try {
      dl = dev_loss(model, res.params, dev, cfg.workers);
    } catch (const NumericError& e) {
      throw at_step(step, e);
    }
    if (!std::isfinite(dl)) throw NumericError("non-finite dev loss at step " + std::to_string(step));
    nlohmann::json j{{"step", step}, {"dev_loss", dl}};
    if (opts.dev_f05) j["dev_f05"] = opts.dev_f05(res.params, step);
    j["elapsed"] = elapsed();
    emit(j);
    say("step " + std::to_string(step) + " dev " + j.dump());
    return j["dev_loss"].get<double>();
  };
  auto save = [&](long step) {
    if (opts.out_dir.empty()) return;
    const auto path = checkpoint_path(opts.out_dir, step);
    save_checkpoint(path, {res.params, step, mcfg, opts.vocab_fingerprint});
    res.checkpoints.push_back(path);
  };

  res.initial_dev_loss = evaluate(0);
  res.final_dev_loss = res.initial_dev_loss;
  if (cfg.max_steps == 0) return res;

  Adam adam(res.params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  const unsigned W = cfg.workers;
  std::vector<ModelParams> grads(W, res.params.zeros_like());
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  std::vector<std::vector<std::size_t>> batches;
  std::size_t next_batch = 0;
  double window_loss = 0;
  std::size_t window_tokens = 0;

  long step = 0;
  while (step < cfg.max_steps) {
    if (next_batch == batches.size()) {
      batches = make_batches(data, cfg.batch_tokens, batch_rng);
      next_batch = 0;
    }
    const auto& idx = batches[next_batch++];
    ++step;
    std::vector<Example> batch;
    batch.reserve(idx.size());
    std::size_t tokens = 0;
    for (auto i : idx) {
      batch.push_back(data[i]);
      tokens += data[i].target.size() + 1;
    }
    const float scale = 1.0f / static_cast<float>(tokens);
    std::vector<double> losses(W, 0.0);
    std::vector<std::exception_ptr> failures(W);
    for_shards(batch.size(), W, [&](unsigned w, std::size_t b, std::size_t e) {
      grads[w].set_zero();
      if (b == e) return;
      Rng rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(step) << 8) | w));
      try {
        losses[w] = model.run(res.params, std::span<const Example>(batch).subspan(b, e - b), model::Mode::Train,
                              &rng, &grads[w], scale)
                        .loss;
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
    for (auto& f : failures) {
      if (!f) continue;
      try {
        std::rethrow_exception(f);
      } catch (const NumericError& e) {
        throw at_step(step, e);
      }
    }
    double loss = 0;
    for (unsigned w = 0; w < W; ++w) loss += losses[w];
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
    for (unsigned w = 1; w < W; ++w)
      for (std::size_t t = 0; t < grads[0].size(); ++t) grads[0][t].mat() += grads[w][t].mat();
    const double norm = grad_norm(grads[0]);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient at step " + std::to_string(step));
    if (cfg.clip_norm > 0 && norm > cfg.clip_norm) {
      const float c = static_cast<float>(cfg.clip_norm / norm);
      for (auto& t : grads[0]) t.mat() *= c;
    }
    const double lr = lr_of(step);
    adam.step(res.params, grads[0], lr);
    window_loss += loss;
    window_tokens += tokens;

    const bool out_of_time = cfg.max_seconds > 0 && elapsed() >= cfg.max_seconds;
    const bool last = step == cfg.max_steps || out_of_time;
    if (step % cfg.log_every == 0 || last) {
      res.last_loss = window_loss / static_cast<double>(window_tokens);
      emit({{"step", step}, {"lr", lr}, {"loss", res.last_loss}, {"grad_norm", norm}, {"tokens", window_tokens},
            {"elapsed", elapsed()}});
      say("step " + std::to_string(step) + " loss " + std::to_string(res.last_loss));
      window_loss = 0;
      window_tokens = 0;
    }
    const bool at_ckpt = step % cfg.checkpoint_every == 0;
    if ((cfg.dev_every > 0 ? step % cfg.dev_every == 0 : at_ckpt) || last) {
      res.final_dev_loss = evaluate(step);
    }
    if (at_ckpt || last) save(step);
    if (out_of_time) break;
  }
  res.steps = step;
  return res;
}

TrainResult finetune(const Checkpoint& base, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                     std::span<const Example> data, std::span<const Example> dev, std::uint64_t vocab_fingerprint,
                     TrainOptions opts) {
  if (base.vocab_fingerprint != 0 && vocab_fingerprint != 0 && base.vocab_fingerprint != vocab_fingerprint)
    throw ConfigError("finetune: the corpus vocabulary differs from the base model's");
  if (mcfg.shape_fingerprint() != base.config.shape_fingerprint())
    throw ConfigError("finetune: model shape differs from the base checkpoint");
  for (const auto& ex : data)
    for (auto id : ex.source)
      if (id >= mcfg.vocab_size) throw ConfigError("finetune: corpus ids exceed the base vocabulary");
  opts.init = base.params;
  if (!opts.vocab_fingerprint) opts.vocab_fingerprint = base.vocab_fingerprint;
  if (!opts.lr) opts.lr = [&cfg](long s) { return lr_schedule(s, cfg); };
  return train(mcfg, cfg, data, dev, std::move(opts));
}

std::vector<ScheduleRun> compare_schedules(const Checkpoint& base, const model::ModelConfig& mcfg,
                                           std::vector<ScheduleRun> runs, std::span<const Example> data,
                                           std::span<const Example> dev, std::uint64_t vocab_fingerprint,
                                           const TrainOptions& opts) {
  for (auto& run : runs) {
    TrainOptions o = opts;
    o.init.reset();
    o.lr = nullptr;
    if (!opts.out_dir.empty()) o.out_dir = opts.out_dir / run.name;
    if (!opts.metrics_path.empty())
      o.metrics_path = opts.metrics_path.parent_path() / (run.name + "-" + opts.metrics_path.filename().string());
    const auto r = finetune(base, mcfg, run.cfg, data, dev, vocab_fingerprint, o);
    run.dev_loss = r.final_dev_loss;
    if (opts.dev_f05) run.dev_f05 = opts.dev_f05(r.params, r.steps);
  }
  return runs;
}

}  // namespace gec::training
