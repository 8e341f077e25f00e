#include "gec/model/transformer.hpp"

#include <cmath>
#include <limits>

namespace gec::model {

namespace {

constexpr double kLnEps = 1e-6;
constexpr Eigen::Index kCachedPositions = 1024;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct Seg {
  Eigen::Index off;
  Eigen::Index len;
};

template <typename T>
struct LnCache {
  Matrix<T> xhat;
  Vec<T> inv;
};

template <typename T>
void ln_forward(const Matrix<T>& x, ConstMatrixMap<T> g, ConstMatrixMap<T> b, Matrix<T>& y, LnCache<T>* cache) {
  const Eigen::Index n = x.rows();
  const auto d = static_cast<T>(x.cols());
  Matrix<T> xhat(n, x.cols());
  Vec<T> inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).sum() / d;
    const T var = (x.row(i).array() - mu).square().sum() / d;
    inv(i) = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    xhat.row(i) = (x.row(i).array() - mu) * inv(i);
  }
  y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv = std::move(inv);
  }
}

/// Adds the input gradient into dx.
template <typename T>
void ln_backward(const Matrix<T>& dy, ConstMatrixMap<T> g, const LnCache<T>& c, Matrix<T>& dx, MatrixMap<T> dg,
                 MatrixMap<T> db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const auto d = static_cast<T>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() / d;
    const T m2 = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i).array() += c.inv(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
}

template <typename T>
void softmax_rows(Matrix<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

template <typename T>
struct AttnCache {
  Matrix<T> q, k, v, ctx;
  std::vector<Matrix<T>> probs;  // per (segment, head)
};

template <typename T>
struct AttnWeights {
  ConstMatrixMap<T> q, k, v, o;
};

template <typename T>
struct AttnGrads {
  MatrixMap<T> q, k, v, o;
};

template <typename T>
void attention_forward(const Matrix<T>& xq, const Matrix<T>& xkv, const AttnWeights<T>& w, std::span<const Seg> qsegs,
                       std::span<const Seg> ksegs, int heads, bool causal, AttnCache<T>& c, Matrix<T>& out) {
  const Eigen::Index d = w.q.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.q.noalias() = xq * w.q;
  c.k.noalias() = xkv * w.k;
  c.v.noalias() = xkv * w.v;
  c.ctx.setZero(xq.rows(), d);
  c.probs.assign(qsegs.size() * static_cast<std::size_t>(heads), Matrix<T>());
  for (std::size_t s = 0; s < qsegs.size(); ++s) {
    const Seg qs = qsegs[s];
    const Seg ks = ksegs[s];
    for (int h = 0; h < heads; ++h) {
      auto& p = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      p.noalias() = c.q.block(qs.off, h * dh, qs.len, dh) * c.k.block(ks.off, h * dh, ks.len, dh).transpose();
      p *= scale;
      if (causal) {
        for (Eigen::Index i = 0; i < qs.len; ++i)
          for (Eigen::Index j = i + 1; j < ks.len; ++j) p(i, j) = -std::numeric_limits<T>::infinity();
      }
      softmax_rows(p);
      c.ctx.block(qs.off, h * dh, qs.len, dh).noalias() = p * c.v.block(ks.off, h * dh, ks.len, dh);
    }
  }
  out.noalias() = c.ctx * w.o;
}

/// Adds input gradients into dxq and dxkv (which may alias for self-attention).
template <typename T>
void attention_backward(const Matrix<T>& dout, const Matrix<T>& xq, const Matrix<T>& xkv, const AttnWeights<T>& w,
                        std::span<const Seg> qsegs, std::span<const Seg> ksegs, int heads, const AttnCache<T>& c,
                        AttnGrads<T> g, Matrix<T>& dxq, Matrix<T>& dxkv) {
  const Eigen::Index d = w.q.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  g.o.noalias() += c.ctx.transpose() * dout;
  const Matrix<T> dctx = dout * w.o.transpose();
  Matrix<T> dq = Matrix<T>::Zero(c.q.rows(), d);
  Matrix<T> dk = Matrix<T>::Zero(c.k.rows(), d);
  Matrix<T> dv = Matrix<T>::Zero(c.v.rows(), d);
  for (std::size_t s = 0; s < qsegs.size(); ++s) {
    const Seg qs = qsegs[s];
    const Seg ks = ksegs[s];
    for (int h = 0; h < heads; ++h) {
      const auto& p = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      const auto dctx_b = dctx.block(qs.off, h * dh, qs.len, dh);
      Matrix<T> dp = dctx_b * c.v.block(ks.off, h * dh, ks.len, dh).transpose();
      dv.block(ks.off, h * dh, ks.len, dh).noalias() += p.transpose() * dctx_b;
      const Vec<T> rows = (dp.array() * p.array()).rowwise().sum();
      Matrix<T> ds = (p.array() * (dp.array().colwise() - rows.array())) * scale;
      dq.block(qs.off, h * dh, qs.len, dh).noalias() += ds * c.k.block(ks.off, h * dh, ks.len, dh);
      dk.block(ks.off, h * dh, ks.len, dh).noalias() += ds.transpose() * c.q.block(qs.off, h * dh, qs.len, dh);
    }
  }
  g.q.noalias() += xq.transpose() * dq;
  g.k.noalias() += xkv.transpose() * dk;
  g.v.noalias() += xkv.transpose() * dv;
  dxq.noalias() += dq * w.q.transpose();
  dxkv.noalias() += dk * w.k.transpose();
  dxkv.noalias() += dv * w.v.transpose();
}

template <typename T>
struct FfnCache {
  Matrix<T> hidden;  // post-ReLU
};

template <typename T>
void ffn_forward(const Matrix<T>& x, ConstMatrixMap<T> w1, ConstMatrixMap<T> b1, ConstMatrixMap<T> w2,
                 ConstMatrixMap<T> b2, FfnCache<T>& c, Matrix<T>& out) {
  c.hidden.noalias() = x * w1;
  c.hidden = (c.hidden.rowwise() + b1.row(0)).cwiseMax(T(0));
  out.noalias() = c.hidden * w2;
  out.rowwise() += b2.row(0);
}

template <typename T>
void ffn_backward(const Matrix<T>& dout, const Matrix<T>& x, ConstMatrixMap<T> w1, ConstMatrixMap<T> w2,
                  const FfnCache<T>& c, MatrixMap<T> dw1, MatrixMap<T> db1, MatrixMap<T> dw2, MatrixMap<T> db2,
                  Matrix<T>& dx) {
  dw2.noalias() += c.hidden.transpose() * dout;
  db2.row(0) += dout.colwise().sum();
  Matrix<T> dh = dout * w2.transpose();
  dh = (c.hidden.array() > T(0)).select(dh, T(0));
  dw1.noalias() += x.transpose() * dh;
  db1.row(0) += dh.colwise().sum();
  dx.noalias() += dh * w1.transpose();
}

/// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive.
template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng, Mode mode) {
  if (mode == Mode::Eval || p <= 0.0) return {};
  Matrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng->bernoulli(p) ? T(0) : keep;
  return m;
}

template <typename T>
void apply_mask(Matrix<T>& x, const Matrix<T>& mask) {
  if (mask.size()) x.array() *= mask.array();
}

template <typename T>
struct EncLayerCache {
  LnCache<T> ln1, ln2;
  Matrix<T> a, b;
  AttnCache<T> self;
  FfnCache<T> ffn;
  Matrix<T> drop1, drop2;
};

template <typename T>
struct DecLayerCache {
  LnCache<T> ln1, ln2, ln3;
  Matrix<T> a, b, c;
  AttnCache<T> self, cross;
  FfnCache<T> ffn;
  Matrix<T> drop1, drop2, drop3;
};

}  // namespace

Example make_example(const subword::Vocab& vocab, subword::Ids source, subword::Ids target, double mle_weight) {
  Example ex;
  subword::Ids framed_src = source;
  framed_src.push_back(subword::kEos);
  ex.source_words = vocab.word_index(framed_src);
  subword::Ids dec_in{subword::kBos};
  dec_in.insert(dec_in.end(), target.begin(), target.end());
  ex.target_words = vocab.word_index(dec_in);
  ex.weights = target_weights(source, target, mle_weight).lambda;
  ex.source = std::move(source);
  ex.target = std::move(target);
  return ex;
}

template <typename T>
Transformer<T>::Transformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto layout = make_layout<T>(cfg_);
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < layout.size(); ++i) idx[layout[i].name] = i;
  auto ln = [&](const std::string& p) { return LnIdx{idx.at(p + ".g"), idx.at(p + ".b")}; };
  auto attn = [&](const std::string& p) {
    return AttnIdx{idx.at(p + ".q"), idx.at(p + ".k"), idx.at(p + ".v"), idx.at(p + ".o")};
  };
  auto ffn = [&](const std::string& p) {
    return FfnIdx{idx.at(p + ".w1"), idx.at(p + ".b1"), idx.at(p + ".w2"), idx.at(p + ".b2")};
  };
  embedding_ = idx.at("embedding");
  output_ = idx.at("output");
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string e = "enc." + std::to_string(l);
    enc_.push_back({ln(e + ".ln1"), attn(e + ".self"), ln(e + ".ln2"), ffn(e + ".ffn")});
    const std::string d = "dec." + std::to_string(l);
    dec_.push_back({ln(d + ".ln1"), attn(d + ".self"), ln(d + ".ln2"), attn(d + ".cross"), ln(d + ".ln3"), ffn(d + ".ffn")});
  }
  enc_ln_ = ln("enc.ln");
  dec_ln_ = ln("dec.ln");

  positions_.resize(kCachedPositions, cfg_.d_model);
  for (Eigen::Index p = 0; p < kCachedPositions; ++p)
    for (Eigen::Index j = 0; j < cfg_.d_model; ++j) positions_(p, j) = position_value(p, j);
}

template <typename T>
T Transformer<T>::position_value(Eigen::Index pos, Eigen::Index dim) const {
  // First half sines, second half cosines, geometric timescales 1..1e4.
  const Eigen::Index half = cfg_.d_model / 2;
  const Eigen::Index i = dim < half ? dim : dim - half;
  const double inc = half > 1 ? std::log(1e4) / static_cast<double>(half - 1) : 0.0;
  const double t = static_cast<double>(pos) * std::exp(-inc * static_cast<double>(i));
  if (dim >= 2 * half) return T(0);
  return static_cast<T>(dim < half ? std::sin(t) : std::cos(t));
}

template <typename T>
void Transformer<T>::check_ids(std::span<const subword::Id> ids) const {
  for (auto id : ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw RangeError("model: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg_.vocab_size));
}

template <typename T>
typename Transformer<T>::Result Transformer<T>::run(const ParamSet<T>& P, std::span<const Example> batch, Mode mode,
                                                    Rng* rng, ParamSet<T>* G, T grad_scale,
                                                    std::vector<Matrix<T>>* log_probs_out) const {
  if (mode == Mode::Train && !rng) throw ConfigError("model: train mode requires a random source");
  const Eigen::Index d = cfg_.d_model;
  const int H = cfg_.heads;
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const double pdrop = cfg_.internal_dropout;

  // Layout of the flattened batch.
  std::vector<Seg> esegs, dsegs;
  std::vector<subword::Id> enc_ids, dec_in, dec_out;
  std::vector<Eigen::Index> enc_pos, dec_pos;
  std::vector<double> weights;
  std::vector<std::uint8_t> enc_keep, dec_keep;
  Rng no_draws(0);
  Rng& word_rng = rng ? *rng : no_draws;
  for (const auto& ex : batch) {
    check_ids(ex.source);
    check_ids(ex.target);
    const Eigen::Index n = static_cast<Eigen::Index>(ex.source.size()) + 1;
    const Eigen::Index m = static_cast<Eigen::Index>(ex.target.size()) + 1;
    esegs.push_back({static_cast<Eigen::Index>(enc_ids.size()), n});
    dsegs.push_back({static_cast<Eigen::Index>(dec_in.size()), m});
    enc_ids.insert(enc_ids.end(), ex.source.begin(), ex.source.end());
    enc_ids.push_back(subword::kEos);
    dec_in.push_back(subword::kBos);
    dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end());
    dec_out.insert(dec_out.end(), ex.target.begin(), ex.target.end());
    dec_out.push_back(subword::kEos);
    for (Eigen::Index i = 0; i < n; ++i) enc_pos.push_back(i);
    for (Eigen::Index i = 0; i < m; ++i) dec_pos.push_back(i);
    if (!ex.weights.empty()) {
      if (static_cast<Eigen::Index>(ex.weights.size()) != m) throw RangeError("model: weights must cover target + EOS");
      weights.insert(weights.end(), ex.weights.begin(), ex.weights.end());
    } else {
      weights.insert(weights.end(), static_cast<std::size_t>(m), 1.0);
    }
    auto own_words = [](Eigen::Index len) {
      std::vector<int> w(static_cast<std::size_t>(len));
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<int>(i);
      return w;
    };
    const auto sw = ex.source_words.empty() ? own_words(n) : ex.source_words;
    const auto tw = ex.target_words.empty() ? own_words(m) : ex.target_words;
    if (static_cast<Eigen::Index>(sw.size()) != n || static_cast<Eigen::Index>(tw.size()) != m)
      throw RangeError("model: word maps must cover the framed sequences");
    const auto ks = word_keep_mask(sw, cfg_.source_word_dropout, word_rng, mode);
    const auto kt = word_keep_mask(tw, cfg_.target_word_dropout, word_rng, mode);
    enc_keep.insert(enc_keep.end(), ks.begin(), ks.end());
    dec_keep.insert(dec_keep.end(), kt.begin(), kt.end());
  }
  const auto Ne = static_cast<Eigen::Index>(enc_ids.size());
  const auto Nd = static_cast<Eigen::Index>(dec_in.size());

  auto W = [&](std::size_t i) { return P[i].mat(); };
  auto position = [&](Eigen::Index pos, Eigen::Index j) {
    return pos < kCachedPositions ? positions_(pos, j) : position_value(pos, j);
  };
  auto embed = [&](const std::vector<subword::Id>& ids, const std::vector<Eigen::Index>& pos,
                   const std::vector<std::uint8_t>& keep) {
    Matrix<T> x(static_cast<Eigen::Index>(ids.size()), d);
    const auto E = W(embedding_);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto k = static_cast<std::size_t>(r);
      if (keep[k]) {
        x.row(r) = E.row(ids[k]) * emb_scale;
      } else {
        x.row(r).setZero();
      }
      for (Eigen::Index j = 0; j < d; ++j) x(r, j) += position(pos[k], j);
    }
    return x;
  };
  auto attn_w = [&](const AttnIdx& a) { return AttnWeights<T>{W(a.q), W(a.k), W(a.v), W(a.o)}; };

  // Encoder.
  Matrix<T> h = embed(enc_ids, enc_pos, enc_keep);
  const Matrix<T> enc_drop = dropout_mask<T>(Ne, d, pdrop, rng, mode);
  apply_mask(h, enc_drop);
  std::vector<EncLayerCache<T>> ec(enc_.size());
  Matrix<T> tmp;
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    const auto& L = enc_[l];
    auto& c = ec[l];
    ln_forward<T>(h, W(L.ln1.g), W(L.ln1.b), c.a, &c.ln1);
    attention_forward<T>(c.a, c.a, attn_w(L.self), esegs, esegs, H, false, c.self, tmp);
    c.drop1 = dropout_mask<T>(Ne, d, pdrop, rng, mode);
    apply_mask(tmp, c.drop1);
    h += tmp;
    ln_forward<T>(h, W(L.ln2.g), W(L.ln2.b), c.b, &c.ln2);
    ffn_forward<T>(c.b, W(L.ffn.w1), W(L.ffn.b1), W(L.ffn.w2), W(L.ffn.b2), c.ffn, tmp);
    c.drop2 = dropout_mask<T>(Ne, d, pdrop, rng, mode);
    apply_mask(tmp, c.drop2);
    h += tmp;
  }
  LnCache<T> enc_ln_cache;
  Matrix<T> memory;
  ln_forward<T>(h, W(enc_ln_.g), W(enc_ln_.b), memory, &enc_ln_cache);

  // Decoder.
  Matrix<T> g = embed(dec_in, dec_pos, dec_keep);
  const Matrix<T> dec_drop = dropout_mask<T>(Nd, d, pdrop, rng, mode);
  apply_mask(g, dec_drop);
  std::vector<DecLayerCache<T>> dc(dec_.size());
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const auto& L = dec_[l];
    auto& c = dc[l];
    ln_forward<T>(g, W(L.ln1.g), W(L.ln1.b), c.a, &c.ln1);
    attention_forward<T>(c.a, c.a, attn_w(L.self), dsegs, dsegs, H, true, c.self, tmp);
    c.drop1 = dropout_mask<T>(Nd, d, pdrop, rng, mode);
    apply_mask(tmp, c.drop1);
    g += tmp;
    ln_forward<T>(g, W(L.ln2.g), W(L.ln2.b), c.b, &c.ln2);
    attention_forward<T>(c.b, memory, attn_w(L.cross), dsegs, esegs, H, false, c.cross, tmp);
    c.drop2 = dropout_mask<T>(Nd, d, pdrop, rng, mode);
    apply_mask(tmp, c.drop2);
    g += tmp;
    ln_forward<T>(g, W(L.ln3.g), W(L.ln3.b), c.c, &c.ln3);
    ffn_forward<T>(c.c, W(L.ffn.w1), W(L.ffn.b1), W(L.ffn.w2), W(L.ffn.b2), c.ffn, tmp);
    c.drop3 = dropout_mask<T>(Nd, d, pdrop, rng, mode);
    apply_mask(tmp, c.drop3);
    g += tmp;
  }
  LnCache<T> dec_ln_cache;
  Matrix<T> z;
  ln_forward<T>(g, W(dec_ln_.g), W(dec_ln_.b), z, &dec_ln_cache);

  // Output distribution and loss.
  Matrix<T> logits = z * W(output_);
  Result res;
  res.tokens = static_cast<std::size_t>(Nd);
  for (Eigen::Index r = 0; r < Nd; ++r) {
    const T mx = logits.row(r).maxCoeff();
    const T lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    logits.row(r).array() -= lse;  // now log-probabilities
    const double lp = static_cast<double>(logits(r, dec_out[static_cast<std::size_t>(r)]));
    if (!std::isfinite(lp)) throw NumericError("model: non-finite log-probability");
    res.loss -= weights[static_cast<std::size_t>(r)] * lp;
    res.nll -= lp;
  }
  if (log_probs_out) {
    log_probs_out->clear();
    for (const auto& s : dsegs) log_probs_out->push_back(logits.block(s.off, 0, s.len, logits.cols()));
  }
  if (!G) return res;

  auto GW = [&](std::size_t i) { return (*G)[i].mat(); };
  auto attn_g = [&](const AttnIdx& a) { return AttnGrads<T>{GW(a.q), GW(a.k), GW(a.v), GW(a.o)}; };

  // d loss / d logits = λ (softmax - onehot), scaled.
  Matrix<T>& dlogits = logits;
  dlogits = dlogits.array().exp();
  for (Eigen::Index r = 0; r < Nd; ++r) {
    dlogits(r, dec_out[static_cast<std::size_t>(r)]) -= T(1);
    dlogits.row(r) *= static_cast<T>(weights[static_cast<std::size_t>(r)]) * grad_scale;
  }
  GW(output_).noalias() += z.transpose() * dlogits;
  const Matrix<T> dz = dlogits * W(output_).transpose();

  Matrix<T> dg = Matrix<T>::Zero(Nd, d);
  ln_backward<T>(dz, W(dec_ln_.g), dec_ln_cache, dg, GW(dec_ln_.g), GW(dec_ln_.b));
  Matrix<T> dmem = Matrix<T>::Zero(Ne, d);
  Matrix<T> dbranch, dx;
  for (std::size_t li = dec_.size(); li-- > 0;) {
    const auto& L = dec_[li];
    auto& c = dc[li];

    dbranch = dg;
    apply_mask(dbranch, c.drop3);
    dx.setZero(Nd, d);
    ffn_backward<T>(dbranch, c.c, W(L.ffn.w1), W(L.ffn.w2), c.ffn, GW(L.ffn.w1), GW(L.ffn.b1), GW(L.ffn.w2),
                    GW(L.ffn.b2), dx);
    ln_backward<T>(dx, W(L.ln3.g), c.ln3, dg, GW(L.ln3.g), GW(L.ln3.b));

    dbranch = dg;
    apply_mask(dbranch, c.drop2);
    dx.setZero(Nd, d);
    attention_backward<T>(dbranch, c.b, memory, attn_w(L.cross), dsegs, esegs, H, c.cross, attn_g(L.cross), dx, dmem);
    ln_backward<T>(dx, W(L.ln2.g), c.ln2, dg, GW(L.ln2.g), GW(L.ln2.b));

    dbranch = dg;
    apply_mask(dbranch, c.drop1);
    dx.setZero(Nd, d);
    attention_backward<T>(dbranch, c.a, c.a, attn_w(L.self), dsegs, dsegs, H, c.self, attn_g(L.self), dx, dx);
    ln_backward<T>(dx, W(L.ln1.g), c.ln1, dg, GW(L.ln1.g), GW(L.ln1.b));
  }
  apply_mask(dg, dec_drop);

  auto scatter_embedding = [&](const Matrix<T>& grad, const std::vector<subword::Id>& ids,
                               const std::vector<std::uint8_t>& keep) {
    auto dE = GW(embedding_);
    for (Eigen::Index r = 0; r < grad.rows(); ++r)
      if (keep[static_cast<std::size_t>(r)]) dE.row(ids[static_cast<std::size_t>(r)]) += grad.row(r) * emb_scale;
  };
  scatter_embedding(dg, dec_in, dec_keep);

  Matrix<T> dh = Matrix<T>::Zero(Ne, d);
  ln_backward<T>(dmem, W(enc_ln_.g), enc_ln_cache, dh, GW(enc_ln_.g), GW(enc_ln_.b));
  for (std::size_t li = enc_.size(); li-- > 0;) {
    const auto& L = enc_[li];
    auto& c = ec[li];

    dbranch = dh;
    apply_mask(dbranch, c.drop2);
    dx.setZero(Ne, d);
    ffn_backward<T>(dbranch, c.b, W(L.ffn.w1), W(L.ffn.w2), c.ffn, GW(L.ffn.w1), GW(L.ffn.b1), GW(L.ffn.w2),
                    GW(L.ffn.b2), dx);
    ln_backward<T>(dx, W(L.ln2.g), c.ln2, dh, GW(L.ln2.g), GW(L.ln2.b));

    dbranch = dh;
    apply_mask(dbranch, c.drop1);
    dx.setZero(Ne, d);
    attention_backward<T>(dbranch, c.a, c.a, attn_w(L.self), esegs, esegs, H, c.self, attn_g(L.self), dx, dx);
    ln_backward<T>(dx, W(L.ln1.g), c.ln1, dh, GW(L.ln1.g), GW(L.ln1.b));
  }
  apply_mask(dh, enc_drop);
  scatter_embedding(dh, enc_ids, enc_keep);
  return res;
}

template <typename T>
Matrix<T> Transformer<T>::log_probs(const ParamSet<T>& params, const Example& example, Mode mode, Rng* rng) const {
  std::vector<Matrix<T>> out;
  run(params, std::span<const Example>(&example, 1), mode, rng, nullptr, T(1), &out);
  return std::move(out.front());
}

template <typename T>
typename Transformer<T>::EncoderState Transformer<T>::encode(const ParamSet<T>& P,
                                                              std::span<const subword::Id> source) const {
  check_ids(source);
  const Eigen::Index d = cfg_.d_model;
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const auto n = static_cast<Eigen::Index>(source.size()) + 1;
  auto W = [&](std::size_t i) { return P[i].mat(); };
  Matrix<T> h(n, d);
  const auto E = W(embedding_);
  for (Eigen::Index r = 0; r < n; ++r) {
    const subword::Id id = r + 1 < n ? source[static_cast<std::size_t>(r)] : subword::kEos;
    h.row(r) = E.row(id) * emb_scale;
    for (Eigen::Index j = 0; j < d; ++j) h(r, j) += r < kCachedPositions ? positions_(r, j) : position_value(r, j);
  }
  const Seg seg{0, n};
  Matrix<T> a, tmp;
  for (const auto& L : enc_) {
    AttnCache<T> c;
    ln_forward<T>(h, W(L.ln1.g), W(L.ln1.b), a, nullptr);
    attention_forward<T>(a, a, {W(L.self.q), W(L.self.k), W(L.self.v), W(L.self.o)}, {&seg, 1}, {&seg, 1},
                         cfg_.heads, false, c, tmp);
    h += tmp;
    FfnCache<T> f;
    ln_forward<T>(h, W(L.ln2.g), W(L.ln2.b), a, nullptr);
    ffn_forward<T>(a, W(L.ffn.w1), W(L.ffn.b1), W(L.ffn.w2), W(L.ffn.b2), f, tmp);
    h += tmp;
  }
  EncoderState st;
  ln_forward<T>(h, W(enc_ln_.g), W(enc_ln_.b), st.memory, nullptr);
  for (const auto& L : dec_) {
    st.cross_k.push_back(st.memory * W(L.cross.k));
    st.cross_v.push_back(st.memory * W(L.cross.v));
  }
  return st;
}

template <typename T>
typename Transformer<T>::DecoderState Transformer<T>::initial_state() const {
  DecoderState s;
  s.self_k.assign(dec_.size(), Matrix<T>(0, cfg_.d_model));
  s.self_v.assign(dec_.size(), Matrix<T>(0, cfg_.d_model));
  return s;
}

template <typename T>
Matrix<T> Transformer<T>::decode_step(const ParamSet<T>& P, const EncoderState& enc,
                                      std::span<DecoderState* const> states,
                                      std::span<const subword::Id> tokens) const {
  check_ids(tokens);
  const Eigen::Index d = cfg_.d_model;
  const int H = cfg_.heads;
  const Eigen::Index dh = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const auto n = static_cast<Eigen::Index>(states.size());
  auto W = [&](std::size_t i) { return P[i].mat(); };

  Matrix<T> x(n, d);
  const auto E = W(embedding_);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index pos = states[static_cast<std::size_t>(r)]->length;
    x.row(r) = E.row(tokens[static_cast<std::size_t>(r)]) * emb_scale;
    for (Eigen::Index j = 0; j < d; ++j) x(r, j) += pos < kCachedPositions ? positions_(pos, j) : position_value(pos, j);
  }

  Matrix<T> a, q, k, v, ctx(n, d), tmp;
  Matrix<T> scores;
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const auto& L = dec_[l];
    ln_forward<T>(x, W(L.ln1.g), W(L.ln1.b), a, nullptr);
    q.noalias() = a * W(L.self.q);
    k.noalias() = a * W(L.self.k);
    v.noalias() = a * W(L.self.v);
    for (Eigen::Index r = 0; r < n; ++r) {
      auto& st = *states[static_cast<std::size_t>(r)];
      auto& K = st.self_k[l];
      auto& V = st.self_v[l];
      K.conservativeResize(K.rows() + 1, d);
      V.conservativeResize(V.rows() + 1, d);
      K.row(K.rows() - 1) = k.row(r);
      V.row(V.rows() - 1) = v.row(r);
      for (int h = 0; h < H; ++h) {
        scores.noalias() = q.block(r, h * dh, 1, dh) * K.block(0, h * dh, K.rows(), dh).transpose();
        scores *= scale;
        softmax_rows(scores);
        ctx.block(r, h * dh, 1, dh).noalias() = scores * V.block(0, h * dh, V.rows(), dh);
      }
    }
    x.noalias() += ctx * W(L.self.o);

    ln_forward<T>(x, W(L.ln2.g), W(L.ln2.b), a, nullptr);
    q.noalias() = a * W(L.cross.q);
    const auto& CK = enc.cross_k[l];
    const auto& CV = enc.cross_v[l];
    for (int h = 0; h < H; ++h) {
      scores.noalias() = q.block(0, h * dh, n, dh) * CK.block(0, h * dh, CK.rows(), dh).transpose();
      scores *= scale;
      softmax_rows(scores);
      ctx.block(0, h * dh, n, dh).noalias() = scores * CV.block(0, h * dh, CV.rows(), dh);
    }
    x.noalias() += ctx * W(L.cross.o);

    FfnCache<T> f;
    ln_forward<T>(x, W(L.ln3.g), W(L.ln3.b), a, nullptr);
    ffn_forward<T>(a, W(L.ffn.w1), W(L.ffn.b1), W(L.ffn.w2), W(L.ffn.b2), f, tmp);
    x += tmp;
  }
  for (auto* st : states) ++st->length;
  Matrix<T> z;
  ln_forward<T>(x, W(dec_ln_.g), W(dec_ln_.b), z, nullptr);
  Matrix<T> logits = z * W(output_);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mx = logits.row(r).maxCoeff();
    const T lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    logits.row(r).array() -= lse;
  }
  return logits;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace gec::model
