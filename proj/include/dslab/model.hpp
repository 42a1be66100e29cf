#pragma once

// Post-LN transformer encoder with an embedding->hidden projection, an MLM
// head with an untied decoder, and a first-position classification head.
// Forward and backward passes are written out by hand over Eigen matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "dslab/common.hpp"
#include "dslab/config.hpp"
#include "dslab/costmodel.hpp"
#include "dslab/tokenizer.hpp"

namespace dslab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr TokenId kIgnoreLabel = -100;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

// How the optimizer treats a tensor.
enum class ParamKind { weight, bias, norm, embedding };

struct LayerNormParams {
  Mat gain, bias;  // 1 x n
};

struct EncoderLayerParams {
  Mat wq, wk, wv, wo;  // H x H
  Mat bq, bk, bv, bo;  // 1 x H
  LayerNormParams ln_attn;
  Mat w_in, b_in;    // H x I, 1 x I
  Mat w_out, b_out;  // I x H, 1 x H
  LayerNormParams ln_ffn;
};

struct ModelParams {
  ModelConfig config;
  Mat tok_emb;  // V x E
  Mat pos_emb;  // P x E
  LayerNormParams emb_ln;
  Mat proj_w, proj_b;  // E x H, 1 x H
  LayerNormParams proj_ln;
  std::vector<EncoderLayerParams> layers;
  Mat head_w, head_b;  // H x H, 1 x H
  LayerNormParams head_ln;
  Mat dec_w, dec_b;  // H x V, 1 x V

  // Visits every tensor in a fixed order with (name, tensor, kind).
  template <typename Self, typename F>
  static void visit(Self& p, F&& f) {
    f("tok_emb", p.tok_emb, ParamKind::embedding);
    f("pos_emb", p.pos_emb, ParamKind::embedding);
    f("emb_ln.gain", p.emb_ln.gain, ParamKind::norm);
    f("emb_ln.bias", p.emb_ln.bias, ParamKind::norm);
    f("proj.w", p.proj_w, ParamKind::weight);
    f("proj.b", p.proj_b, ParamKind::bias);
    f("proj_ln.gain", p.proj_ln.gain, ParamKind::norm);
    f("proj_ln.bias", p.proj_ln.bias, ParamKind::norm);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      f(pre + "wq", L.wq, ParamKind::weight);
      f(pre + "bq", L.bq, ParamKind::bias);
      f(pre + "wk", L.wk, ParamKind::weight);
      f(pre + "bk", L.bk, ParamKind::bias);
      f(pre + "wv", L.wv, ParamKind::weight);
      f(pre + "bv", L.bv, ParamKind::bias);
      f(pre + "wo", L.wo, ParamKind::weight);
      f(pre + "bo", L.bo, ParamKind::bias);
      f(pre + "ln_attn.gain", L.ln_attn.gain, ParamKind::norm);
      f(pre + "ln_attn.bias", L.ln_attn.bias, ParamKind::norm);
      f(pre + "w_in", L.w_in, ParamKind::weight);
      f(pre + "b_in", L.b_in, ParamKind::bias);
      f(pre + "w_out", L.w_out, ParamKind::weight);
      f(pre + "b_out", L.b_out, ParamKind::bias);
      f(pre + "ln_ffn.gain", L.ln_ffn.gain, ParamKind::norm);
      f(pre + "ln_ffn.bias", L.ln_ffn.bias, ParamKind::norm);
    }
    f("head.w", p.head_w, ParamKind::weight);
    f("head.b", p.head_b, ParamKind::bias);
    f("head_ln.gain", p.head_ln.gain, ParamKind::norm);
    f("head_ln.bias", p.head_ln.bias, ParamKind::norm);
    f("dec.w", p.dec_w, ParamKind::weight);
    f("dec.b", p.dec_b, ParamKind::bias);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  std::int64_t size() const {
    std::int64_t n = 0;
    for_each([&](const std::string&, const Mat& m, ParamKind) { n += m.size(); });
    return n;
  }

  void set_zero() {
    for_each([](const std::string&, Mat& m, ParamKind) { m.setZero(); });
  }

  bool operator==(const ModelParams& o) const {
    if (!(config == o.config) || layers.size() != o.layers.size()) return false;
    std::vector<const Mat*> mine, theirs;
    for_each([&](const std::string&, const Mat& m, ParamKind) { mine.push_back(&m); });
    o.for_each([&](const std::string&, const Mat& m, ParamKind) { theirs.push_back(&m); });
    for (std::size_t i = 0; i < mine.size(); ++i)
      if (mine[i]->rows() != theirs[i]->rows() || mine[i]->cols() != theirs[i]->cols() || *mine[i] != *theirs[i])
        return false;
    return true;
  }
};

// Walks two parameter sets of the same shape in lockstep.
template <typename A, typename B, typename F>
void zip_params(A& a, B& b, F&& f) {
  std::vector<std::conditional_t<std::is_const_v<A>, const Mat, Mat>*> pa;
  std::vector<std::conditional_t<std::is_const_v<B>, const Mat, Mat>*> pb;
  std::vector<std::string> names;
  std::vector<ParamKind> kinds;
  a.for_each([&](const std::string& n, auto& m, ParamKind k) {
    pa.push_back(&m);
    names.push_back(n);
    kinds.push_back(k);
  });
  b.for_each([&](const std::string&, auto& m, ParamKind) { pb.push_back(&m); });
  if (pa.size() != pb.size()) throw Error("zip_params: parameter sets differ in structure");
  for (std::size_t i = 0; i < pa.size(); ++i) f(names[i], *pa[i], *pb[i], kinds[i]);
}

// Zero-valued tensors with the shapes implied by `c`.
inline ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  const auto E = c.embedding, H = c.hidden, I = c.intermediate, V = c.vocab, P = c.max_positions;
  auto z = [](std::int64_t r, std::int64_t k) { return Mat::Zero(r, k); };
  auto ln = [&](std::int64_t n) { return LayerNormParams{z(1, n), z(1, n)}; };
  ModelParams p;
  p.config = c;
  p.tok_emb = z(V, E);
  p.pos_emb = z(P, E);
  p.emb_ln = ln(E);
  p.proj_w = z(E, H);
  p.proj_b = z(1, H);
  p.proj_ln = ln(H);
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& L : p.layers) {
    L.wq = z(H, H);
    L.wk = z(H, H);
    L.wv = z(H, H);
    L.wo = z(H, H);
    L.bq = z(1, H);
    L.bk = z(1, H);
    L.bv = z(1, H);
    L.bo = z(1, H);
    L.ln_attn = ln(H);
    L.w_in = z(H, I);
    L.b_in = z(1, I);
    L.w_out = z(I, H);
    L.b_out = z(1, H);
    L.ln_ffn = ln(H);
  }
  p.head_w = z(H, H);
  p.head_b = z(1, H);
  p.head_ln = ln(H);
  p.dec_w = z(H, V);
  p.dec_b = z(1, V);
  return p;
}

inline double truncated_normal(Rng& rng, double stddev) {
  for (;;) {
    double z = normal01(rng);
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

// Weights and embeddings ~ N(0, 0.02) truncated at 2 sigma, biases zero,
// norm gains one. Each tensor draws from its own stream so adding layers does
// not perturb earlier tensors.
inline ModelParams init_model(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  std::uint64_t idx = 0;
  p.for_each([&](const std::string& name, Mat& m, ParamKind kind) {
    ++idx;
    if (kind == ParamKind::bias) return;
    if (kind == ParamKind::norm) {
      if (name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0) m.setOnes();
      return;
    }
    Rng rng(mix_seed(seed, {0x1417ULL, idx}));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = truncated_normal(rng, kInitStd);
  });
  return p;
}

struct ClassifierHead {
  Mat w, b;  // H x C, 1 x C
  std::int64_t num_classes() const { return w.cols(); }
  template <typename F>
  void for_each(F&& f) {
    f("cls.w", w, ParamKind::weight);
    f("cls.b", b, ParamKind::bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("cls.w", w, ParamKind::weight);
    f("cls.b", b, ParamKind::bias);
  }
};

inline ClassifierHead init_classifier(const ModelConfig& c, std::int64_t num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw Error("classifier head needs at least one class");
  ClassifierHead h{Mat::Zero(c.hidden, num_classes), Mat::Zero(1, num_classes)};
  Rng rng(mix_seed(seed, {0xc1a55ULL}));
  for (Eigen::Index i = 0; i < h.w.size(); ++i) h.w.data()[i] = truncated_normal(rng, kInitStd);
  return h;
}

// ---- batches ----------------------------------------------------------------

// B sequences of length S, row-major. labels hold the original id at masked
// positions and kIgnoreLabel elsewhere; attention is 1 for real tokens.
struct MaskedBatch {
  std::int64_t batch = 0, seq_len = 0;
  std::vector<TokenId> input, labels;
  std::vector<std::uint8_t> attention;

  std::int64_t labeled() const {
    return std::count_if(labels.begin(), labels.end(), [](TokenId t) { return t != kIgnoreLabel; });
  }
};

struct MaskedSequence {
  std::vector<TokenId> input, labels;
};

// Picks ceil(rate * n) non-special positions uniformly without replacement and
// replaces every one with the mask token.
inline MaskedSequence apply_masking(const std::vector<TokenId>& tokens, double rate, Rng& rng) {
  if (!(rate > 0.0 && rate < 1.0)) throw Error("apply_masking: rate must be in (0, 1)");
  if (tokens.empty()) throw Error("apply_masking: empty sequence");
  MaskedSequence out{tokens, std::vector<TokenId>(tokens.size(), kIgnoreLabel)};
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!SpecialTokens::is_special(tokens[i])) candidates.push_back(i);
  if (candidates.empty()) return out;
  // the epsilon keeps 0.15 * 100 from rounding up to 16
  auto k = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(candidates.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, candidates.size());
  for (std::size_t j = 0; j < k; ++j) {  // partial Fisher-Yates
    std::size_t r = j + uniform_index(rng, candidates.size() - j);
    std::swap(candidates[j], candidates[r]);
    std::size_t pos = candidates[j];
    out.labels[pos] = tokens[pos];
    out.input[pos] = SpecialTokens::mask;
  }
  return out;
}

// Pads or truncates each sequence to S and masks it with its own stream.
inline MaskedBatch make_masked_batch(const std::vector<std::vector<TokenId>>& seqs, std::int64_t seq_len, double rate,
                                     std::uint64_t seed) {
  MaskedBatch b;
  b.batch = static_cast<std::int64_t>(seqs.size());
  b.seq_len = seq_len;
  b.input.assign(static_cast<std::size_t>(b.batch * seq_len), SpecialTokens::pad);
  b.labels.assign(b.input.size(), kIgnoreLabel);
  b.attention.assign(b.input.size(), 0);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    std::vector<TokenId> t(seqs[s].begin(),
                           seqs[s].begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(seqs[s].size()), seq_len));
    if (t.empty()) continue;
    Rng rng(mix_seed(seed, {0x3a5cULL, s}));
    auto m = apply_masking(t, rate, rng);
    auto off = static_cast<std::size_t>(s) * static_cast<std::size_t>(seq_len);
    for (std::size_t i = 0; i < t.size(); ++i) {
      b.input[off + i] = m.input[i];
      b.labels[off + i] = m.labels[i];
      b.attention[off + i] = 1;
    }
  }
  return b;
}

// Sequences for classification: ids (B x S, padded), valid lengths, labels.
struct ClassBatch {
  std::int64_t batch = 0, seq_len = 0;
  std::vector<TokenId> input;
  std::vector<std::uint8_t> attention;
  std::vector<std::int64_t> labels;
};

// "<s> a </s>" or "<s> a </s> </s> b </s>", truncated to S.
inline std::vector<TokenId> classification_ids(const TokenizerModel& tok, std::string_view a,
                                               std::optional<std::string_view> b, std::int64_t seq_len) {
  std::vector<TokenId> ids{SpecialTokens::bos};
  auto ea = tok.encode(a);
  ids.insert(ids.end(), ea.begin(), ea.end());
  ids.push_back(SpecialTokens::eos);
  if (b) {
    ids.push_back(SpecialTokens::eos);
    auto eb = tok.encode(*b);
    ids.insert(ids.end(), eb.begin(), eb.end());
    ids.push_back(SpecialTokens::eos);
  }
  if (static_cast<std::int64_t>(ids.size()) > seq_len) ids.resize(static_cast<std::size_t>(seq_len));
  return ids;
}

inline ClassBatch make_class_batch(const std::vector<std::vector<TokenId>>& seqs, const std::vector<std::int64_t>& labels,
                                   std::int64_t seq_len) {
  if (seqs.size() != labels.size()) throw Error("make_class_batch: sequence/label count mismatch");
  ClassBatch b;
  b.batch = static_cast<std::int64_t>(seqs.size());
  b.seq_len = seq_len;
  b.input.assign(static_cast<std::size_t>(b.batch * seq_len), SpecialTokens::pad);
  b.attention.assign(b.input.size(), 0);
  b.labels = labels;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    auto n = std::min<std::size_t>(seqs[s].size(), static_cast<std::size_t>(seq_len));
    if (n == 0) throw Error("make_class_batch: empty sequence");
    for (std::size_t i = 0; i < n; ++i) {
      b.input[s * static_cast<std::size_t>(seq_len) + i] = seqs[s][i];
      b.attention[s * static_cast<std::size_t>(seq_len) + i] = 1;
    }
  }
  return b;
}

// ---- building blocks ----------------------------------------------------------

namespace detail {

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

inline Mat layer_norm(const Mat& x, const LayerNormParams& p, LnCache& c) {
  const auto n = static_cast<double>(x.cols());
  Eigen::VectorXd mu = x.rowwise().sum() / n;
  Mat xc = x.colwise() - mu;
  Eigen::VectorXd var = xc.array().square().rowwise().sum() / n;
  c.rstd = (var.array() + kLayerNormEps).rsqrt();
  c.xhat = xc.array().colwise() * c.rstd.array();
  Mat y = c.xhat.array().rowwise() * p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const LayerNormParams& p, const LnCache& c, LayerNormParams& g) {
  g.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias += dy.colwise().sum();
  const auto n = static_cast<double>(dy.cols());
  Mat dxhat = dy.array().rowwise() * p.gain.row(0).array();
  Eigen::VectorXd s1 = dxhat.rowwise().sum();
  Eigen::VectorXd s2 = (dxhat.array() * c.xhat.array()).rowwise().sum();
  Mat dx = (n * dxhat.array() - c.xhat.array().colwise() * s2.array()).colwise() - s1.array();
  dx = dx.array().colwise() * (c.rstd.array() / n);
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * std::exp(-0.5 * x * x) * 0.3989422804014327;
}

// Inverted dropout mask: entries 0 or 1/(1-p).
inline Mat dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng& rng) {
  Mat m(r, c);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

struct LayerCache {
  Mat x, q, k, v, ctx;
  std::vector<Mat> probs, probs_drop;
  Mat attn_drop;
  LnCache ln_attn;
  Mat h1, ff_pre, ff_act, ff_drop;
  LnCache ln_ffn;
};

struct EncoderCache {
  std::int64_t len = 0;  // real tokens; positions >= len are padding
  std::vector<TokenId> ids;
  LnCache emb_ln;
  Mat emb_drop;
  Mat e;  // embedding output after LN + dropout, S x E
  LnCache proj_ln;
  std::vector<LayerCache> layers;
  Mat out;  // S x H
};

struct DropoutPlan {
  bool train = false;
  double p = 0.0;
  Rng* rng = nullptr;
  bool on() const { return train && p > 0.0; }
};

inline Mat encoder_forward(const ModelParams& P, const TokenId* ids, const std::uint8_t* attention, std::int64_t S,
                           DropoutPlan drop, EncoderCache* cache) {
  const auto& cfg = P.config;
  const auto H = cfg.hidden, A = cfg.heads, K = cfg.key_size();
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.ids.assign(ids, ids + S);
  c.len = 0;
  for (std::int64_t i = 0; i < S; ++i)
    if (attention[i]) c.len = i + 1;

  Mat x(S, cfg.embedding);
  for (std::int64_t i = 0; i < S; ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab) throw Error("token id " + std::to_string(ids[i]) + " outside vocabulary");
    x.row(i) = P.tok_emb.row(ids[i]) + P.pos_emb.row(i);
  }
  Mat e = layer_norm(x, P.emb_ln, c.emb_ln);
  if (drop.on()) {
    c.emb_drop = dropout_mask(e.rows(), e.cols(), drop.p, *drop.rng);
    e = e.cwiseProduct(c.emb_drop);
  }
  c.e = e;
  Mat h = e * P.proj_w;
  h.rowwise() += P.proj_b.row(0);
  h = layer_norm(h, P.proj_ln, c.proj_ln);

  const double scale = 1.0 / std::sqrt(static_cast<double>(K));
  c.layers.assign(P.layers.size(), {});
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& W = P.layers[l];
    auto& lc = c.layers[l];
    lc.x = h;
    lc.q = h * W.wq;
    lc.q.rowwise() += W.bq.row(0);
    lc.k = h * W.wk;
    lc.k.rowwise() += W.bk.row(0);
    lc.v = h * W.wv;
    lc.v.rowwise() += W.bv.row(0);
    lc.ctx = Mat::Zero(S, H);
    lc.probs.resize(static_cast<std::size_t>(A));
    lc.probs_drop.assign(static_cast<std::size_t>(A), Mat());
    for (std::int64_t a = 0; a < A; ++a) {
      Mat scores = lc.q.middleCols(a * K, K) * lc.k.middleCols(a * K, K).transpose() * scale;
      // an all-padding row attends everywhere; it is never labeled
      if (c.len > 0)
        for (std::int64_t j = 0; j < S; ++j)
          if (!attention[j]) scores.col(j).setConstant(-std::numeric_limits<double>::infinity());
      Eigen::VectorXd mx = scores.rowwise().maxCoeff();
      Mat pr = (scores.colwise() - mx).array().exp();
      Eigen::VectorXd sum = pr.rowwise().sum();
      pr = pr.array().colwise() / sum.array();
      lc.probs[static_cast<std::size_t>(a)] = pr;
      if (drop.on()) {
        auto& dm = lc.probs_drop[static_cast<std::size_t>(a)];
        dm = dropout_mask(S, S, drop.p, *drop.rng);
        pr = pr.cwiseProduct(dm);
      }
      lc.ctx.middleCols(a * K, K) = pr * lc.v.middleCols(a * K, K);
    }
    Mat attn = lc.ctx * W.wo;
    attn.rowwise() += W.bo.row(0);
    if (drop.on()) {
      lc.attn_drop = dropout_mask(S, H, drop.p, *drop.rng);
      attn = attn.cwiseProduct(lc.attn_drop);
    }
    lc.h1 = layer_norm(h + attn, W.ln_attn, lc.ln_attn);
    lc.ff_pre = lc.h1 * W.w_in;
    lc.ff_pre.rowwise() += W.b_in.row(0);
    lc.ff_act = lc.ff_pre.unaryExpr([](double v) { return gelu(v); });
    Mat ff = lc.ff_act * W.w_out;
    ff.rowwise() += W.b_out.row(0);
    if (drop.on()) {
      lc.ff_drop = dropout_mask(S, H, drop.p, *drop.rng);
      ff = ff.cwiseProduct(lc.ff_drop);
    }
    h = layer_norm(lc.h1 + ff, W.ln_ffn, lc.ln_ffn);
  }
  c.out = h;
  return h;
}

// Accumulates parameter gradients given d(loss)/d(encoder output).
inline void encoder_backward(const ModelParams& P, const EncoderCache& c, Mat dh, ModelParams& G) {
  const auto& cfg = P.config;
  const auto A = cfg.heads, K = cfg.key_size();
  const auto S = static_cast<std::int64_t>(c.ids.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(K));
  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& W = P.layers[li];
    auto& GW = G.layers[li];
    const auto& lc = c.layers[li];
    // h = LN(h1 + ff)
    Mat dsum = layer_norm_backward(dh, W.ln_ffn, lc.ln_ffn, GW.ln_ffn);
    Mat dff = dsum;
    if (lc.ff_drop.size()) dff = dff.cwiseProduct(lc.ff_drop);
    GW.w_out.noalias() += lc.ff_act.transpose() * dff;
    GW.b_out += dff.colwise().sum();
    Mat dact = dff * W.w_out.transpose();
    Mat dpre = dact.cwiseProduct(lc.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    GW.w_in.noalias() += lc.h1.transpose() * dpre;
    GW.b_in += dpre.colwise().sum();
    Mat dh1 = dsum + dpre * W.w_in.transpose();
    // h1 = LN(x + attn)
    Mat dsum1 = layer_norm_backward(dh1, W.ln_attn, lc.ln_attn, GW.ln_attn);
    Mat dattn = dsum1;
    if (lc.attn_drop.size()) dattn = dattn.cwiseProduct(lc.attn_drop);
    GW.wo.noalias() += lc.ctx.transpose() * dattn;
    GW.bo += dattn.colwise().sum();
    Mat dctx = dattn * W.wo.transpose();
    Mat dq = Mat::Zero(S, cfg.hidden), dk = Mat::Zero(S, cfg.hidden), dv = Mat::Zero(S, cfg.hidden);
    for (std::int64_t a = 0; a < A; ++a) {
      const Mat& pr = lc.probs[static_cast<std::size_t>(a)];
      const Mat& dm = lc.probs_drop[static_cast<std::size_t>(a)];
      Mat pd = dm.size() ? Mat(pr.cwiseProduct(dm)) : pr;
      Mat dctx_a = dctx.middleCols(a * K, K);
      dv.middleCols(a * K, K) = pd.transpose() * dctx_a;
      Mat dp = dctx_a * lc.v.middleCols(a * K, K).transpose();
      if (dm.size()) dp = dp.cwiseProduct(dm);
      Eigen::VectorXd rs = (dp.cwiseProduct(pr)).rowwise().sum();
      Mat ds = pr.cwiseProduct(Mat(dp.colwise() - rs)) * scale;
      dq.middleCols(a * K, K) = ds * lc.k.middleCols(a * K, K);
      dk.middleCols(a * K, K) = ds.transpose() * lc.q.middleCols(a * K, K);
    }
    GW.wq.noalias() += lc.x.transpose() * dq;
    GW.bq += dq.colwise().sum();
    GW.wk.noalias() += lc.x.transpose() * dk;
    GW.bk += dk.colwise().sum();
    GW.wv.noalias() += lc.x.transpose() * dv;
    GW.bv += dv.colwise().sum();
    dh = dsum1 + dq * W.wq.transpose() + dk * W.wk.transpose() + dv * W.wv.transpose();
  }
  // h0 = LN(e W + b)
  Mat dproj = layer_norm_backward(dh, P.proj_ln, c.proj_ln, G.proj_ln);
  G.proj_w.noalias() += c.e.transpose() * dproj;
  G.proj_b += dproj.colwise().sum();
  Mat de = dproj * P.proj_w.transpose();
  if (c.emb_drop.size()) de = de.cwiseProduct(c.emb_drop);
  Mat dx = layer_norm_backward(de, P.emb_ln, c.emb_ln, G.emb_ln);
  for (std::int64_t i = 0; i < S; ++i) {
    G.tok_emb.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    G.pos_emb.row(i) += dx.row(i);
  }
}

struct HeadCache {
  Mat x, t_pre, t_act, u;
  LnCache ln;
};

inline Mat mlm_head_forward(const ModelParams& P, const Mat& x, HeadCache& hc) {
  hc.x = x;
  hc.t_pre = x * P.head_w;
  hc.t_pre.rowwise() += P.head_b.row(0);
  hc.t_act = hc.t_pre.unaryExpr([](double v) { return gelu(v); });
  hc.u = layer_norm(hc.t_act, P.head_ln, hc.ln);
  Mat logits = hc.u * P.dec_w;
  logits.rowwise() += P.dec_b.row(0);
  return logits;
}

inline Mat mlm_head_backward(const ModelParams& P, const HeadCache& hc, const Mat& dlogits, ModelParams& G) {
  G.dec_w.noalias() += hc.u.transpose() * dlogits;
  G.dec_b += dlogits.colwise().sum();
  Mat du = dlogits * P.dec_w.transpose();
  Mat dact = layer_norm_backward(du, P.head_ln, hc.ln, G.head_ln);
  Mat dpre = dact.cwiseProduct(hc.t_pre.unaryExpr([](double v) { return gelu_grad(v); }));
  G.head_w.noalias() += hc.x.transpose() * dpre;
  G.head_b += dpre.colwise().sum();
  return dpre * P.head_w.transpose();
}

// Row-wise softmax cross-entropy. Returns summed loss; if dlogits is given it
// receives (softmax - onehot) * scale.
inline double softmax_xent(const Mat& logits, const std::vector<std::int64_t>& targets, double scale, Mat* dlogits) {
  double loss = 0.0;
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    Eigen::RowVectorXd ex = (logits.row(r).array() - mx).exp();
    double z = ex.sum();
    auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
    loss += std::log(z) - (logits(r, t) - mx);
    if (dlogits) {
      dlogits->row(r) = ex / z * scale;
      (*dlogits)(r, t) -= scale;
    }
  }
  return loss;
}

}  // namespace detail

// ---- MLM ----------------------------------------------------------------------

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  unsigned threads = 1;
};

struct MlmOutput {
  Mat logits;  // (B*S) x V
  double loss = 0.0;
};

inline void check_batch(const ModelParams& P, const MaskedBatch& b) {
  if (b.seq_len > P.config.max_positions) throw Error("batch sequence length exceeds position slots");
  if (static_cast<std::int64_t>(b.input.size()) != b.batch * b.seq_len) throw Error("malformed batch");
}

// Full logits at every position plus the mean cross-entropy over labeled
// positions.
inline MlmOutput forward_mlm(const ModelParams& P, const MaskedBatch& b, const ForwardOptions& opt = {}) {
  check_batch(P, b);
  const auto n_labels = b.labeled();
  if (n_labels == 0) throw Error("forward_mlm: batch has no labeled positions");
  MlmOutput out;
  out.logits.resize(b.batch * b.seq_len, P.config.vocab);
  std::vector<double> losses(static_cast<std::size_t>(b.batch), 0.0);
  parallel_for(static_cast<std::size_t>(b.batch), opt.threads, [&](std::size_t s) {
    const auto off = static_cast<std::int64_t>(s) * b.seq_len;
    Rng rng(mix_seed(opt.dropout_seed, {0xd00dULL, s}));
    detail::DropoutPlan drop{opt.train, P.config.dropout, &rng};
    Mat h = detail::encoder_forward(P, b.input.data() + off, b.attention.data() + off, b.seq_len, drop, nullptr);
    detail::HeadCache hc;
    Mat logits = detail::mlm_head_forward(P, h, hc);
    out.logits.middleRows(off, b.seq_len) = logits;
    std::vector<std::int64_t> rows, tgt;
    for (std::int64_t i = 0; i < b.seq_len; ++i)
      if (b.labels[static_cast<std::size_t>(off + i)] != kIgnoreLabel) {
        rows.push_back(i);
        tgt.push_back(b.labels[static_cast<std::size_t>(off + i)]);
      }
    if (rows.empty()) return;
    Mat sel(static_cast<Eigen::Index>(rows.size()), logits.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sel.row(static_cast<Eigen::Index>(r)) = logits.row(rows[r]);
    losses[s] = detail::softmax_xent(sel, tgt, 0.0, nullptr);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  out.loss = total / static_cast<double>(n_labels);
  return out;
}

inline double perplexity(double loss) { return std::exp(loss); }

// Sequences are processed in fixed chunks whose gradients are summed in chunk
// order, so the result does not depend on the thread count.
inline constexpr std::size_t kGradChunk = 4;

// Mean MLM loss over labeled positions and its gradient (accumulated into
// `grads`, which must be shaped like `P`). `loss_scale` multiplies both.
inline double mlm_loss_and_grad(const ModelParams& P, const MaskedBatch& b, ModelParams& grads,
                                const ForwardOptions& opt = {}, double loss_scale = 1.0) {
  check_batch(P, b);
  const auto n_labels = b.labeled();
  if (n_labels == 0) throw Error("mlm_loss_and_grad: batch has no labeled positions");
  const double scale = loss_scale / static_cast<double>(n_labels);
  const std::size_t B = static_cast<std::size_t>(b.batch);
  const std::size_t chunks = (B + kGradChunk - 1) / kGradChunk;
  std::vector<ModelParams> partial(chunks);
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, opt.threads, [&](std::size_t ci) {
    ModelParams& G = partial[ci];
    G = zero_params(P.config);
    for (std::size_t s = ci * kGradChunk; s < std::min(B, (ci + 1) * kGradChunk); ++s) {
      const auto off = static_cast<std::int64_t>(s) * b.seq_len;
      std::vector<std::int64_t> rows, tgt;
      for (std::int64_t i = 0; i < b.seq_len; ++i)
        if (b.labels[static_cast<std::size_t>(off + i)] != kIgnoreLabel) {
          rows.push_back(i);
          tgt.push_back(b.labels[static_cast<std::size_t>(off + i)]);
        }
      if (rows.empty()) continue;
      Rng rng(mix_seed(opt.dropout_seed, {0xd00dULL, s}));
      detail::DropoutPlan drop{opt.train, P.config.dropout, &rng};
      detail::EncoderCache cache;
      Mat h = detail::encoder_forward(P, b.input.data() + off, b.attention.data() + off, b.seq_len, drop, &cache);
      Mat sel(static_cast<Eigen::Index>(rows.size()), h.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) sel.row(static_cast<Eigen::Index>(r)) = h.row(rows[r]);
      detail::HeadCache hc;
      Mat logits = detail::mlm_head_forward(P, sel, hc);
      Mat dlogits;
      losses[ci] += detail::softmax_xent(logits, tgt, scale, &dlogits);
      Mat dsel = detail::mlm_head_backward(P, hc, dlogits, G);
      Mat dh = Mat::Zero(h.rows(), h.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) dh.row(rows[r]) += dsel.row(static_cast<Eigen::Index>(r));
      detail::encoder_backward(P, cache, std::move(dh), G);
    }
  });
  double total = 0.0;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    total += losses[ci];
    zip_params(grads, partial[ci], [](const std::string&, Mat& g, const Mat& p, ParamKind) { g += p; });
  }
  return loss_scale * total / static_cast<double>(n_labels);
}

// ---- classification --------------------------------------------------------

struct ClassifierOutput {
  Mat logits;  // B x C
  double loss = 0.0;
};

inline void check_labels(const ClassBatch& b, std::int64_t num_classes) {
  if (num_classes < 1) throw Error("classifier: need at least one class");
  for (auto l : b.labels)
    if (l < 0 || l >= num_classes)
      throw Error("classifier: label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
}

// First-position representation -> linear head -> mean cross-entropy.
inline ClassifierOutput forward_classifier(const ModelParams& P, const ClassifierHead& head, const ClassBatch& b,
                                           std::int64_t num_classes, const ForwardOptions& opt = {}) {
  if (head.num_classes() != num_classes) throw Error("classifier: head width does not match num_classes");
  check_labels(b, num_classes);
  ClassifierOutput out;
  out.logits.resize(b.batch, num_classes);
  parallel_for(static_cast<std::size_t>(b.batch), opt.threads, [&](std::size_t s) {
    const auto off = static_cast<std::int64_t>(s) * b.seq_len;
    Rng rng(mix_seed(opt.dropout_seed, {0xc0deULL, s}));
    detail::DropoutPlan drop{opt.train, P.config.dropout, &rng};
    Mat h = detail::encoder_forward(P, b.input.data() + off, b.attention.data() + off, b.seq_len, drop, nullptr);
    out.logits.row(static_cast<Eigen::Index>(s)) = h.row(0) * head.w + head.b;
  });
  if (b.batch > 0) out.loss = detail::softmax_xent(out.logits, b.labels, 0.0, nullptr) / static_cast<double>(b.batch);
  return out;
}

inline double classifier_loss_and_grad(const ModelParams& P, const ClassifierHead& head, const ClassBatch& b,
                                       std::int64_t num_classes, ModelParams& grads, ClassifierHead& head_grads,
                                       const ForwardOptions& opt = {}) {
  if (head.num_classes() != num_classes) throw Error("classifier: head width does not match num_classes");
  check_labels(b, num_classes);
  if (b.batch == 0) throw Error("classifier: empty batch");
  const double scale = 1.0 / static_cast<double>(b.batch);
  const std::size_t B = static_cast<std::size_t>(b.batch);
  const std::size_t chunks = (B + kGradChunk - 1) / kGradChunk;
  std::vector<ModelParams> partial(chunks);
  std::vector<ClassifierHead> partial_head(chunks);
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, opt.threads, [&](std::size_t ci) {
    ModelParams& G = partial[ci];
    G = zero_params(P.config);
    ClassifierHead& GH = partial_head[ci];
    GH = {Mat::Zero(head.w.rows(), head.w.cols()), Mat::Zero(1, head.b.cols())};
    for (std::size_t s = ci * kGradChunk; s < std::min(B, (ci + 1) * kGradChunk); ++s) {
      const auto off = static_cast<std::int64_t>(s) * b.seq_len;
      Rng rng(mix_seed(opt.dropout_seed, {0xc0deULL, s}));
      detail::DropoutPlan drop{opt.train, P.config.dropout, &rng};
      detail::EncoderCache cache;
      Mat h = detail::encoder_forward(P, b.input.data() + off, b.attention.data() + off, b.seq_len, drop, &cache);
      Mat pooled = h.row(0);
      Mat logits = pooled * head.w + head.b;
      Mat dlogits;
      losses[ci] += detail::softmax_xent(logits, {b.labels[s]}, scale, &dlogits);
      GH.w.noalias() += pooled.transpose() * dlogits;
      GH.b += dlogits;
      Mat dh = Mat::Zero(h.rows(), h.cols());
      dh.row(0) = dlogits * head.w.transpose();
      detail::encoder_backward(P, cache, std::move(dh), G);
    }
  });
  double total = 0.0;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    total += losses[ci];
    zip_params(grads, partial[ci], [](const std::string&, Mat& g, const Mat& p, ParamKind) { g += p; });
    head_grads.w += partial_head[ci].w;
    head_grads.b += partial_head[ci].b;
  }
  return total / static_cast<double>(b.batch);
}

inline double accuracy(const Mat& logits, const std::vector<std::int64_t>& labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg;
    logits.row(r).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(r)]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace dslab
