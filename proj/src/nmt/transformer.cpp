/* Copyright 2026 The varmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "varmt/nmt/transformer.hpp"

#include <cmath>
#include <limits>

#include "varmt/error.hpp"

namespace varmt {

using Eigen::Index;

void TransformerConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (model_dim <= 0) throw ConfigError("model_dim must be positive");
  if (num_heads <= 0 || model_dim % num_heads != 0)
    throw ConfigError("num_heads must divide model_dim (" + std::to_string(model_dim) + ")");
  if (ffn_dim <= 0) throw ConfigError("ffn_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_positions < static_cast<int>(kMaxUnits) + 2)
    throw ConfigError("max_positions must be >= " + std::to_string(kMaxUnits + 2));
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping

namespace {

template <typename P, typename Out>
void collect_tensors(P& p, Out& out) {
  auto add = [&](std::string name, auto& m) { out.emplace_back(std::move(name), &m); };
  auto norm = [&](const std::string& n, auto& l) {
    add(n + ".gamma", l.gamma);
    add(n + ".beta", l.beta);
  };
  auto attention = [&](const std::string& n, auto& a) {
    add(n + ".wq", a.wq);
    add(n + ".bq", a.bq);
    add(n + ".wk", a.wk);
    add(n + ".bk", a.bk);
    add(n + ".wv", a.wv);
    add(n + ".bv", a.bv);
    add(n + ".wo", a.wo);
    add(n + ".bo", a.bo);
  };
  auto ffn = [&](const std::string& n, auto& f) {
    add(n + ".w1", f.w1);
    add(n + ".b1", f.b1);
    add(n + ".w2", f.w2);
    add(n + ".b2", f.b2);
  };
  if (p.target_embedding.size() == 0) {
    add("embedding", p.embedding);
  } else {
    add("source_embedding", p.embedding);
    add("target_embedding", p.target_embedding);
    add("output_projection", p.output_projection);
  }
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string n = "encoder." + std::to_string(l);
    norm(n + ".norm_self", p.encoder[l].norm_self);
    attention(n + ".self", p.encoder[l].self);
    norm(n + ".norm_ffn", p.encoder[l].norm_ffn);
    ffn(n + ".ffn", p.encoder[l].ffn);
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string n = "decoder." + std::to_string(l);
    norm(n + ".norm_self", p.decoder[l].norm_self);
    attention(n + ".self", p.decoder[l].self);
    norm(n + ".norm_cross", p.decoder[l].norm_cross);
    attention(n + ".cross", p.decoder[l].cross);
    norm(n + ".norm_ffn", p.decoder[l].norm_ffn);
    ffn(n + ".ffn", p.decoder[l].ffn);
  }
  norm("encoder.norm", p.encoder_norm);
  norm("decoder.norm", p.decoder_norm);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect_tensors(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  collect_tensors(*this, out);
  return out;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& [name, m] : z.tensors()) m->setZero();
  return z;
}

bool ModelParams::all_finite() const {
  for (const auto& [name, m] : tensors())
    if (!m->allFinite()) return false;
  return true;
}

TranslationModel init_model(const TransformerConfig& config, std::uint64_t seed, std::uint64_t subword_fingerprint) {
  config.validate();
  const Index d = config.model_dim, f = config.ffn_dim, v = config.vocab_size;
  auto norm = [&] { return LayerNormParams{Matrix(1, d), Matrix(1, d)}; };
  auto attention = [&] {
    return AttentionParams{Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d),
                           Matrix(1, d), Matrix(1, d), Matrix(1, d), Matrix(1, d)};
  };
  auto ffn = [&] { return FeedForwardParams{Matrix(d, f), Matrix(1, f), Matrix(f, d), Matrix(1, d)}; };

  TranslationModel model;
  model.config = config;
  model.subword_fingerprint = subword_fingerprint;
  ModelParams& p = model.params;
  p.embedding = Matrix(v, d);
  if (!config.share_embeddings) {
    p.target_embedding = Matrix(v, d);
    p.output_projection = Matrix(v, d);
  }
  for (int l = 0; l < config.num_layers; ++l) {
    p.encoder.push_back({norm(), attention(), norm(), ffn()});
    p.decoder.push_back({norm(), attention(), norm(), attention(), norm(), ffn()});
  }
  p.encoder_norm = norm();
  p.decoder_norm = norm();

  Rng rng(seed);
  for (auto& [name, m] : p.tensors()) {
    if (ends_with(name, ".gamma")) {
      m->setOnes();
    } else if (m->rows() == 1) {
      m->setZero();
    } else {
      const bool embedding = ends_with(name, "embedding") || name == "output_projection";
      const double a = embedding ? std::sqrt(3.0 / static_cast<double>(d))
                                 : std::sqrt(6.0 / static_cast<double>(m->rows() + m->cols()));
      for (Index i = 0; i < m->size(); ++i) m->data()[i] = uniform_real(rng, -a, a);
    }
  }
  return model;
}

TokenId decoder_start(std::span<const TokenId> source) {
  if (!source.empty() && SubwordModel::is_variety_token(source.front())) return source.front();
  return SubwordModel::kBos;
}

PreparedExample prepare_example(const SegmentedPair& pair) {
  PreparedExample ex;
  ex.encoder_input = pair.source;
  ex.decoder_input.reserve(pair.target.size() + 1);
  ex.decoder_input.push_back(decoder_start(pair.source));
  ex.decoder_input.insert(ex.decoder_input.end(), pair.target.begin(), pair.target.end());
  ex.decoder_output = pair.target;
  ex.decoder_output.push_back(SubwordModel::kEos);
  return ex;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

constexpr double kNormEps = 1e-6;

struct Segment {
  Index offset = 0;
  Index length = 0;
};

struct Layout {
  std::vector<TokenId> enc_ids, dec_in, dec_out;
  std::vector<int> enc_pos, dec_pos;
  std::vector<Segment> enc, dec;
};

void check_sequence(std::span<const TokenId> ids, const TransformerConfig& cfg, const char* what) {
  if (ids.empty()) throw LengthError(std::string(what) + " is empty");
  if (ids.size() > static_cast<std::size_t>(cfg.max_positions))
    throw LengthError(std::string(what) + " has " + std::to_string(ids.size()) + " positions (max " +
                      std::to_string(cfg.max_positions) + ")");
  for (TokenId id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw VocabError(std::string(what) + ": id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
}

Layout make_layout(const std::vector<PreparedExample>& examples, const TransformerConfig& cfg) {
  Layout L;
  for (const auto& ex : examples) {
    check_sequence(ex.encoder_input, cfg, "encoder input");
    check_sequence(ex.decoder_input, cfg, "decoder input");
    L.enc.push_back({static_cast<Index>(L.enc_ids.size()), static_cast<Index>(ex.encoder_input.size())});
    L.dec.push_back({static_cast<Index>(L.dec_in.size()), static_cast<Index>(ex.decoder_input.size())});
    for (std::size_t i = 0; i < ex.encoder_input.size(); ++i) {
      L.enc_ids.push_back(ex.encoder_input[i]);
      L.enc_pos.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < ex.decoder_input.size(); ++i) {
      L.dec_in.push_back(ex.decoder_input[i]);
      L.dec_out.push_back(ex.decoder_output[i]);
      L.dec_pos.push_back(static_cast<int>(i));
    }
  }
  return L;
}

double positional_value(int pos, Index j, Index d) {
  const double rate = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
  const double angle = static_cast<double>(pos) * rate;
  return j % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Matrix positional_table(int n, Index d) {
  Matrix pe(n, d);
  for (int pos = 0; pos < n; ++pos)
    for (Index j = 0; j < d; ++j) pe(pos, j) = positional_value(pos, j, d);
  return pe;
}

Matrix embed(const Matrix& table, const std::vector<TokenId>& ids, const std::vector<int>& pos, const Matrix& pe) {
  const double scale = std::sqrt(static_cast<double>(table.cols()));
  Matrix x(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) x.row(i) = table.row(ids[i]) * scale + pe.row(pos[i]);
  return x;
}

void embed_backward(Matrix& grad_table, const std::vector<TokenId>& ids, const Matrix& dx) {
  const double scale = std::sqrt(static_cast<double>(grad_table.cols()));
  for (std::size_t i = 0; i < ids.size(); ++i) grad_table.row(ids[i]) += dx.row(i) * scale;
}

void log_softmax_rows(Matrix& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
}

void softmax_rows(Matrix& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
}

struct NormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

Matrix norm_forward(const Matrix& x, const LayerNormParams& p, NormCache* cache) {
  const Index n = x.rows(), d = x.cols();
  Matrix y(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(n);
  }
  for (Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double r = 1.0 / std::sqrt(var + kNormEps);
    Eigen::RowVectorXd xhat = (x.row(i).array() - mu) * r;
    y.row(i) = (xhat.array() * p.gamma.row(0).array() + p.beta.row(0).array()).matrix();
    if (cache) {
      cache->xhat.row(i) = xhat;
      cache->rstd(i) = r;
    }
  }
  return y;
}

Matrix norm_backward(const Matrix& dy, const LayerNormParams& p, const NormCache& c, LayerNormParams& g) {
  g.gamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta.row(0) += dy.colwise().sum();
  Matrix dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    Eigen::RowVectorXd dxhat = (dy.row(i).array() * p.gamma.row(0).array()).matrix();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat.array() * c.xhat.row(i).array()).mean();
    dx.row(i) = (c.rstd(i) * (dxhat.array() - m1 - c.xhat.row(i).array() * m2)).matrix();
  }
  return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

struct AttentionCache {
  Matrix xq, xkv, q, k, v, ctx;
  std::vector<Matrix> probs;  // [segment * heads + head]
};

Matrix attention_forward(const AttentionParams& p, const Matrix& xq, const std::vector<Segment>& qs, const Matrix& xkv,
                         const std::vector<Segment>& ks, bool causal, int heads, AttentionCache* cache) {
  Matrix q = affine(xq, p.wq, p.bq);
  Matrix k = affine(xkv, p.wk, p.bk);
  Matrix v = affine(xkv, p.wv, p.bv);
  const Index d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix ctx(xq.rows(), d);
  if (cache) cache->probs.resize(qs.size() * static_cast<std::size_t>(heads));
  for (std::size_t s = 0; s < qs.size(); ++s) {
    for (int h = 0; h < heads; ++h) {
      const auto Q = q.block(qs[s].offset, h * dh, qs[s].length, dh);
      const auto K = k.block(ks[s].offset, h * dh, ks[s].length, dh);
      const auto V = v.block(ks[s].offset, h * dh, ks[s].length, dh);
      Matrix S = (Q * K.transpose()) * scale;
      if (causal)
        for (Index i = 0; i < S.rows(); ++i)
          for (Index j = i + 1; j < S.cols(); ++j) S(i, j) = -std::numeric_limits<double>::infinity();
      softmax_rows(S);
      ctx.block(qs[s].offset, h * dh, qs[s].length, dh).noalias() = S * V;
      if (cache) cache->probs[s * heads + h] = std::move(S);
    }
  }
  Matrix out = affine(ctx, p.wo, p.bo);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
  }
  return out;
}

void attention_backward(const AttentionParams& p, const AttentionCache& c, const Matrix& dout,
                        const std::vector<Segment>& qs, const std::vector<Segment>& ks, int heads, AttentionParams& g,
                        Matrix& dxq, Matrix& dxkv) {
  g.wo.noalias() += c.ctx.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Matrix dctx = dout * p.wo.transpose();
  const Index d = c.q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq = Matrix::Zero(c.q.rows(), d);
  Matrix dk = Matrix::Zero(c.k.rows(), d);
  Matrix dv = Matrix::Zero(c.v.rows(), d);
  for (std::size_t s = 0; s < qs.size(); ++s) {
    for (int h = 0; h < heads; ++h) {
      const Matrix& P = c.probs[s * heads + h];
      const auto Q = c.q.block(qs[s].offset, h * dh, qs[s].length, dh);
      const auto K = c.k.block(ks[s].offset, h * dh, ks[s].length, dh);
      const auto V = c.v.block(ks[s].offset, h * dh, ks[s].length, dh);
      const auto dC = dctx.block(qs[s].offset, h * dh, qs[s].length, dh);
      const Matrix dP = dC * V.transpose();
      dv.block(ks[s].offset, h * dh, ks[s].length, dh).noalias() += P.transpose() * dC;
      const Eigen::VectorXd r = (dP.array() * P.array()).rowwise().sum();
      const Matrix dS = (P.array() * (dP.colwise() - r).array()).matrix() * scale;
      dq.block(qs[s].offset, h * dh, qs[s].length, dh).noalias() += dS * K;
      dk.block(ks[s].offset, h * dh, ks[s].length, dh).noalias() += dS.transpose() * Q;
    }
  }
  g.wq.noalias() += c.xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += c.xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += c.xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dxq = dq * p.wq.transpose();
  dxkv = dk * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
}

struct FeedForwardCache {
  Matrix x, h;
};

Matrix ffn_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardCache* cache) {
  Matrix h = affine(x, p.w1, p.b1).cwiseMax(0.0);
  Matrix y = affine(h, p.w2, p.b2);
  if (cache) {
    cache->x = x;
    cache->h = std::move(h);
  }
  return y;
}

Matrix ffn_backward(const FeedForwardParams& p, const FeedForwardCache& c, const Matrix& dy, FeedForwardParams& g) {
  g.w2.noalias() += c.h.transpose() * dy;
  g.b2.row(0) += dy.colwise().sum();
  Matrix dh = dy * p.w2.transpose();
  dh = (c.h.array() > 0.0).select(dh, 0.0);
  g.w1.noalias() += c.x.transpose() * dh;
  g.b1.row(0) += dh.colwise().sum();
  return dh * p.w1.transpose();
}

// Applies inverted dropout in place; the mask stays empty when inactive.
void dropout(Matrix& x, double rate, Rng* rng, Matrix* mask) {
  if (rng == nullptr || rate <= 0.0) {
    if (mask) mask->resize(0, 0);
    return;
  }
  Matrix m(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_unit(*rng) < rate ? 0.0 : keep;
  x.array() *= m.array();
  if (mask) *mask = std::move(m);
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

struct EncoderLayerCache {
  NormCache n1;
  AttentionCache self;
  Matrix m1;
  NormCache n2;
  FeedForwardCache ffn;
  Matrix m2;
};

struct DecoderLayerCache {
  NormCache n1;
  AttentionCache self;
  Matrix m1;
  NormCache n2;
  AttentionCache cross;
  Matrix m2;
  NormCache n3;
  FeedForwardCache ffn;
  Matrix m3;
};

struct ForwardCache {
  Matrix enc_mask, dec_mask;
  std::vector<EncoderLayerCache> enc;
  std::vector<DecoderLayerCache> dec;
  NormCache enc_norm, dec_norm;
  Matrix dec_hidden;
};

const Matrix& target_table(const ModelParams& p) {
  return p.target_embedding.size() ? p.target_embedding : p.embedding;
}
const Matrix& output_table(const ModelParams& p) {
  return p.output_projection.size() ? p.output_projection : p.embedding;
}
Matrix& target_table(ModelParams& p) { return p.target_embedding.size() ? p.target_embedding : p.embedding; }
Matrix& output_table(ModelParams& p) { return p.output_projection.size() ? p.output_projection : p.embedding; }

Matrix encode_batch(const TranslationModel& model, const Layout& L, const Matrix& pe, Rng* rng, ForwardCache* cache) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  Matrix x = embed(p.embedding, L.enc_ids, L.enc_pos, pe);
  dropout(x, cfg.dropout, rng, cache ? &cache->enc_mask : nullptr);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = p.encoder[l];
    EncoderLayerCache* c = cache ? &cache->enc[l] : nullptr;
    Matrix h = norm_forward(x, lp.norm_self, c ? &c->n1 : nullptr);
    Matrix a = attention_forward(lp.self, h, L.enc, h, L.enc, false, cfg.num_heads, c ? &c->self : nullptr);
    dropout(a, cfg.dropout, rng, c ? &c->m1 : nullptr);
    x += a;
    h = norm_forward(x, lp.norm_ffn, c ? &c->n2 : nullptr);
    Matrix f = ffn_forward(lp.ffn, h, c ? &c->ffn : nullptr);
    dropout(f, cfg.dropout, rng, c ? &c->m2 : nullptr);
    x += f;
  }
  return norm_forward(x, p.encoder_norm, cache ? &cache->enc_norm : nullptr);
}

// Returns log-probability rows for every decoder position.
Matrix run_forward(const TranslationModel& model, const Layout& L, Rng* rng, ForwardCache* cache, Matrix* memory_out) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (cache) {
    cache->enc.resize(cfg.num_layers);
    cache->dec.resize(cfg.num_layers);
  }
  const Matrix pe = positional_table(cfg.max_positions, cfg.model_dim);
  Matrix memory = encode_batch(model, L, pe, rng, cache);

  Matrix y = embed(target_table(p), L.dec_in, L.dec_pos, pe);
  dropout(y, cfg.dropout, rng, cache ? &cache->dec_mask : nullptr);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = p.decoder[l];
    DecoderLayerCache* c = cache ? &cache->dec[l] : nullptr;
    Matrix h = norm_forward(y, lp.norm_self, c ? &c->n1 : nullptr);
    Matrix a = attention_forward(lp.self, h, L.dec, h, L.dec, true, cfg.num_heads, c ? &c->self : nullptr);
    dropout(a, cfg.dropout, rng, c ? &c->m1 : nullptr);
    y += a;
    h = norm_forward(y, lp.norm_cross, c ? &c->n2 : nullptr);
    a = attention_forward(lp.cross, h, L.dec, memory, L.enc, false, cfg.num_heads, c ? &c->cross : nullptr);
    dropout(a, cfg.dropout, rng, c ? &c->m2 : nullptr);
    y += a;
    h = norm_forward(y, lp.norm_ffn, c ? &c->n3 : nullptr);
    Matrix f = ffn_forward(lp.ffn, h, c ? &c->ffn : nullptr);
    dropout(f, cfg.dropout, rng, c ? &c->m3 : nullptr);
    y += f;
  }
  y = norm_forward(y, p.decoder_norm, cache ? &cache->dec_norm : nullptr);
  Matrix logits = y * output_table(p).transpose();
  log_softmax_rows(logits);
  if (cache) cache->dec_hidden = std::move(y);
  if (memory_out) *memory_out = std::move(memory);
  return logits;
}

void run_backward(const TranslationModel& model, const Layout& L, const ForwardCache& c, const Matrix& dlogits,
                  ModelParams& G) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const int heads = cfg.num_heads;

  output_table(G).noalias() += dlogits.transpose() * c.dec_hidden;
  Matrix dy = dlogits * output_table(p);
  dy = norm_backward(dy, p.decoder_norm, c.dec_norm, G.decoder_norm);

  Matrix dmemory = Matrix::Zero(static_cast<Index>(L.enc_ids.size()), cfg.model_dim);
  Matrix dq, dkv;
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lp = p.decoder[l];
    auto& lg = G.decoder[l];
    const auto& lc = c.dec[l];
    Matrix dh = ffn_backward(lp.ffn, lc.ffn, dropout_backward(dy, lc.m3), lg.ffn);
    dy += norm_backward(dh, lp.norm_ffn, lc.n3, lg.norm_ffn);
    attention_backward(lp.cross, lc.cross, dropout_backward(dy, lc.m2), L.dec, L.enc, heads, lg.cross, dq, dkv);
    dmemory += dkv;
    dy += norm_backward(dq, lp.norm_cross, lc.n2, lg.norm_cross);
    attention_backward(lp.self, lc.self, dropout_backward(dy, lc.m1), L.dec, L.dec, heads, lg.self, dq, dkv);
    dq += dkv;
    dy += norm_backward(dq, lp.norm_self, lc.n1, lg.norm_self);
  }
  embed_backward(target_table(G), L.dec_in, dropout_backward(dy, c.dec_mask));

  Matrix dx = norm_backward(dmemory, p.encoder_norm, c.enc_norm, G.encoder_norm);
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lp = p.encoder[l];
    auto& lg = G.encoder[l];
    const auto& lc = c.enc[l];
    Matrix dh = ffn_backward(lp.ffn, lc.ffn, dropout_backward(dx, lc.m2), lg.ffn);
    dx += norm_backward(dh, lp.norm_ffn, lc.n2, lg.norm_ffn);
    attention_backward(lp.self, lc.self, dropout_backward(dx, lc.m1), L.enc, L.enc, heads, lg.self, dq, dkv);
    dq += dkv;
    dx += norm_backward(dq, lp.norm_self, lc.n1, lg.norm_self);
  }
  embed_backward(G.embedding, L.enc_ids, dropout_backward(dx, c.enc_mask));
}

Layout batch_layout(const TranslationModel& model, std::span<const SegmentedPair> batch) {
  if (batch.empty()) throw EmptyDataError("empty batch");
  std::vector<PreparedExample> prepared;
  prepared.reserve(batch.size());
  for (const auto& pair : batch) prepared.push_back(prepare_example(pair));
  return make_layout(prepared, model.config);
}

double smoothed_loss(const Matrix& logp, const std::vector<TokenId>& gold, double smoothing) {
  const double v = static_cast<double>(logp.cols());
  double total = 0.0;
  for (Index i = 0; i < logp.rows(); ++i)
    total -= (1.0 - smoothing) * logp(i, gold[i]) + smoothing / v * logp.row(i).sum();
  return total / static_cast<double>(logp.rows());
}

void check_smoothing(double s) {
  if (!(s >= 0.0 && s < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points

Matrix forward(const TranslationModel& model, std::span<const TokenId> source, std::span<const TokenId> target_prefix) {
  PreparedExample ex;
  ex.encoder_input.assign(source.begin(), source.end());
  ex.decoder_input.push_back(decoder_start(source));
  ex.decoder_input.insert(ex.decoder_input.end(), target_prefix.begin(), target_prefix.end());
  ex.decoder_output.assign(ex.decoder_input.size(), SubwordModel::kEos);
  const Layout L = make_layout({ex}, model.config);
  return run_forward(model, L, nullptr, nullptr, nullptr);
}

LossResult loss_and_gradients(const TranslationModel& model, std::span<const SegmentedPair> batch,
                              double label_smoothing, Rng* dropout_rng, std::int64_t batch_index) {
  check_smoothing(label_smoothing);
  const Layout L = batch_layout(model, batch);
  ForwardCache cache;
  const Matrix logp = run_forward(model, L, dropout_rng, &cache, nullptr);

  LossResult result;
  result.tokens = L.dec_out.size();
  result.loss = smoothed_loss(logp, L.dec_out, label_smoothing);
  if (!std::isfinite(result.loss))
    throw NumericError("non-finite loss" + (batch_index >= 0 ? " in batch " + std::to_string(batch_index) : std::string()));

  const double n = static_cast<double>(result.tokens);
  const double v = static_cast<double>(logp.cols());
  Matrix dlogits = logp.array().exp().matrix();
  for (Index i = 0; i < dlogits.rows(); ++i) {
    Index best = 0;
    logp.row(i).maxCoeff(&best);
    if (best == L.dec_out[i]) ++result.correct;
    dlogits.row(i).array() -= label_smoothing / v;
    dlogits(i, L.dec_out[i]) -= 1.0 - label_smoothing;
  }
  dlogits /= n;

  result.gradients = model.params.zeros_like();
  run_backward(model, L, cache, dlogits, result.gradients);
  return result;
}

double batch_loss(const TranslationModel& model, std::span<const SegmentedPair> batch, double label_smoothing) {
  check_smoothing(label_smoothing);
  const Layout L = batch_layout(model, batch);
  return smoothed_loss(run_forward(model, L, nullptr, nullptr, nullptr), L.dec_out, label_smoothing);
}

// ---------------------------------------------------------------------------
// Incremental decoding

DecoderSession::DecoderSession(const TranslationModel& model, const std::vector<std::vector<TokenId>>& sources)
    : model_(model) {
  if (sources.empty()) return;
  std::vector<PreparedExample> prepared;
  for (const auto& s : sources) prepared.push_back({s, {SubwordModel::kBos}, {SubwordModel::kEos}});
  const Layout L = make_layout(prepared, model.config);
  const Matrix pe = positional_table(model.config.max_positions, model.config.model_dim);
  const Matrix memory = encode_batch(model, L, pe, nullptr, nullptr);
  memory_keys_.resize(sources.size());
  memory_values_.resize(sources.size());
  for (int l = 0; l < model.config.num_layers; ++l) {
    const auto& cross = model.params.decoder[l].cross;
    const Matrix k = affine(memory, cross.wk, cross.bk);
    const Matrix v = affine(memory, cross.wv, cross.bv);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      memory_keys_[s].push_back(k.middleRows(L.enc[s].offset, L.enc[s].length));
      memory_values_[s].push_back(v.middleRows(L.enc[s].offset, L.enc[s].length));
    }
  }
}

DecoderSession::State DecoderSession::initial_state() const {
  State s;
  s.keys.assign(model_.config.num_layers, Matrix(0, model_.config.model_dim));
  s.values.assign(model_.config.num_layers, Matrix(0, model_.config.model_dim));
  return s;
}

namespace {

// Single-query attention over t cached rows; writes one context row.
void attend(const Eigen::Ref<const Eigen::RowVectorXd>& q, const Matrix& keys, const Matrix& values, int heads,
            Eigen::Ref<Eigen::RowVectorXd> ctx) {
  const Index d = q.size(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Eigen::VectorXd s = keys.middleCols(h * dh, dh) * q.segment(h * dh, dh).transpose() * scale;
    const double m = s.maxCoeff();
    s = (s.array() - m).exp().matrix();
    s /= s.sum();
    ctx.segment(h * dh, dh) = s.transpose() * values.middleCols(h * dh, dh);
  }
}

}  // namespace

Matrix DecoderSession::step(std::span<const std::size_t> source, std::span<State* const> states,
                            std::span<const TokenId> tokens) const {
  const auto& cfg = model_.config;
  const auto& p = model_.params;
  const Index b = static_cast<Index>(tokens.size()), d = cfg.model_dim;
  const Matrix& table = target_table(p);
  const double scale = std::sqrt(static_cast<double>(d));
  Matrix x(b, d);
  for (Index i = 0; i < b; ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || t >= cfg.vocab_size) throw VocabError("decoder token " + std::to_string(t) + " outside vocabulary");
    const int pos = static_cast<int>(states[i]->length());
    if (pos >= cfg.max_positions) throw LengthError("decoder exceeded max_positions");
    for (Index j = 0; j < d; ++j) x(i, j) = table(t, j) * scale + positional_value(pos, j, d);
  }
  Matrix ctx(b, d);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = p.decoder[l];
    Matrix h = norm_forward(x, lp.norm_self, nullptr);
    const Matrix q = affine(h, lp.self.wq, lp.self.bq);
    const Matrix k = affine(h, lp.self.wk, lp.self.bk);
    const Matrix v = affine(h, lp.self.wv, lp.self.bv);
    for (Index i = 0; i < b; ++i) {
      Matrix& K = states[i]->keys[l];
      Matrix& V = states[i]->values[l];
      K.conservativeResize(K.rows() + 1, Eigen::NoChange);
      V.conservativeResize(V.rows() + 1, Eigen::NoChange);
      K.row(K.rows() - 1) = k.row(i);
      V.row(V.rows() - 1) = v.row(i);
      attend(q.row(i), K, V, cfg.num_heads, ctx.row(i));
    }
    x += affine(ctx, lp.self.wo, lp.self.bo);
    h = norm_forward(x, lp.norm_cross, nullptr);
    const Matrix qc = affine(h, lp.cross.wq, lp.cross.bq);
    for (Index i = 0; i < b; ++i)
      attend(qc.row(i), memory_keys_[source[i]][l], memory_values_[source[i]][l], cfg.num_heads, ctx.row(i));
    x += affine(ctx, lp.cross.wo, lp.cross.bo);
    h = norm_forward(x, lp.norm_ffn, nullptr);
    x += ffn_forward(lp.ffn, h, nullptr);
  }
  x = norm_forward(x, p.decoder_norm, nullptr);
  Matrix logits = x * output_table(p).transpose();
  log_softmax_rows(logits);
  return logits;
}

}  // namespace varmt
