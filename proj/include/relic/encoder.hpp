#pragma once

#include <functional>
#include <string>
#include <vector>

#include "relic/corpus.hpp"
#include "relic/ops.hpp"
#include "relic/tensor.hpp"

namespace relic {

struct EncoderConfig {
  int vocab_size = 0;
  int max_len = 64;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ff_size = 256;
  int output_dim = 32;
  double dropout_keep = 1.0;

  void validate() const {
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
      throw std::invalid_argument("encoder config: heads must divide hidden size");
    if (output_dim < 1) throw std::invalid_argument("encoder config: output_dim must be >= 1");
    if (max_len < 3) throw std::invalid_argument("encoder config: max_len must be >= 3");
    if (vocab_size < kNumReserved)
      throw std::invalid_argument("encoder config: vocab_size too small");
  }
};

template <typename T>
struct EncoderLayerT {
  TensorT<T> ln1_gamma, ln1_beta;
  AttentionParams<T> attn;
  TensorT<T> ln2_gamma, ln2_beta;
  TensorT<T> ff_w1, ff_b1;  // hidden -> ff
  TensorT<T> ff_w2, ff_b2;  // ff -> hidden
};

// All trainable tensors of the context encoder plus the output projection and
// the score scale, which is trained jointly with everything else.
template <typename T>
struct EncoderParamsT {
  EncoderConfig config;
  TensorT<T> tok_emb;  // vocab x h
  TensorT<T> pos_emb;  // max_len x h
  std::vector<EncoderLayerT<T>> layers;
  TensorT<T> proj_w;  // h x d
  TensorT<T> proj_b;  // d
  TensorT<T> scale_a;  // scalar

  // stable (name, tensor) enumeration used by serialization, Adam and clipping
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      fn(p + "ln1.gamma", l.ln1_gamma);
      fn(p + "ln1.beta", l.ln1_beta);
      fn(p + "attn.q", l.attn.wq);
      fn(p + "attn.q_b", l.attn.bq);
      fn(p + "attn.k", l.attn.wk);
      fn(p + "attn.k_b", l.attn.bk);
      fn(p + "attn.v", l.attn.wv);
      fn(p + "attn.v_b", l.attn.bv);
      fn(p + "attn.o", l.attn.wo);
      fn(p + "attn.o_b", l.attn.bo);
      fn(p + "ln2.gamma", l.ln2_gamma);
      fn(p + "ln2.beta", l.ln2_beta);
      fn(p + "ff.w1", l.ff_w1);
      fn(p + "ff.b1", l.ff_b1);
      fn(p + "ff.w2", l.ff_w2);
      fn(p + "ff.b2", l.ff_b2);
    }
    fn("proj.W", proj_w);
    fn("proj.b", proj_b);
    fn("scale_a", scale_a);
  }

  std::vector<TensorT<T>*> tensors() {
    std::vector<TensorT<T>*> out;
    for_each([&](const std::string&, TensorT<T>& t) { out.push_back(&t); });
    return out;
  }

  void zero_grad() {
    for_each([](const std::string&, TensorT<T>& t) { t.zero_grad(); });
  }

};

using EncoderParams = EncoderParamsT<float>;

// Weights trunc-normal std 0.02, biases zero, layer norms identity,
// scale a = 16.
template <typename T>
EncoderParamsT<T> init_encoder(const EncoderConfig& cfg, RngState& rng,
                               double init_std = 0.02, double scale_init = 16.0) {
  cfg.validate();
  EncoderParamsT<T> p;
  p.config = cfg;
  const int h = cfg.hidden, d = cfg.output_dim, ff = cfg.ff_size;
  p.tok_emb = init_trunc_normal<T>({cfg.vocab_size, h}, init_std, rng);
  p.pos_emb = init_trunc_normal<T>({cfg.max_len, h}, init_std, rng);
  p.layers.resize(size_t(cfg.layers));
  for (auto& l : p.layers) {
    l.ln1_gamma = tensor_full<T>({h}, T(1));
    l.ln1_beta = TensorT<T>({h});
    l.attn.wq = init_trunc_normal<T>({h, h}, init_std, rng);
    l.attn.bq = TensorT<T>({h});
    l.attn.wk = init_trunc_normal<T>({h, h}, init_std, rng);
    l.attn.bk = TensorT<T>({h});
    l.attn.wv = init_trunc_normal<T>({h, h}, init_std, rng);
    l.attn.bv = TensorT<T>({h});
    l.attn.wo = init_trunc_normal<T>({h, h}, init_std, rng);
    l.attn.bo = TensorT<T>({h});
    l.ln2_gamma = tensor_full<T>({h}, T(1));
    l.ln2_beta = TensorT<T>({h});
    l.ff_w1 = init_trunc_normal<T>({h, ff}, init_std, rng);
    l.ff_b1 = TensorT<T>({ff});
    l.ff_w2 = init_trunc_normal<T>({ff, h}, init_std, rng);
    l.ff_b2 = TensorT<T>({h});
  }
  p.proj_w = init_trunc_normal<T>({h, d}, init_std, rng);
  p.proj_b = TensorT<T>({d});
  p.scale_a = tensor_full<T>({1}, T(scale_init));
  return p;
}

// Per-sequence forward cache kept for the backward pass.
template <typename T>
struct LayerCache {
  TensorT<T> x_in;  // residual stream entering the layer
  LayerNormCache<T> ln1;
  TensorT<T> ln1_out;
  AttentionCache<T> attn;
  TensorT<T> attn_out;
  std::vector<uint8_t> drop1_mask;
  TensorT<T> x_mid;
  LayerNormCache<T> ln2;
  TensorT<T> ln2_out;
  TensorT<T> ff_pre;   // before activation
  TensorT<T> ff_act;   // after gelu
  TensorT<T> ff_out;
  std::vector<uint8_t> drop2_mask;
};

template <typename T>
struct EncodeCache {
  std::vector<int> ids;      // padded token ids
  int valid_len = 0;
  TensorT<T> x0;             // token + position embeddings
  std::vector<LayerCache<T>> layers;
  TensorT<T> x_final;
  bool train = false;
};

// Pre-norm residual blocks; position-0 hidden state projected to R^d.
template <typename T>
void encode_sequence(EncoderParamsT<T>& p, const std::vector<int>& ids, int valid_len,
                     bool train, RngState& rng, TensorT<T>& out, EncodeCache<T>& cache) {
  const EncoderConfig& cfg = p.config;
  const int tlen = int(ids.size());
  if (tlen > cfg.max_len)
    throw std::runtime_error("encode: context length " + std::to_string(tlen) +
                             " exceeds max_len " + std::to_string(cfg.max_len) +
                             " (window the input first)");
  if (tlen == 0) throw std::runtime_error("encode: empty context");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::runtime_error("encode: token id " + std::to_string(id) +
                               " outside vocabulary");

  const int h = cfg.hidden;
  cache.ids = ids;
  cache.valid_len = valid_len > 0 ? valid_len : tlen;
  cache.train = train;
  cache.x0 = TensorT<T>({tlen, h});
  for (int i = 0; i < tlen; ++i)
    for (int j = 0; j < h; ++j)
      cache.x0.at(i, j) = p.tok_emb.at(ids[size_t(i)], j) + p.pos_emb.at(i, j);

  const double keep = cfg.dropout_keep;
  TensorT<T> x = cache.x0;
  cache.layers.assign(size_t(cfg.layers), LayerCache<T>{});
  for (int li = 0; li < cfg.layers; ++li) {
    auto& l = p.layers[size_t(li)];
    auto& c = cache.layers[size_t(li)];
    c.x_in = x;

    layer_norm(c.x_in, l.ln1_gamma, l.ln1_beta, c.ln1_out, c.ln1);
    TensorT<T> attn_raw;
    multi_head_attention(c.ln1_out, l.attn, cfg.heads, cache.valid_len, attn_raw, c.attn);
    dropout(attn_raw, keep, train, rng, c.attn_out, c.drop1_mask);
    c.x_mid = x;
    for (size_t i = 0; i < c.x_mid.values.size(); ++i)
      c.x_mid.values[i] += c.attn_out.values[i];

    layer_norm(c.x_mid, l.ln2_gamma, l.ln2_beta, c.ln2_out, c.ln2);
    TensorT<T> ff1;
    matmul(c.ln2_out, l.ff_w1, ff1);
    add_bias(ff1, l.ff_b1, c.ff_pre);
    gelu(c.ff_pre, c.ff_act);
    TensorT<T> ff2, ff_raw;
    matmul(c.ff_act, l.ff_w2, ff2);
    add_bias(ff2, l.ff_b2, ff_raw);
    dropout(ff_raw, keep, train, rng, c.ff_out, c.drop2_mask);

    x = c.x_mid;
    for (size_t i = 0; i < x.values.size(); ++i) x.values[i] += c.ff_out.values[i];
  }
  cache.x_final = x;

  // position-0 pooling + linear projection
  const int d = cfg.output_dim;
  out = TensorT<T>({d});
  for (int j = 0; j < d; ++j) {
    double s = p.proj_b.values[size_t(j)];
    for (int k = 0; k < h; ++k) s += double(x.at(0, k)) * p.proj_w.at(k, j);
    out.values[size_t(j)] = static_cast<T>(s);
  }
}

// Accumulates parameter gradients from d(out); mirrors encode_sequence.
template <typename T>
void encode_sequence_backward(EncoderParamsT<T>& p, EncodeCache<T>& cache,
                              const TensorT<T>& dout) {
  const EncoderConfig& cfg = p.config;
  const int h = cfg.hidden, d = cfg.output_dim;
  const int tlen = int(cache.ids.size());
  const double keep = cfg.dropout_keep;

  p.proj_w.ensure_grad();
  p.proj_b.ensure_grad();
  TensorT<T> dx({tlen, h});
  for (int j = 0; j < d; ++j) {
    const T dv = dout.values[size_t(j)];
    p.proj_b.grad[size_t(j)] += dv;
    for (int k = 0; k < h; ++k) {
      p.proj_w.grad[size_t(k) * d + j] += cache.x_final.at(0, k) * dv;
      dx.at(0, k) += p.proj_w.at(k, j) * dv;
    }
  }

  for (int li = cfg.layers - 1; li >= 0; --li) {
    auto& l = p.layers[size_t(li)];
    auto& c = cache.layers[size_t(li)];

    // x = x_mid + dropout(ff_out_raw)
    TensorT<T> d_ff_raw({tlen, h});
    {
      TensorT<T> ff_stub = c.ff_out;  // only .grad is used
      ff_stub.grad.assign(ff_stub.values.size(), T(0));
      dropout_backward(ff_stub, keep, c.drop2_mask, dx);
      d_ff_raw.values = ff_stub.grad;
    }
    accumulate_bias_grad(l.ff_b2, d_ff_raw);
    TensorT<T> d_ff_act({tlen, cfg.ff_size});
    {
      TensorT<T> act_copy = c.ff_act;
      act_copy.grad.assign(act_copy.values.size(), T(0));
      matmul_backward(act_copy, l.ff_w2, d_ff_raw);
      d_ff_act.values = act_copy.grad;
    }
    TensorT<T> ff_pre_copy = c.ff_pre;
    ff_pre_copy.grad.assign(ff_pre_copy.values.size(), T(0));
    gelu_backward(ff_pre_copy, d_ff_act);
    TensorT<T> d_ff_pre({tlen, cfg.ff_size});
    d_ff_pre.values = ff_pre_copy.grad;
    accumulate_bias_grad(l.ff_b1, d_ff_pre);
    TensorT<T> d_ln2_out({tlen, h});
    {
      TensorT<T> ln2_copy = c.ln2_out;
      ln2_copy.grad.assign(ln2_copy.values.size(), T(0));
      matmul_backward(ln2_copy, l.ff_w1, d_ff_pre);
      d_ln2_out.values = ln2_copy.grad;
    }
    TensorT<T> x_mid_copy = c.x_mid;
    x_mid_copy.grad.assign(x_mid_copy.values.size(), T(0));
    layer_norm_backward(x_mid_copy, l.ln2_gamma, l.ln2_beta, c.ln2, d_ln2_out);
    // residual: d(x_mid) = dx (through the skip) + LN path
    TensorT<T> dx_mid = dx;
    for (size_t i = 0; i < dx_mid.values.size(); ++i) dx_mid.values[i] += x_mid_copy.grad[i];

    // x_mid = x_in + dropout(attn_raw)
    TensorT<T> d_attn_raw({tlen, h});
    {
      TensorT<T> attn_stub = c.attn_out;
      attn_stub.grad.assign(attn_stub.values.size(), T(0));
      dropout_backward(attn_stub, keep, c.drop1_mask, dx_mid);
      d_attn_raw.values = attn_stub.grad;
    }
    TensorT<T> ln1_copy = c.ln1_out;
    ln1_copy.grad.assign(ln1_copy.values.size(), T(0));
    multi_head_attention_backward(ln1_copy, l.attn, cfg.heads, c.attn, d_attn_raw);
    TensorT<T> d_ln1_out({tlen, h});
    d_ln1_out.values = ln1_copy.grad;

    TensorT<T> x_in_copy = c.x_in;
    x_in_copy.grad.assign(x_in_copy.values.size(), T(0));
    layer_norm_backward(x_in_copy, l.ln1_gamma, l.ln1_beta, c.ln1, d_ln1_out);

    dx = dx_mid;
    for (size_t i = 0; i < dx.values.size(); ++i) dx.values[i] += x_in_copy.grad[i];
  }

  // embeddings
  p.tok_emb.ensure_grad();
  p.pos_emb.ensure_grad();
  for (int i = 0; i < tlen; ++i) {
    T* tok_row = p.tok_emb.grad.data() + size_t(cache.ids[size_t(i)]) * h;
    T* pos_row = p.pos_emb.grad.data() + size_t(i) * h;
    const T* drow = dx.data() + size_t(i) * h;
    for (int j = 0; j < h; ++j) {
      tok_row[j] += drow[j];
      pos_row[j] += drow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Context-level API
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> encode_context(EncoderParamsT<T>& p, const Context& ctx, bool train,
                          RngState& rng) {
  TensorT<T> out;
  EncodeCache<T> cache;
  encode_sequence(p, ctx.token_ids, int(ctx.token_ids.size()), train, rng, out, cache);
  return out;
}

template <typename T>
struct BatchCache {
  std::vector<EncodeCache<T>> seqs;
};

// Row i equals encode_context of context i. Shorter contexts are padded with
// [PAD] to the batch maximum and pads are excluded from attention.
template <typename T>
TensorT<T> encode_batch(EncoderParamsT<T>& p, const std::vector<Context>& contexts,
                        bool train, RngState& rng, BatchCache<T>* cache = nullptr) {
  const int b = int(contexts.size());
  if (b == 0) throw std::invalid_argument("encode_batch: empty batch");
  int max_t = 0;
  for (const auto& c : contexts) max_t = std::max(max_t, c.length());
  TensorT<T> out({b, p.config.output_dim});
  if (cache) cache->seqs.assign(size_t(b), EncodeCache<T>{});
  for (int i = 0; i < b; ++i) {
    std::vector<int> ids = contexts[size_t(i)].token_ids;
    const int valid = int(ids.size());
    ids.resize(size_t(max_t), kPad);
    TensorT<T> row;
    EncodeCache<T> local;
    EncodeCache<T>& cc = cache ? cache->seqs[size_t(i)] : local;
    encode_sequence(p, ids, valid, train, rng, row, cc);
    std::copy(row.values.begin(), row.values.end(),
              out.values.begin() + size_t(i) * p.config.output_dim);
  }
  return out;
}

template <typename T>
void encode_batch_backward(EncoderParamsT<T>& p, BatchCache<T>& cache,
                           const TensorT<T>& dout) {
  const int d = p.config.output_dim;
  for (int i = 0; i < int(cache.seqs.size()); ++i) {
    TensorT<T> drow({d});
    std::copy_n(dout.values.begin() + size_t(i) * d, d, drow.values.begin());
    encode_sequence_backward(p, cache.seqs[size_t(i)], drow);
  }
}

}  // namespace relic
