#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "relic/tensor.hpp"

// Differentiable primitives with explicit forward/backward passes. Backward
// functions consume the upstream gradient and accumulate into the .grad
// buffers of their inputs. Reductions accumulate in double.

namespace relic {

// ---------------------------------------------------------------------------
// matmul: C[mxn] = A[mxk] * B[kxn]
// ---------------------------------------------------------------------------

template <typename T>
void matmul(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c) {
  if (a.dims.size() != 2 || b.dims.size() != 2 || a.cols() != b.rows())
    shape_error("matmul", a.shape_str() + " x " + b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  c = TensorT<T>({m, n});
  const T* __restrict__ pa = a.data();
  const T* __restrict__ pb = b.data();
  T* __restrict__ pc = c.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const T av = pa[size_t(i) * k + l];
      if (av == T(0)) continue;
      const T* __restrict__ brow = pb + size_t(l) * n;
      T* __restrict__ crow = pc + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T, dB += A^T * dC
template <typename T>
void matmul_backward(TensorT<T>& a, TensorT<T>& b, const TensorT<T>& dc) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (dc.rows() != m || dc.cols() != n)
    shape_error("matmul_backward", dc.shape_str() + " vs " + a.shape_str() + " x " + b.shape_str());
  a.ensure_grad();
  b.ensure_grad();
  const T* pa = a.data();
  const T* pb = b.data();
  const T* pd = dc.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const T dv = pd[size_t(i) * n + j];
      if (dv == T(0)) continue;
      const T* brow = pb + j;  // column j of B, stride n
      T* garow = a.grad.data() + size_t(i) * k;
      for (int l = 0; l < k; ++l) garow[l] += dv * brow[size_t(l) * n];
    }
  }
  for (int l = 0; l < k; ++l) {
    for (int i = 0; i < m; ++i) {
      const T av = pa[size_t(i) * k + l];
      if (av == T(0)) continue;
      const T* drow = pd + size_t(i) * n;
      T* gbrow = b.grad.data() + size_t(l) * n;
      for (int j = 0; j < n; ++j) gbrow[j] += av * drow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// add_bias: Y[mxn] = X[mxn] + b[n] (broadcast over rows)
// ---------------------------------------------------------------------------

template <typename T>
void add_bias(const TensorT<T>& x, const TensorT<T>& b, TensorT<T>& y) {
  const int m = x.rows(), n = x.cols();
  if (b.numel() != n) shape_error("add_bias", x.shape_str() + " + " + b.shape_str());
  y = x;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y.values[size_t(i) * n + j] += b.values[j];
}

// db += column sums of dY
template <typename T>
void accumulate_bias_grad(TensorT<T>& b, const TensorT<T>& dy) {
  const int m = dy.rows(), n = dy.cols();
  b.ensure_grad();
  for (int j = 0; j < n; ++j) {
    double s = 0;
    for (int i = 0; i < m; ++i) s += dy.values[size_t(i) * n + j];
    b.grad[j] += static_cast<T>(s);
  }
}

template <typename T>
void add_bias_backward(TensorT<T>& x, TensorT<T>& b, const TensorT<T>& dy) {
  x.ensure_grad();
  for (size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += dy.values[i];
  accumulate_bias_grad(b, dy);
}

// ---------------------------------------------------------------------------
// relu / gelu (tanh approximation)
// ---------------------------------------------------------------------------

template <typename T>
void relu(const TensorT<T>& x, TensorT<T>& y) {
  y = x;
  for (auto& v : y.values) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(TensorT<T>& x, const TensorT<T>& dy) {
  x.ensure_grad();
  for (size_t i = 0; i < x.values.size(); ++i)
    if (x.values[i] > T(0)) x.grad[i] += dy.values[i];
}

template <typename T>
void gelu(const TensorT<T>& x, TensorT<T>& y) {
  const double c = std::sqrt(2.0 / M_PI);
  y = x;
  for (auto& v : y.values) {
    double xv = v;
    double u = c * (xv + 0.044715 * xv * xv * xv);
    v = static_cast<T>(0.5 * xv * (1.0 + std::tanh(u)));
  }
}

template <typename T>
void gelu_backward(TensorT<T>& x, const TensorT<T>& dy) {
  const double c = std::sqrt(2.0 / M_PI);
  x.ensure_grad();
  for (size_t i = 0; i < x.values.size(); ++i) {
    double xv = x.values[i];
    double u = c * (xv + 0.044715 * xv * xv * xv);
    double th = std::tanh(u);
    double sech2 = 1.0 - th * th;
    double du = c * (1.0 + 3.0 * 0.044715 * xv * xv);
    double g = 0.5 * (1.0 + th) + 0.5 * xv * sech2 * du;
    x.grad[i] += static_cast<T>(g * dy.values[i]);
  }
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension, per row
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  TensorT<T> normalized;  // x_hat, before affine
};

// eps sits inside the sqrt so constant rows normalize to exactly zero.
template <typename T>
void layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                TensorT<T>& y, LayerNormCache<T>& cache, double eps = 1e-12) {
  const int m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n)
    shape_error("layer_norm", x.shape_str() + " with affine " + gamma.shape_str());
  y = TensorT<T>({m, n});
  cache.mean.resize(m);
  cache.inv_std.resize(m);
  cache.normalized = TensorT<T>({m, n});
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + size_t(i) * n;
    double mean = 0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    cache.mean[i] = mean;
    cache.inv_std[i] = inv;
    for (int j = 0; j < n; ++j) {
      T xh = static_cast<T>((row[j] - mean) * inv);
      cache.normalized.values[size_t(i) * n + j] = xh;
      y.values[size_t(i) * n + j] = xh * gamma.values[j] + beta.values[j];
    }
  }
}

template <typename T>
void layer_norm_backward(TensorT<T>& x, TensorT<T>& gamma, TensorT<T>& beta,
                         const LayerNormCache<T>& cache, const TensorT<T>& dy) {
  const int m = x.rows(), n = x.cols();
  x.ensure_grad();
  gamma.ensure_grad();
  beta.ensure_grad();
  for (int i = 0; i < m; ++i) {
    const T* xh = cache.normalized.data() + size_t(i) * n;
    const T* dyr = dy.data() + size_t(i) * n;
    double sum_dxh = 0, sum_dxh_xh = 0;
    for (int j = 0; j < n; ++j) {
      double dxh = double(dyr[j]) * gamma.values[j];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh[j];
      gamma.grad[j] += static_cast<T>(double(dyr[j]) * xh[j]);
      beta.grad[j] += dyr[j];
    }
    const double inv = cache.inv_std[i];
    for (int j = 0; j < n; ++j) {
      double dxh = double(dyr[j]) * gamma.values[j];
      double dx = inv * (dxh - sum_dxh / n - double(xh[j]) * sum_dxh_xh / n);
      x.grad[size_t(i) * n + j] += static_cast<T>(dx);
    }
  }
}

// ---------------------------------------------------------------------------
// softmax over rows, max-subtracted
// ---------------------------------------------------------------------------

template <typename T>
void softmax_rows(const TensorT<T>& x, TensorT<T>& y) {
  const int m = x.rows(), n = x.cols();
  y = TensorT<T>({m, n});
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + size_t(i) * n;
    T* out = y.data() + size_t(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max<double>(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(double(row[j]) - mx);
      out[j] = static_cast<T>(e);
      sum += e;
    }
    for (int j = 0; j < n; ++j) out[j] = static_cast<T>(out[j] / sum);
  }
}

// dX = Y .* (dY - rowsum(dY .* Y))
template <typename T>
void softmax_rows_backward(TensorT<T>& x, const TensorT<T>& y, const TensorT<T>& dy) {
  const int m = x.rows(), n = x.cols();
  x.ensure_grad();
  for (int i = 0; i < m; ++i) {
    const T* yr = y.data() + size_t(i) * n;
    const T* dyr = dy.data() + size_t(i) * n;
    double dot = 0;
    for (int j = 0; j < n; ++j) dot += double(dyr[j]) * yr[j];
    for (int j = 0; j < n; ++j)
      x.grad[size_t(i) * n + j] += static_cast<T>(double(yr[j]) * (dyr[j] - dot));
  }
}

// ---------------------------------------------------------------------------
// embedding_lookup: Y[n x h] = table[ids[i], :]
// ---------------------------------------------------------------------------

template <typename T>
void embedding_lookup(const TensorT<T>& table, const std::vector<int>& ids, TensorT<T>& y) {
  const int h = table.cols();
  y = TensorT<T>({int(ids.size()), h});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside table " + table.shape_str());
    std::copy_n(table.data() + size_t(ids[i]) * h, h, y.data() + i * h);
  }
}

// Scatters gradients only into looked-up rows.
template <typename T>
void embedding_lookup_backward(TensorT<T>& table, const std::vector<int>& ids,
                               const TensorT<T>& dy) {
  const int h = table.cols();
  table.ensure_grad();
  for (size_t i = 0; i < ids.size(); ++i) {
    T* grow = table.grad.data() + size_t(ids[i]) * h;
    const T* drow = dy.data() + i * h;
    for (int j = 0; j < h; ++j) grow[j] += drow[j];
  }
}

// ---------------------------------------------------------------------------
// dropout: identity in eval mode; in train mode keeps activations with
// probability `keep` and rescales survivors by 1/keep
// ---------------------------------------------------------------------------

template <typename T>
void dropout(const TensorT<T>& x, double keep, bool train, RngState& rng,
             TensorT<T>& y, std::vector<uint8_t>& mask) {
  if (!(keep > 0.0 && keep <= 1.0))
    throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
  y = x;
  if (!train || keep >= 1.0) {
    mask.clear();
    return;
  }
  mask.resize(x.values.size());
  const T scale = static_cast<T>(1.0 / keep);
  for (size_t i = 0; i < y.values.size(); ++i) {
    mask[i] = rng.uniform() < keep ? 1 : 0;
    y.values[i] = mask[i] ? y.values[i] * scale : T(0);
  }
}

template <typename T>
void dropout_backward(TensorT<T>& x, double keep, const std::vector<uint8_t>& mask,
                      const TensorT<T>& dy) {
  x.ensure_grad();
  if (mask.empty()) {
    for (size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += dy.values[i];
    return;
  }
  const T scale = static_cast<T>(1.0 / keep);
  for (size_t i = 0; i < x.grad.size(); ++i)
    if (mask[i]) x.grad[i] += dy.values[i] * scale;
}

// ---------------------------------------------------------------------------
// multi_head_attention over one sequence, with optional key padding:
// positions >= valid_len are excluded as attention keys.
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParams {
  TensorT<T> wq, wk, wv, wo;  // h x h
  TensorT<T> bq, bk, bv, bo;  // h
};

template <typename T>
struct AttentionCache {
  TensorT<T> q, k, v;        // T x h
  TensorT<T> probs;          // heads stacked: (H*T) x T
  TensorT<T> context;        // T x h (heads re-interleaved)
  int valid_len = 0;
};

template <typename T>
void multi_head_attention(const TensorT<T>& x, AttentionParams<T>& p, int n_heads,
                          int valid_len, TensorT<T>& y, AttentionCache<T>& cache) {
  const int tlen = x.rows(), h = x.cols();
  if (h % n_heads != 0)
    throw std::invalid_argument("multi_head_attention: heads " + std::to_string(n_heads) +
                                " must divide hidden size " + std::to_string(h));
  if (valid_len <= 0 || valid_len > tlen) valid_len = tlen;
  const int dh = h / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  TensorT<T> q0, k0, v0;
  matmul(x, p.wq, q0); add_bias(q0, p.bq, cache.q);
  matmul(x, p.wk, k0); add_bias(k0, p.bk, cache.k);
  matmul(x, p.wv, v0); add_bias(v0, p.bv, cache.v);

  cache.probs = TensorT<T>({n_heads * tlen, tlen});
  cache.context = TensorT<T>({tlen, h});
  for (int head = 0; head < n_heads; ++head) {
    const int off = head * dh;
    TensorT<T> scores({tlen, tlen});
    for (int i = 0; i < tlen; ++i) {
      for (int j = 0; j < tlen; ++j) {
        if (j >= valid_len) {
          scores.at(i, j) = static_cast<T>(kMaskedScore);
          continue;
        }
        double s = 0;
        const T* qi = cache.q.data() + size_t(i) * h + off;
        const T* kj = cache.k.data() + size_t(j) * h + off;
        for (int d = 0; d < dh; ++d) s += double(qi[d]) * kj[d];
        scores.at(i, j) = static_cast<T>(s * scale);
      }
    }
    TensorT<T> probs;
    softmax_rows(scores, probs);
    std::copy(probs.values.begin(), probs.values.end(),
              cache.probs.values.begin() + size_t(head) * tlen * tlen);
    for (int i = 0; i < tlen; ++i) {
      T* ctx = cache.context.data() + size_t(i) * h + off;
      for (int j = 0; j < valid_len; ++j) {
        const T a = probs.at(i, j);
        if (a == T(0)) continue;
        const T* vj = cache.v.data() + size_t(j) * h + off;
        for (int d = 0; d < dh; ++d) ctx[d] += a * vj[d];
      }
    }
  }
  TensorT<T> out0;
  matmul(cache.context, p.wo, out0);
  add_bias(out0, p.bo, y);
  cache.valid_len = valid_len;
}

template <typename T>
void multi_head_attention_backward(TensorT<T>& x, AttentionParams<T>& p, int n_heads,
                                   AttentionCache<T>& cache, const TensorT<T>& dy) {
  const int tlen = x.rows(), h = x.cols();
  const int dh = h / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  const int valid_len = cache.valid_len;

  // out = context * wo + bo
  TensorT<T> dcontext({tlen, h});
  {
    accumulate_bias_grad(p.bo, dy);
    TensorT<T> ctx_copy = cache.context;
    ctx_copy.ensure_grad();
    matmul_backward(ctx_copy, p.wo, dy);
    dcontext.values = ctx_copy.grad;
  }

  TensorT<T> dq({tlen, h}), dk({tlen, h}), dv({tlen, h});
  for (int head = 0; head < n_heads; ++head) {
    const int off = head * dh;
    const T* probs = cache.probs.data() + size_t(head) * tlen * tlen;
    for (int i = 0; i < tlen; ++i) {
      const T* dctx = dcontext.data() + size_t(i) * h + off;
      // dV and dA
      std::vector<double> da(tlen, 0.0);
      for (int j = 0; j < valid_len; ++j) {
        const T a = probs[size_t(i) * tlen + j];
        T* dvj = dv.data() + size_t(j) * h + off;
        const T* vj = cache.v.data() + size_t(j) * h + off;
        double daj = 0;
        for (int d = 0; d < dh; ++d) {
          dvj[d] += a * dctx[d];
          daj += double(vj[d]) * dctx[d];
        }
        da[j] = daj;
      }
      // softmax backward on row i
      double dot = 0;
      for (int j = 0; j < valid_len; ++j) dot += da[j] * probs[size_t(i) * tlen + j];
      for (int j = 0; j < valid_len; ++j) {
        double ds = double(probs[size_t(i) * tlen + j]) * (da[j] - dot) * scale;
        if (ds == 0) continue;
        T* dqi = dq.data() + size_t(i) * h + off;
        T* dkj = dk.data() + size_t(j) * h + off;
        const T* qi = cache.q.data() + size_t(i) * h + off;
        const T* kj = cache.k.data() + size_t(j) * h + off;
        for (int d = 0; d < dh; ++d) {
          dqi[d] += static_cast<T>(ds * kj[d]);
          dkj[d] += static_cast<T>(ds * qi[d]);
        }
      }
    }
  }

  // back through the three input projections
  x.ensure_grad();
  auto proj_backward = [&](TensorT<T>& w, TensorT<T>& b, const TensorT<T>& d_proj) {
    accumulate_bias_grad(b, d_proj);
    TensorT<T> x_copy = x;
    x_copy.grad.assign(x_copy.values.size(), T(0));
    matmul_backward(x_copy, w, d_proj);
    for (size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += x_copy.grad[i];
  };
  proj_backward(p.wq, p.bq, dq);
  proj_backward(p.wk, p.bk, dk);
  proj_backward(p.wv, p.bv, dv);
}

}  // namespace relic
