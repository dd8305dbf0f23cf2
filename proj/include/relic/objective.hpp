#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "relic/rng.hpp"
#include "relic/tensor.hpp"

// Compatibility scoring and the noise-contrastive loss with in-batch
// negatives. Scores are scaled cosine similarities; dot product is available
// behind a flag for ablation.

namespace relic {

enum class Metric { kCosine, kDot };

template <typename T>
double row_norm(const T* v, int d) {
  double s = 0;
  for (int i = 0; i < d; ++i) s += double(v[i]) * v[i];
  return std::sqrt(s);
}

template <typename T>
double row_dot(const T* a, const T* b, int d) {
  double s = 0;
  for (int i = 0; i < d; ++i) s += double(a[i]) * b[i];
  return s;
}

// a * (g . e) / (|g| |e|)
template <typename T>
double score(const TensorT<T>& g_vec, const TensorT<T>& e_vec, double a) {
  if (g_vec.numel() != e_vec.numel())
    shape_error("score", g_vec.shape_str() + " vs " + e_vec.shape_str());
  const int d = int(g_vec.numel());
  const double ng = row_norm(g_vec.data(), d), ne = row_norm(e_vec.data(), d);
  if (ng == 0.0 || ne == 0.0) throw std::runtime_error("score: zero-norm vector");
  return a * row_dot(g_vec.data(), e_vec.data(), d) / (ng * ne);
}

// Softmax over the entire candidate matrix (rows = entities), max-subtracted.
template <typename T>
double full_softmax_prob(const TensorT<T>& g_vec, const TensorT<T>& table, double a,
                         int target) {
  const int n = table.rows(), d = table.cols();
  if (n == 0) throw std::invalid_argument("full_softmax_prob: empty table");
  if (target < 0 || target >= n)
    throw std::out_of_range("full_softmax_prob: target outside table");
  const double ng = row_norm(g_vec.data(), d);
  if (ng == 0.0) throw std::runtime_error("full_softmax_prob: zero-norm query");
  std::vector<double> scores(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = table.data() + size_t(i) * d;
    const double ne = row_norm(row, d);
    if (ne == 0.0)
      throw std::runtime_error("full_softmax_prob: zero-norm table row " + std::to_string(i));
    scores[size_t(i)] = a * row_dot(g_vec.data(), row, d) / (ng * ne);
  }
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double denom = 0;
  for (double s : scores) denom += std::exp(s - mx);
  return std::exp(scores[size_t(target)] - mx) / denom;
}

// B x C score matrix with a true column per row and a duplicate mask that
// removes other rows' copies of the same gold entity from the denominator.
template <typename T>
struct ScoreMatrixT {
  TensorT<T> scores;               // B x C
  std::vector<int> true_col;       // per row
  std::vector<uint8_t> dup_mask;   // B x C; 1 = exclude from softmax

  int batch() const { return scores.rows(); }
  int cols() const { return scores.cols(); }
  bool masked(int i, int j) const { return dup_mask[size_t(i) * cols() + j] != 0; }
};

using ScoreMatrix = ScoreMatrixT<float>;

template <typename T>
struct CosineCache {
  std::vector<double> g_norm, f_norm;
  TensorT<T> cos;  // B x C, unscaled cosine
};

// In-batch scores: cell (i,j) = a * cos(G_i, F_j); true column of row i is i.
// Cells whose entity id duplicates the row's gold id are masked.
template <typename T>
ScoreMatrixT<T> batch_score_matrix(const TensorT<T>& g, const TensorT<T>& f, double a,
                                   const std::vector<int>& entity_of_row = {},
                                   CosineCache<T>* cache = nullptr,
                                   Metric metric = Metric::kCosine) {
  const int b = g.rows(), d = g.cols();
  if (f.rows() != b || f.cols() != d)
    shape_error("batch_score_matrix", g.shape_str() + " vs " + f.shape_str());
  ScoreMatrixT<T> sm;
  sm.scores = TensorT<T>({b, b});
  sm.true_col.resize(size_t(b));
  sm.dup_mask.assign(size_t(b) * b, 0);
  std::vector<double> gn(static_cast<size_t>(b)), fn(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    gn[size_t(i)] = row_norm(g.data() + size_t(i) * d, d);
    fn[size_t(i)] = row_norm(f.data() + size_t(i) * d, d);
    if (gn[size_t(i)] == 0.0 || fn[size_t(i)] == 0.0)
      throw std::runtime_error("batch_score_matrix: zero-norm row " + std::to_string(i));
  }
  if (cache) {
    cache->g_norm = gn;
    cache->f_norm = fn;
    cache->cos = TensorT<T>({b, b});
  }
  for (int i = 0; i < b; ++i) {
    sm.true_col[size_t(i)] = i;
    for (int j = 0; j < b; ++j) {
      double dot = row_dot(g.data() + size_t(i) * d, f.data() + size_t(j) * d, d);
      double c = metric == Metric::kCosine ? dot / (gn[size_t(i)] * fn[size_t(j)]) : dot;
      if (cache) cache->cos.at(i, j) = static_cast<T>(c);
      sm.scores.at(i, j) = static_cast<T>(a * c);
      if (!entity_of_row.empty() && j != i &&
          entity_of_row[size_t(j)] == entity_of_row[size_t(i)])
        sm.dup_mask[size_t(i) * b + j] = 1;
    }
  }
  return sm;
}

// Cross entropy per row over unmasked cells; masked cells are dropped from
// the denominator (set to -1e9 before the max-subtracted softmax).
// Returns the mean loss; writes d(loss)/d(scores) when dscores is non-null.
template <typename T>
double nce_loss(const ScoreMatrixT<T>& sm, TensorT<T>* dscores = nullptr) {
  const int b = sm.batch(), c = sm.cols();
  if (dscores) *dscores = TensorT<T>({b, c});
  double total = 0;
  for (int i = 0; i < b; ++i) {
    if (sm.masked(i, sm.true_col[size_t(i)]))
      throw std::invalid_argument("nce_loss: true-label cell is masked in row " +
                                  std::to_string(i));
    double mx = -1e300;
    for (int j = 0; j < c; ++j) {
      double s = sm.masked(i, j) ? kMaskedScore : double(sm.scores.at(i, j));
      mx = std::max(mx, s);
    }
    double denom = 0;
    for (int j = 0; j < c; ++j) {
      double s = sm.masked(i, j) ? kMaskedScore : double(sm.scores.at(i, j));
      denom += std::exp(s - mx);
    }
    const int t = sm.true_col[size_t(i)];
    const double log_p = double(sm.scores.at(i, t)) - mx - std::log(denom);
    total += -log_p;
    if (dscores) {
      for (int j = 0; j < c; ++j) {
        if (sm.masked(i, j)) continue;  // masked cells get zero gradient
        double p = std::exp(double(sm.scores.at(i, j)) - mx) / denom;
        dscores->at(i, j) = static_cast<T>((p - (j == t ? 1.0 : 0.0)) / b);
      }
    }
  }
  return total / b;
}

// Mean rank of the true cell among unmasked cells (1-based, ties broken by
// column index) and the fraction of rows ranked first.
template <typename T>
std::pair<double, double> in_batch_metrics(const ScoreMatrixT<T>& sm) {
  const int b = sm.batch(), c = sm.cols();
  double rank_sum = 0;
  int hits = 0;
  for (int i = 0; i < b; ++i) {
    const int t = sm.true_col[size_t(i)];
    const T st = sm.scores.at(i, t);
    int rank = 1;
    for (int j = 0; j < c; ++j) {
      if (j == t || sm.masked(i, j)) continue;
      const T sj = sm.scores.at(i, j);
      if (sj > st || (sj == st && j < t)) ++rank;
    }
    rank_sum += rank;
    if (rank == 1) ++hits;
  }
  return {rank_sum / b, double(hits) / b};
}

// d(loss)/d(G), d(loss)/d(F), d(loss)/d(a) from d(loss)/d(scores), for
// scores = a * cos(G_i, F_j). Pass the cache captured by batch_score_matrix.
template <typename T>
void cosine_score_backward(const TensorT<T>& g, const TensorT<T>& f, double a,
                           const CosineCache<T>& cache, const TensorT<T>& dscores,
                           TensorT<T>& dg, TensorT<T>& df, double& da,
                           Metric metric = Metric::kCosine) {
  const int b = g.rows(), cc = dscores.cols(), d = g.cols();
  dg = TensorT<T>({b, d});
  df = TensorT<T>({f.rows(), d});
  da = 0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < cc; ++j) {
      const double ds = dscores.at(i, j);
      if (ds == 0) continue;
      const double cos_ij = cache.cos.at(i, j);
      da += ds * cos_ij;
      const T* gi = g.data() + size_t(i) * d;
      const T* fj = f.data() + size_t(j) * d;
      T* dgi = dg.data() + size_t(i) * d;
      T* dfj = df.data() + size_t(j) * d;
      if (metric == Metric::kDot) {
        for (int k = 0; k < d; ++k) {
          dgi[k] += static_cast<T>(a * ds * fj[k]);
          dfj[k] += static_cast<T>(a * ds * gi[k]);
        }
        continue;
      }
      const double gn = cache.g_norm[size_t(i)], fn = cache.f_norm[size_t(j)];
      // d cos / d g = (f_hat - cos * g_hat) / |g|
      for (int k = 0; k < d; ++k) {
        const double gh = gi[k] / gn, fh = fj[k] / fn;
        dgi[k] += static_cast<T>(a * ds * (fh - cos_ij * gh) / gn);
        dfj[k] += static_cast<T>(a * ds * (gh - cos_ij * fh) / fn);
      }
    }
  }
}

// Explicit-negative variant: row i scores against its own candidate block
// f[i*k1 .. (i+1)*k1), gold first (true column 0).
template <typename T>
ScoreMatrixT<T> rowwise_score_matrix(const TensorT<T>& g, const TensorT<T>& f, int k1,
                                     double a, CosineCache<T>* cache = nullptr,
                                     Metric metric = Metric::kCosine) {
  const int b = g.rows(), d = g.cols();
  if (f.rows() != b * k1 || f.cols() != d)
    shape_error("rowwise_score_matrix", g.shape_str() + " vs " + f.shape_str());
  ScoreMatrixT<T> sm;
  sm.scores = TensorT<T>({b, k1});
  sm.true_col.assign(size_t(b), 0);
  sm.dup_mask.assign(size_t(b) * k1, 0);
  if (cache) {
    cache->g_norm.resize(size_t(b));
    cache->f_norm.resize(size_t(b) * k1);
    cache->cos = TensorT<T>({b, k1});
  }
  for (int i = 0; i < b; ++i) {
    const T* gi = g.data() + size_t(i) * d;
    const double gn = row_norm(gi, d);
    if (gn == 0.0)
      throw std::runtime_error("rowwise_score_matrix: zero-norm query row " + std::to_string(i));
    if (cache) cache->g_norm[size_t(i)] = gn;
    for (int j = 0; j < k1; ++j) {
      const T* fj = f.data() + (size_t(i) * k1 + j) * d;
      const double fn = row_norm(fj, d);
      if (fn == 0.0)
        throw std::runtime_error("rowwise_score_matrix: zero-norm candidate");
      const double dot = row_dot(gi, fj, d);
      const double c = metric == Metric::kCosine ? dot / (gn * fn) : dot;
      if (cache) {
        cache->f_norm[size_t(i) * k1 + j] = fn;
        cache->cos.at(i, j) = static_cast<T>(c);
      }
      sm.scores.at(i, j) = static_cast<T>(a * c);
    }
  }
  return sm;
}

template <typename T>
void rowwise_score_backward(const TensorT<T>& g, const TensorT<T>& f, double a,
                            const CosineCache<T>& cache, const TensorT<T>& dscores,
                            TensorT<T>& dg, TensorT<T>& df, double& da,
                            Metric metric = Metric::kCosine) {
  const int b = g.rows(), k1 = dscores.cols(), d = g.cols();
  dg = TensorT<T>({b, d});
  df = TensorT<T>({f.rows(), d});
  da = 0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k1; ++j) {
      const double ds = dscores.at(i, j);
      if (ds == 0) continue;
      const double cos_ij = cache.cos.at(i, j);
      da += ds * cos_ij;
      const T* gi = g.data() + size_t(i) * d;
      const T* fj = f.data() + (size_t(i) * k1 + j) * d;
      T* dgi = dg.data() + size_t(i) * d;
      T* dfj = df.data() + (size_t(i) * k1 + j) * d;
      if (metric == Metric::kDot) {
        for (int k = 0; k < d; ++k) {
          dgi[k] += static_cast<T>(a * ds * fj[k]);
          dfj[k] += static_cast<T>(a * ds * gi[k]);
        }
        continue;
      }
      const double gn = cache.g_norm[size_t(i)], fn = cache.f_norm[size_t(i) * k1 + j];
      for (int k = 0; k < d; ++k) {
        const double gh = gi[k] / gn, fh = fj[k] / fn;
        dgi[k] += static_cast<T>(a * ds * (fh - cos_ij * gh) / gn);
        dfj[k] += static_cast<T>(a * ds * (gh - cos_ij * fh) / fn);
      }
    }
  }
}

// K i.i.d. draws with probability proportional to entity frequency.
inline std::vector<int> sample_noise_negatives(const std::vector<double>& freqs, int k,
                                               RngState& rng) {
  if (k < 1) throw std::invalid_argument("sample_noise_negatives: K must be >= 1");
  std::vector<double> cum(freqs.size());
  double total = 0;
  for (size_t i = 0; i < freqs.size(); ++i) {
    if (freqs[i] < 0) throw std::invalid_argument("sample_noise_negatives: negative frequency");
    total += freqs[i];
    cum[i] = total;
  }
  if (!(total > 0)) throw std::invalid_argument("sample_noise_negatives: frequencies sum to 0");
  std::vector<int> out(static_cast<size_t>(k));
  for (auto& v : out) {
    const double u = rng.uniform() * total;
    v = int(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (v >= int(freqs.size())) v = int(freqs.size()) - 1;
  }
  return out;
}

}  // namespace relic
