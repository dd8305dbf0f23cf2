#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relic/rng.hpp"

namespace relic {

// Additive mask applied before max-subtracted softmaxes; exp() underflows to
// exactly zero for cells this far below the row maximum.
constexpr double kMaskedScore = -1e9;

// Dense row-major tensor. Values and the optional gradient buffer always share
// one shape; the gradient is allocated lazily by ensure_grad().
template <typename T>
struct TensorT {
  std::vector<int> dims;
  std::vector<T> values;
  std::vector<T> grad;

  TensorT() = default;
  explicit TensorT(std::vector<int> shape)
      : dims(std::move(shape)), values(numel_of(dims), T(0)) {}

  static int64_t numel_of(const std::vector<int>& d) {
    int64_t n = 1;
    for (int x : d) n *= x;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int rows() const { return dims.empty() ? 1 : dims[0]; }
  int cols() const { return dims.size() < 2 ? 1 : dims[1]; }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  T& at(int i, int j) { return values[size_t(i) * cols() + j]; }
  T at(int i, int j) const { return values[size_t(i) * cols() + j]; }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  bool same_shape(const TensorT& o) const { return dims == o.dims; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ")";
    return os.str();
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename T>
TensorT<T> init_trunc_normal(std::vector<int> shape, double stddev, RngState& rng) {
  if (!(stddev > 0)) throw std::invalid_argument("init_trunc_normal: std must be > 0");
  TensorT<T> t(std::move(shape));
  for (auto& v : t.values) v = static_cast<T>(rng.trunc_normal(stddev));
  return t;
}

template <typename T>
TensorT<T> tensor_full(std::vector<int> shape, T fill) {
  TensorT<T> t(std::move(shape));
  std::fill(t.values.begin(), t.values.end(), fill);
  return t;
}

[[noreturn]] inline void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": shape mismatch " + detail);
}

}  // namespace relic
