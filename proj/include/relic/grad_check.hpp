#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "relic/tensor.hpp"

namespace relic {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  // coordinate of the worst error: (param index, flat offset)
  int worst_param = -1;
  int64_t worst_offset = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central finite differences against the analytic gradients already stored in
// each parameter's .grad buffer. `loss_fn` re-runs the forward pass over the
// current parameter values (dropout must be disabled). Checks a random
// subsample of at least `min_coords` coordinates across all parameters.
template <typename T>
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           std::vector<TensorT<T>*> params, double eps,
                           RngState& rng, int64_t min_coords = 100) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be > 0");
  int64_t total = 0;
  for (auto* p : params) total += p->numel();

  std::vector<std::pair<int, int64_t>> coords;
  if (total <= min_coords) {
    for (int pi = 0; pi < int(params.size()); ++pi)
      for (int64_t off = 0; off < params[pi]->numel(); ++off) coords.push_back({pi, off});
  } else {
    for (int64_t s = 0; s < min_coords; ++s) {
      int64_t flat = int64_t(rng.below(uint64_t(total)));
      int pi = 0;
      while (flat >= params[pi]->numel()) flat -= params[pi]->numel(), ++pi;
      coords.push_back({pi, flat});
    }
  }

  GradCheckReport report;
  for (auto [pi, off] : coords) {
    TensorT<T>& p = *params[pi];
    const T saved = p.values[off];
    const T plus = static_cast<T>(double(saved) + eps);
    const T minus = static_cast<T>(double(saved) - eps);
    p.values[off] = plus;
    const double f_plus = loss_fn();
    p.values[off] = minus;
    const double f_minus = loss_fn();
    p.values[off] = saved;

    // divide by the realized perturbation, not the requested one
    const double numeric = (f_plus - f_minus) / (double(plus) - double(minus));
    const double analytic = p.has_grad() ? double(p.grad[off]) : 0.0;
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(analytic - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = pi;
      report.worst_offset = off;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace relic
