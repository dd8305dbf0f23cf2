#include "relic/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace relic {

double lr_schedule(int64_t step, int64_t total_steps, double max_lr, double warmup_frac) {
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0))
    throw std::invalid_argument("lr_schedule: warmup_frac outside [0, 1)");
  if (total_steps == 0) return 0.0;
  const int64_t warmup = int64_t(std::llround(warmup_frac * double(total_steps)));
  if (warmup > 0 && step <= warmup) return max_lr * double(step) / double(warmup);
  return max_lr * double(total_steps - step) / double(total_steps - warmup);
}

double clip_global_norm(std::vector<GradSlot>& slots, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sq = 0;
  for (const auto& s : slots)
    for (int64_t i = 0; i < s.n; ++i) sq += double(s.grad[i]) * s.grad[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float scale = float(max_norm / norm);
    for (auto& s : slots)
      for (int64_t i = 0; i < s.n; ++i) s.grad[i] *= scale;
  }
  return norm;
}

static void check_finite(const GradSlot& s) {
  for (int64_t i = 0; i < s.n; ++i)
    if (!std::isfinite(s.grad[i]))
      throw std::runtime_error("adam: non-finite gradient in tensor '" + s.name + "'");
}

void AdamState::step_dense(std::vector<GradSlot>& slots, double lr) {
  const int64_t t = step_ + 1;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(t));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(t));
  for (auto& s : slots) {
    check_finite(s);
    auto& [m, v] = moments_[s.name];
    if (int64_t(m.size()) != s.n) {
      m.assign(size_t(s.n), 0.0f);
      v.assign(size_t(s.n), 0.0f);
    }
    for (int64_t i = 0; i < s.n; ++i) {
      const double g = s.grad[i];
      m[size_t(i)] = float(config_.beta1 * m[size_t(i)] + (1.0 - config_.beta1) * g);
      v[size_t(i)] = float(config_.beta2 * v[size_t(i)] + (1.0 - config_.beta2) * g * g);
      const double mhat = m[size_t(i)] / bc1;
      const double vhat = v[size_t(i)] / bc2;
      s.values[i] = float(s.values[i] - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

void AdamState::step_sparse_row(const std::string& table_name, int row, float* values,
                                const float* grad, int d, double lr) {
  for (int i = 0; i < d; ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("adam: non-finite gradient in tensor '" + table_name +
                               "' row " + std::to_string(row));
  auto& state = sparse_[table_name][row];
  if (int(state.m.size()) != d) {
    state.m.assign(size_t(d), 0.0f);
    state.v.assign(size_t(d), 0.0f);
    state.t = 0;
  }
  const int64_t t = ++state.t;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(t));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(t));
  for (int i = 0; i < d; ++i) {
    const double g = grad[i];
    state.m[size_t(i)] = float(config_.beta1 * state.m[size_t(i)] + (1.0 - config_.beta1) * g);
    state.v[size_t(i)] = float(config_.beta2 * state.v[size_t(i)] + (1.0 - config_.beta2) * g * g);
    const double mhat = state.m[size_t(i)] / bc1;
    const double vhat = state.v[size_t(i)] / bc2;
    values[i] = float(values[i] - lr * mhat / (std::sqrt(vhat) + config_.eps));
  }
}

}  // namespace relic
