#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "relic/tensor.hpp"

namespace relic {

// Linear ramp 0 -> max_lr over the first warmup_frac of total_steps, then
// linear decay max_lr -> 0 at total_steps.
double lr_schedule(int64_t step, int64_t total_steps, double max_lr, double warmup_frac);

// One named gradient view participating in global-norm clipping / Adam.
struct GradSlot {
  std::string name;
  float* values = nullptr;
  float* grad = nullptr;
  int64_t n = 0;
};

// Scales all gradients by max_norm/g when the global L2 norm g exceeds
// max_norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<GradSlot>& slots, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Dense moments keyed by slot name; sparse per-row
// moments (with per-row step counts) for embedding-table rows, so untouched
// rows never pay moment storage or decay.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  void step_dense(std::vector<GradSlot>& slots, double lr);
  // One update for table row `row` with gradient `grad` (length d).
  void step_sparse_row(const std::string& table_name, int row, float* values,
                       const float* grad, int d, double lr);

  int64_t step_count() const { return step_; }
  void advance_step() { ++step_; }
  void set_step(int64_t s) { step_ = s; }

  const AdamConfig& config() const { return config_; }

  // dense moment access for checkpointing
  std::unordered_map<std::string, std::pair<std::vector<float>, std::vector<float>>>& moments() {
    return moments_;
  }
  struct SparseRowState {
    std::vector<float> m, v;
    int64_t t = 0;
  };
  std::unordered_map<std::string, std::unordered_map<int, SparseRowState>>& sparse() {
    return sparse_;
  }

 private:
  AdamConfig config_;
  int64_t step_ = 0;  // completed optimizer steps; dense bias correction uses step_+1
  std::unordered_map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments_;
  std::unordered_map<std::string, std::unordered_map<int, SparseRowState>> sparse_;
};

}  // namespace relic
