#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "relic/entity_table.hpp"
#include "relic/tensor.hpp"

namespace relic {

// Entity-level typing probe: sigmoid(W2 . relu(W1 . h_e/|h_e| + b1) + b2).
// Probe inputs are L2-normalized and the embedding table stays frozen.
struct TypingProbe {
  Tensor w1, b1;  // d x d_h, d_h
  Tensor w2, b2;  // d_h x T, T
  int type_count() const { return int(b2.numel()); }
};

struct ProbeConfig {
  int d_h = 500;
  double dropout_keep = 0.5;
  double lr = 1e-4;
  int batch = 256;
  int64_t max_steps = 4000;
  int check_interval = 25;   // validation-loss checks
  int patience = 10;         // checks without improvement before stopping
  double threshold = 0.5;
  double val_frac = 0.2;
  uint64_t seed = 7;
  bool map_per_type = false;  // AP averaged over types instead of entities
};

struct TypingLabels {
  std::vector<std::string> type_names;               // sorted, defines type ids
  std::vector<std::string> entity_ids;               // file order
  std::vector<std::vector<int>> gold;                // aligned type-id sets, sorted
};

TypingLabels load_typing_labels(const std::string& path);

struct TypingMetrics {
  double p_at_1 = 0;
  double accuracy = 0;
  double micro_f1 = 0;
  double map = 0;
};

// T type probabilities for one embedding; exactly invariant to input rescaling.
std::vector<float> probe_forward(const TypingProbe& probe, const float* h_e, int d);

// Adam on summed binary cross-entropy until validation loss stops improving;
// the table is never touched. Output layer starts at zero so an untrained
// probe emits exactly 0.5 everywhere.
TypingProbe train_probe(const EmbeddingTable& table, const TypingLabels& labels,
                        const std::vector<int>& train_rows, const std::vector<int>& val_rows,
                        const ProbeConfig& config);

// P@1 and MAP skip entities with empty gold sets; accuracy and micro F1 count
// them.
TypingMetrics typing_metrics(const std::vector<std::vector<float>>& predictions,
                             const std::vector<std::vector<int>>& gold, int type_count,
                             double threshold = 0.5, bool map_per_type = false);

struct TypingEvalResult {
  TypingMetrics metrics;      // on the validation split
  TypingMetrics train_metrics;
  int train_entities = 0;
  int val_entities = 0;
};

// Seeded split, probe training, metrics on held-out entities.
TypingEvalResult eval_typing(const EmbeddingTable& table, const TypingLabels& labels,
                             const ProbeConfig& config);

}  // namespace relic
