#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relic/corpus.hpp"
#include "relic/encoder.hpp"
#include "relic/entity_table.hpp"
#include "relic/objective.hpp"
#include "relic/optimizer.hpp"
#include "relic/vocab.hpp"

namespace relic {

struct TrainConfig {
  // optimization
  int batch_size = 32;
  int64_t total_steps = 2000;
  double max_lr = 1e-3;
  double warmup_frac = 0.1;
  double clip_norm = 1.0;
  double mask_rate = 0.1;
  bool mask_per_token = false;
  uint64_t seed = 1;
  // model (full-scale reference: batch 8192, 1M steps, d 300, max_lr 5e-5)
  int d = 32;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ff_size = 256;
  int max_len = 64;
  double dropout_keep = 1.0;
  int vocab_max = 8192;
  double init_std = 0.02;
  double scale_init = 16.0;
  // behavior
  bool freeze_table = false;
  bool freeze_encoder = false;
  bool linking_contexts = false;  // build eval-style linking contexts (in-domain tuning)
  Metric metric = Metric::kCosine;
  int log_interval = 50;
  int64_t checkpoint_interval = 0;  // 0 = final only
  int threads = 1;

  void validate() const;
  EncoderConfig encoder_config(int vocab_size) const;
};

// Key-value config file ("key = value" lines, '#' comments); unknown keys
// raise. Missing file raises.
TrainConfig parse_train_config(const std::string& path, TrainConfig base = {});
void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value);

struct Checkpoint {
  EncoderParams params;
  EmbeddingTable table;
  AdamState opt;
  int64_t step = 0;
  Vocab vocab;
};

// <prefix>.rlck (encoder tensors + optimizer state + step counter),
// <prefix>.relc (entity table), <prefix>.meta.json (encoder config + vocab).
void save_checkpoint(Checkpoint& ckpt, const std::string& prefix);
Checkpoint load_checkpoint(const std::string& prefix);

// One unit of training data: a tokenized sentence with an optional mention
// range (QA items carry none) and a resolved table row.
struct TrainItem {
  std::vector<int> token_ids;
  int mention_begin = -1;
  int mention_end = -1;
  int entity_row = -1;
};

struct TrainResult {
  double final_loss = 0;
  double final_mean_rank = 0;
  double final_accuracy = 0;
  int64_t steps_run = 0;
};

using MetricsHook = std::function<void(int64_t step, double lr, double loss,
                                       double mean_rank, double accuracy)>;
// invoked after every checkpoint_interval steps (and never at the end; the
// caller owns the final save)
using CheckpointHook = std::function<void(int64_t step)>;

// The optimization loop: assemble batch (masking per epoch), encode, in-batch
// score matrix, NCE loss, backprop into encoder, projection, scale and the
// touched entity rows, clip, Adam. Deterministic given config.seed.
// When `hard_negatives` is set, row i of each batch scores against its own
// [gold, negatives...] candidates instead of the batch (requires a frozen
// table). Partial final batches are dropped.
TrainResult train_loop(std::vector<TrainItem> items, EmbeddingTable& table,
                       EncoderParams& params, AdamState& opt, const TrainConfig& cfg,
                       const std::string& metrics_csv,
                       const std::vector<std::vector<int>>* hard_negatives = nullptr,
                       const MetricsHook& hook = nullptr,
                       const CheckpointHook& checkpoint_hook = nullptr);

// Resolves corpus records against the table (error names the first unknown
// entity id) and counts per-entity frequencies.
std::vector<TrainItem> items_from_records(const std::vector<MentionRecord>& records,
                                          EmbeddingTable& table);

// Mean NCE loss of a fixed item set under the current parameters (eval mode,
// in-batch or explicit negatives), without touching any state.
double evaluate_loss(const std::vector<TrainItem>& items, EmbeddingTable& table,
                     EncoderParams& params, const TrainConfig& cfg,
                     const std::vector<std::vector<int>>* hard_negatives = nullptr);

// Builds the encoder input for one item (masking via the caller's rng).
Context item_context(const TrainItem& item, const TrainConfig& cfg, RngState& rng);

}  // namespace relic
