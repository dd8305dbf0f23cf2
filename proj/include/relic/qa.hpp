#pragma once

#include <string>
#include <vector>

#include "relic/ann.hpp"
#include "relic/trainer.hpp"

namespace relic {

struct QAItem {
  std::vector<int> token_ids;  // question, no markers
  std::string answer_entity;
};

// {"question": string, "answer_entity": string} per line; records may carry
// a raw "answer" string instead, resolved through resolve_answer_string when
// an alias table is given. Questions whose answer is missing from the table
// (or cannot be linked) are counted and skipped.
std::vector<QAItem> load_qa(const std::string& path, const Vocab& vocab,
                            const EmbeddingTable* table = nullptr, size_t* skipped = nullptr,
                            const class AliasTable* aliases = nullptr);

// Naive answer-string linking: exact lowercase match into the alias table,
// first candidate wins. Empty result means unlinkable.
std::string resolve_answer_string(const std::string& answer, const AliasTable& aliases);

// Per question, the k nearest entities excluding the gold answer. List
// lengths are exactly min(k, N - 1).
std::vector<std::vector<int>> mine_hard_negatives(const AnnIndex& index,
                                                  const Tensor& question_vecs,
                                                  const std::vector<int>& gold_rows, int k);

// Fraction of questions whose cosine top-1 entity equals gold.
double retrieval_exact_match(EncoderParams& params, const EmbeddingTable& table,
                             const std::vector<QAItem>& items);

struct QaConfig {
  TrainConfig train;   // batch size, lr, schedule; table freezing is forced
  int64_t round1_steps = 500;
  int64_t round2_steps = 300;
  int hard_negatives = 128;
  AnnConfig ann;
};

struct QaResult {
  double em = 0;                  // on the dev set, after both rounds
  double em_round1 = 0;           // after round 1
  double round1_final_loss = 0;   // in-batch loss on train at the round-1 end
  double round2_initial_loss = 0; // hard-negative loss on the same checkpoint
  int64_t skipped_answers = 0;
};

// Two rounds of fine-tuning with the entity table frozen: in-batch negatives,
// then ANN-mined hard negatives. Evaluation is top-1 retrieval over the table.
QaResult qa_pipeline(Checkpoint& ckpt, const std::vector<QAItem>& train_items,
                     const std::vector<QAItem>& dev_items, QaConfig config,
                     const std::string& metrics_csv = "");

}  // namespace relic
