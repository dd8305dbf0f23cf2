#include "relic/qa.hpp"

#include <fstream>

#include <json.hpp>

#include "relic/io_util.hpp"
#include "relic/linking.hpp"

namespace relic {

std::string resolve_answer_string(const std::string& answer, const AliasTable& aliases) {
  auto it = aliases.candidates.find(lowercase_ascii(answer));
  if (it == aliases.candidates.end() || it->second.empty()) return {};
  return it->second.front();
}

std::vector<QAItem> load_qa(const std::string& path, const Vocab& vocab,
                            const EmbeddingTable* table, size_t* skipped,
                            const AliasTable* aliases) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open qa file " + path);
  std::vector<QAItem> out;
  size_t skip_count = 0;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string problem;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      QAItem item;
      item.token_ids = tokenize(rec.at("question").get<std::string>(), vocab);
      if (rec.contains("answer_entity")) {
        item.answer_entity = rec["answer_entity"].get<std::string>();
      } else if (aliases) {
        // raw answer string: naive lowercase title match, skip rate reported
        item.answer_entity =
            resolve_answer_string(rec.at("answer").get<std::string>(), *aliases);
        if (item.answer_entity.empty()) {
          ++skip_count;
          continue;
        }
      } else {
        problem = "record has no answer_entity (pass an alias table to link raw answers)";
      }
      if (problem.empty() && item.token_ids.empty()) problem = "empty question";
      if (problem.empty()) {
        if (table && table->index_of(item.answer_entity) < 0) {
          ++skip_count;
          continue;
        }
        out.push_back(std::move(item));
      }
    } catch (const nlohmann::json::exception& e) {
      problem = std::string("malformed qa record: ") + e.what();
    }
    if (!problem.empty())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + problem);
  }
  if (skipped) {
    *skipped = skip_count;
    if (skip_count)
      log_info("load_qa: skipped %zu of %zu records (unlinkable or unknown answers)",
               skip_count, skip_count + out.size());
  }
  return out;
}

std::vector<std::vector<int>> mine_hard_negatives(const AnnIndex& index,
                                                  const Tensor& question_vecs,
                                                  const std::vector<int>& gold_rows, int k) {
  if (k < 1) throw std::invalid_argument("mine_hard_negatives: K must be >= 1");
  const EmbeddingTable& table = index.table();
  const int n = table.size();
  const int want = std::min(k, n - 1);
  const int b = question_vecs.rows();
  if (int(gold_rows.size()) != b)
    throw std::invalid_argument("mine_hard_negatives: gold list misaligned");
  std::vector<std::vector<int>> out(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    RankedList top = index.search(question_vecs.data() + size_t(i) * question_vecs.cols(),
                                  std::min(want + 1, n));
    auto& negs = out[size_t(i)];
    for (const auto& [id, s] : top.items) {
      const int row = table.require(id);
      if (row == gold_rows[size_t(i)]) continue;
      negs.push_back(row);
      if (int(negs.size()) == want) break;
    }
    if (int(negs.size()) < want)
      throw std::runtime_error("mine_hard_negatives: index returned too few neighbors");
  }
  return out;
}

namespace {

std::vector<TrainItem> qa_train_items(const std::vector<QAItem>& items,
                                      const EmbeddingTable& table) {
  std::vector<TrainItem> out;
  out.reserve(items.size());
  for (const auto& q : items) {
    TrainItem item;
    item.token_ids = q.token_ids;
    item.entity_row = table.require(q.answer_entity);
    out.push_back(std::move(item));
  }
  return out;
}

Context qa_context(const QAItem& item, int max_len) {
  Context ctx;
  ctx.token_ids.push_back(kCls);
  const int take = std::min<int>(int(item.token_ids.size()), max_len - 1);
  ctx.token_ids.insert(ctx.token_ids.end(), item.token_ids.begin(),
                       item.token_ids.begin() + take);
  return ctx;
}

}  // namespace

double retrieval_exact_match(EncoderParams& params, const EmbeddingTable& table,
                             const std::vector<QAItem>& items) {
  if (items.empty()) throw std::invalid_argument("retrieval_exact_match: empty item set");
  RngState rng(0);
  int64_t hits = 0;
  for (const auto& item : items) {
    Context ctx = qa_context(item, params.config.max_len);
    Tensor g = encode_context(params, ctx, /*train=*/false, rng);
    RankedList top = nn_search(table, g, 1, Metric::kCosine);
    if (!top.items.empty() && top.items[0].first == item.answer_entity) ++hits;
  }
  return double(hits) / double(items.size());
}

QaResult qa_pipeline(Checkpoint& ckpt, const std::vector<QAItem>& train_items,
                     const std::vector<QAItem>& dev_items, QaConfig config,
                     const std::string& metrics_csv) {
  if (dev_items.empty()) throw std::invalid_argument("qa_pipeline: empty dev set");
  if (train_items.empty()) throw std::invalid_argument("qa_pipeline: empty train set");

  // RELIC representations stay frozen through both rounds
  config.train.freeze_table = true;
  config.train.mask_rate = 0.0;

  std::vector<TrainItem> items = qa_train_items(train_items, ckpt.table);

  QaResult result;

  // round 1: in-batch negatives
  TrainConfig round1 = config.train;
  round1.total_steps = config.round1_steps;
  AdamState opt1;
  train_loop(items, ckpt.table, ckpt.params, opt1, round1,
             metrics_csv.empty() ? "" : metrics_csv + ".round1.csv");
  result.em_round1 = retrieval_exact_match(ckpt.params, ckpt.table, dev_items);
  result.round1_final_loss = evaluate_loss(items, ckpt.table, ckpt.params, round1);

  // mine hard negatives against the round-1 encoder
  Tensor q_vecs({int(items.size()), ckpt.params.config.output_dim});
  {
    RngState rng(0);
    for (size_t i = 0; i < items.size(); ++i) {
      Context ctx = qa_context(train_items[i], ckpt.params.config.max_len);
      Tensor g = encode_context(ckpt.params, ctx, false, rng);
      std::copy(g.values.begin(), g.values.end(),
                q_vecs.values.begin() + i * size_t(ckpt.params.config.output_dim));
    }
  }
  std::vector<int> gold_rows;
  for (const auto& item : items) gold_rows.push_back(item.entity_row);
  AnnIndex index(ckpt.table, config.ann);
  auto negatives = mine_hard_negatives(index, q_vecs, gold_rows, config.hard_negatives);

  // round 2: explicit hard negatives
  TrainConfig round2 = config.train;
  round2.total_steps = config.round2_steps;
  round2.seed = config.train.seed + 1;
  result.round2_initial_loss =
      evaluate_loss(items, ckpt.table, ckpt.params, round2, &negatives);
  AdamState opt2;
  train_loop(items, ckpt.table, ckpt.params, opt2, round2,
             metrics_csv.empty() ? "" : metrics_csv + ".round2.csv", &negatives);

  result.em = retrieval_exact_match(ckpt.params, ckpt.table, dev_items);
  ckpt.step += config.round1_steps + config.round2_steps;
  ckpt.opt = std::move(opt2);
  return result;
}

}  // namespace relic
