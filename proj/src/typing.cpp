#include "relic/typing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "relic/ops.hpp"
#include "relic/optimizer.hpp"

namespace relic {

TypingLabels load_typing_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open labels " + path);
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  std::set<std::string> type_set;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      auto types = rec.at("types").get<std::vector<std::string>>();
      raw.push_back({rec.at("entity_id").get<std::string>(), types});
      for (const auto& t : types) type_set.insert(t);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed label record: " + e.what());
    }
  }
  if (raw.empty()) throw std::runtime_error(path + ": empty labels file");

  TypingLabels out;
  out.type_names.assign(type_set.begin(), type_set.end());
  std::unordered_map<std::string, int> type_id;
  for (int t = 0; t < int(out.type_names.size()); ++t) type_id[out.type_names[size_t(t)]] = t;
  for (auto& [entity, types] : raw) {
    out.entity_ids.push_back(entity);
    std::vector<int> ids;
    for (const auto& t : types) ids.push_back(type_id.at(t));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    out.gold.push_back(std::move(ids));
  }
  return out;
}

namespace {

void normalized_embedding(const EmbeddingTable& table, int row, std::vector<float>& out) {
  const int d = table.dim();
  const double n = row_norm(table.row(row), d);
  if (n == 0.0)
    throw std::runtime_error("typing probe: zero-norm embedding for entity " +
                             table.id_of(row));
  out.resize(size_t(d));
  for (int j = 0; j < d; ++j) out[size_t(j)] = float(table.row(row)[j] / n);
}

// forward over a batch of normalized inputs; train mode applies dropout to the
// input and the relu units
struct ProbeBatch {
  Tensor x;        // B x d (normalized, post-dropout)
  std::vector<uint8_t> x_mask;
  Tensor z1, h1;   // B x d_h
  std::vector<uint8_t> h_mask;
  Tensor h1_dropped;
  Tensor z2;       // B x T
  Tensor probs;    // sigmoid(z2)
};

void probe_batch_forward(const TypingProbe& probe, Tensor x, bool train, double keep,
                         RngState& rng, ProbeBatch& fb) {
  dropout(x, keep, train, rng, fb.x, fb.x_mask);
  Tensor z1_raw;
  matmul(fb.x, probe.w1, z1_raw);
  add_bias(z1_raw, probe.b1, fb.z1);
  relu(fb.z1, fb.h1);
  dropout(fb.h1, keep, train, rng, fb.h1_dropped, fb.h_mask);
  Tensor z2_raw;
  matmul(fb.h1_dropped, probe.w2, z2_raw);
  add_bias(z2_raw, probe.b2, fb.z2);
  fb.probs = fb.z2;
  for (auto& v : fb.probs.values) v = float(1.0 / (1.0 + std::exp(-double(v))));
}

}  // namespace

std::vector<float> probe_forward(const TypingProbe& probe, const float* h_e, int d) {
  const double n = row_norm(h_e, d);
  if (n == 0.0) throw std::runtime_error("probe_forward: zero embedding");
  Tensor x({1, d});
  for (int j = 0; j < d; ++j) x.values[size_t(j)] = float(h_e[j] / n);
  ProbeBatch fb;
  RngState rng(0);
  probe_batch_forward(probe, std::move(x), false, 1.0, rng, fb);
  return fb.probs.values;
}

TypingProbe train_probe(const EmbeddingTable& table, const TypingLabels& labels,
                        const std::vector<int>& train_rows, const std::vector<int>& val_rows,
                        const ProbeConfig& config) {
  const int d = table.dim();
  const int t_count = int(labels.type_names.size());
  for (const auto& id : labels.entity_ids) table.require(id);

  RngState init_rng = RngState(config.seed).derive(1);
  TypingProbe probe;
  probe.w1 = init_trunc_normal<float>({d, config.d_h}, 0.02, init_rng);
  probe.b1 = Tensor({config.d_h});
  probe.w2 = Tensor({config.d_h, t_count});  // zero: untrained probe outputs 0.5
  probe.b2 = Tensor({t_count});

  // row index within `labels` for each labeled entity
  auto gold_row = [&](int label_idx) -> const std::vector<int>& {
    return labels.gold[size_t(label_idx)];
  };
  auto input_of = [&](int label_idx, std::vector<float>& buf) {
    normalized_embedding(table, table.require(labels.entity_ids[size_t(label_idx)]), buf);
  };

  auto batch_loss = [&](const std::vector<int>& rows, bool train, RngState& rng,
                        ProbeBatch* out_fb, Tensor* dz2) -> double {
    const int b = int(rows.size());
    Tensor x({b, d});
    std::vector<float> buf;
    for (int i = 0; i < b; ++i) {
      input_of(rows[size_t(i)], buf);
      std::copy(buf.begin(), buf.end(), x.data() + size_t(i) * d);
    }
    ProbeBatch local;
    ProbeBatch& fb = out_fb ? *out_fb : local;
    probe_batch_forward(probe, std::move(x), train, config.dropout_keep, rng, fb);
    // summed binary cross-entropy over all types
    double loss = 0;
    if (dz2) *dz2 = Tensor({b, t_count});
    for (int i = 0; i < b; ++i) {
      const auto& gold = gold_row(rows[size_t(i)]);
      size_t gi = 0;
      for (int t = 0; t < t_count; ++t) {
        const bool is_gold = gi < gold.size() && gold[gi] == t;
        if (is_gold) ++gi;
        const double p = std::clamp(double(fb.probs.at(i, t)), 1e-7, 1.0 - 1e-7);
        loss += is_gold ? -std::log(p) : -std::log(1.0 - p);
        if (dz2) dz2->at(i, t) = float((p - (is_gold ? 1.0 : 0.0)) / b);
      }
    }
    return loss / b;
  };

  AdamState opt;
  RngState train_rng = RngState(config.seed).derive(2);
  RngState order_rng = RngState(config.seed).derive(3);
  double best_val = 1e300;
  TypingProbe best = probe;
  int bad_checks = 0;

  std::vector<int> order(train_rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = train_rows[i];

  for (int64_t step = 0; step < config.max_steps; ++step) {
    // sample a batch with replacement; plain SGD-style batching is enough here
    const int b = std::min<int>(config.batch, int(order.size()));
    std::vector<int> rows(static_cast<size_t>(b));
    for (auto& r : rows) r = order[size_t(order_rng.below(uint64_t(order.size())))];

    ProbeBatch fb;
    Tensor dz2;
    batch_loss(rows, true, train_rng, &fb, &dz2);

    // backward
    probe.w1.ensure_grad();
    probe.b1.ensure_grad();
    probe.w2.ensure_grad();
    probe.b2.ensure_grad();
    probe.w1.zero_grad();
    probe.b1.zero_grad();
    probe.w2.zero_grad();
    probe.b2.zero_grad();

    accumulate_bias_grad(probe.b2, dz2);
    Tensor h_drop_copy = fb.h1_dropped;
    h_drop_copy.grad.assign(h_drop_copy.values.size(), 0.0f);
    matmul_backward(h_drop_copy, probe.w2, dz2);
    Tensor dh_dropped({b, config.d_h});
    dh_dropped.values = h_drop_copy.grad;
    Tensor h1_copy = fb.h1;
    h1_copy.grad.assign(h1_copy.values.size(), 0.0f);
    dropout_backward(h1_copy, config.dropout_keep, fb.h_mask, dh_dropped);
    Tensor dh1({b, config.d_h});
    dh1.values = h1_copy.grad;
    Tensor z1_copy = fb.z1;
    z1_copy.grad.assign(z1_copy.values.size(), 0.0f);
    relu_backward(z1_copy, dh1);
    Tensor dz1({b, config.d_h});
    dz1.values = z1_copy.grad;
    accumulate_bias_grad(probe.b1, dz1);
    Tensor x_copy = fb.x;
    x_copy.grad.assign(x_copy.values.size(), 0.0f);
    matmul_backward(x_copy, probe.w1, dz1);

    std::vector<GradSlot> slots = {
        {"probe.w1", probe.w1.data(), probe.w1.grad.data(), probe.w1.numel()},
        {"probe.b1", probe.b1.data(), probe.b1.grad.data(), probe.b1.numel()},
        {"probe.w2", probe.w2.data(), probe.w2.grad.data(), probe.w2.numel()},
        {"probe.b2", probe.b2.data(), probe.b2.grad.data(), probe.b2.numel()},
    };
    opt.step_dense(slots, config.lr);
    opt.advance_step();

    if (!val_rows.empty() && config.check_interval > 0 &&
        (step + 1) % config.check_interval == 0) {
      RngState eval_rng(0);
      const double val = batch_loss(val_rows, false, eval_rng, nullptr, nullptr);
      if (val < best_val - 1e-9) {
        best_val = val;
        best = probe;
        bad_checks = 0;
      } else if (++bad_checks >= config.patience) {
        return best;
      }
    }
  }
  return val_rows.empty() || best_val == 1e300 ? probe : best;
}

TypingMetrics typing_metrics(const std::vector<std::vector<float>>& predictions,
                             const std::vector<std::vector<int>>& gold, int type_count,
                             double threshold, bool map_per_type) {
  if (predictions.size() != gold.size())
    throw std::invalid_argument("typing_metrics: misaligned rows");
  const size_t n = predictions.size();
  double p1_hits = 0, p1_total = 0;
  double exact = 0;
  int64_t tp = 0, fp = 0, fn = 0;
  double ap_sum = 0, ap_total = 0;

  for (size_t i = 0; i < n; ++i) {
    const auto& probs = predictions[i];
    if (int(probs.size()) != type_count)
      throw std::invalid_argument("typing_metrics: bad prediction width");
    const auto& g = gold[i];
    auto is_gold = [&](int t) { return std::binary_search(g.begin(), g.end(), t); };

    // thresholded decisions feed accuracy and micro F1
    bool all_match = true;
    for (int t = 0; t < type_count; ++t) {
      const bool pred = probs[size_t(t)] >= threshold;
      const bool label = is_gold(t);
      if (pred && label) ++tp;
      if (pred && !label) ++fp;
      if (!pred && label) ++fn;
      if (pred != label) all_match = false;
    }
    if (all_match) exact += 1;

    if (g.empty()) continue;  // excluded from P@1 and MAP

    int argmax = 0;
    for (int t = 1; t < type_count; ++t)
      if (probs[size_t(t)] > probs[size_t(argmax)]) argmax = t;
    p1_total += 1;
    if (is_gold(argmax)) p1_hits += 1;

    if (!map_per_type) {
      // AP of the type ranking against the gold set (ties by type id)
      std::vector<int> ranking(static_cast<size_t>(type_count));
      for (int t = 0; t < type_count; ++t) ranking[size_t(t)] = t;
      std::stable_sort(ranking.begin(), ranking.end(), [&](int a, int b) {
        return probs[size_t(a)] > probs[size_t(b)];
      });
      double hits = 0, ap = 0;
      for (size_t r = 0; r < ranking.size(); ++r) {
        if (is_gold(ranking[r])) {
          hits += 1;
          ap += hits / double(r + 1);
        }
      }
      ap_sum += ap / double(g.size());
      ap_total += 1;
    }
  }

  if (map_per_type) {
    // rank entities per type by that type's probability
    for (int t = 0; t < type_count; ++t) {
      std::vector<int> ranking;
      std::vector<char> relevant(n, 0);
      int n_rel = 0;
      for (size_t i = 0; i < n; ++i) {
        ranking.push_back(int(i));
        if (std::binary_search(gold[i].begin(), gold[i].end(), t)) {
          relevant[i] = 1;
          ++n_rel;
        }
      }
      if (n_rel == 0) continue;
      std::stable_sort(ranking.begin(), ranking.end(), [&](int a, int b) {
        return predictions[size_t(a)][size_t(t)] > predictions[size_t(b)][size_t(t)];
      });
      double hits = 0, ap = 0;
      for (size_t r = 0; r < ranking.size(); ++r) {
        if (relevant[size_t(ranking[r])]) {
          hits += 1;
          ap += hits / double(r + 1);
        }
      }
      ap_sum += ap / n_rel;
      ap_total += 1;
    }
  }

  TypingMetrics m;
  m.p_at_1 = p1_total > 0 ? p1_hits / p1_total : 0.0;
  m.accuracy = n > 0 ? exact / double(n) : 0.0;
  const double denom = 2.0 * double(tp) + double(fp) + double(fn);
  m.micro_f1 = denom > 0 ? 2.0 * double(tp) / denom : (fp + fn == 0 ? 1.0 : 0.0);
  m.map = ap_total > 0 ? ap_sum / ap_total : 0.0;
  return m;
}

TypingEvalResult eval_typing(const EmbeddingTable& table, const TypingLabels& labels,
                             const ProbeConfig& config) {
  const int n = int(labels.entity_ids.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  RngState split_rng = RngState(config.seed).derive(11);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[size_t(split_rng.below(uint64_t(i)))]);
  const int n_val = std::max(1, int(std::lround(config.val_frac * n)));
  if (n_val >= n) throw std::runtime_error("eval_typing: too few labeled entities to split");
  std::vector<int> val_rows(order.begin(), order.begin() + n_val);
  std::vector<int> train_rows(order.begin() + n_val, order.end());

  TypingProbe probe = train_probe(table, labels, train_rows, val_rows, config);

  auto predict = [&](const std::vector<int>& rows, std::vector<std::vector<float>>& preds,
                     std::vector<std::vector<int>>& gold) {
    for (int idx : rows) {
      const int row = table.require(labels.entity_ids[size_t(idx)]);
      preds.push_back(probe_forward(probe, table.row(row), table.dim()));
      gold.push_back(labels.gold[size_t(idx)]);
    }
  };

  TypingEvalResult out;
  {
    std::vector<std::vector<float>> preds;
    std::vector<std::vector<int>> gold;
    predict(val_rows, preds, gold);
    out.metrics = typing_metrics(preds, gold, int(labels.type_names.size()),
                                 config.threshold, config.map_per_type);
  }
  {
    std::vector<std::vector<float>> preds;
    std::vector<std::vector<int>> gold;
    predict(train_rows, preds, gold);
    out.train_metrics = typing_metrics(preds, gold, int(labels.type_names.size()),
                                       config.threshold, config.map_per_type);
  }
  out.train_entities = int(train_rows.size());
  out.val_entities = int(val_rows.size());
  return out;
}

}  // namespace relic
