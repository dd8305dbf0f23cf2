#include "relic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include <json.hpp>

#include "relic/container.hpp"
#include "relic/io_util.hpp"

namespace relic {

// rng substream tags; all run randomness funnels through one seed
enum : uint64_t {
  kRngTableInit = 1,
  kRngEncoderInit = 2,
  kRngShuffle = 3,
  kRngMask = 4,
  kRngDropout = 5,
};

void TrainConfig::validate() const {
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0))
    throw std::invalid_argument("config: warmup_frac must be in [0, 1)");
  if (batch_size < 2)
    throw std::invalid_argument("config: batch_size must be >= 2 for in-batch negatives");
  if (!(clip_norm > 0)) throw std::invalid_argument("config: clip_norm must be > 0");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0))
    throw std::invalid_argument("config: mask_rate must be in [0, 1]");
  if (total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

EncoderConfig TrainConfig::encoder_config(int vocab_size) const {
  EncoderConfig ec;
  ec.vocab_size = vocab_size;
  ec.max_len = max_len;
  ec.hidden = hidden;
  ec.layers = layers;
  ec.heads = heads;
  ec.ff_size = ff_size;
  ec.output_dim = d;
  ec.dropout_keep = dropout_keep;
  return ec;
}

void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto as_i64 = [&] { return std::stoll(value); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: bad boolean '" + value + "'");
  };
  if (key == "batch_size") cfg.batch_size = as_int();
  else if (key == "total_steps") cfg.total_steps = as_i64();
  else if (key == "max_lr") cfg.max_lr = as_double();
  else if (key == "warmup_frac") cfg.warmup_frac = as_double();
  else if (key == "clip_norm") cfg.clip_norm = as_double();
  else if (key == "mask_rate") cfg.mask_rate = as_double();
  else if (key == "mask_per_token") cfg.mask_per_token = as_bool();
  else if (key == "seed") cfg.seed = uint64_t(as_i64());
  else if (key == "d") cfg.d = as_int();
  else if (key == "hidden") cfg.hidden = as_int();
  else if (key == "layers") cfg.layers = as_int();
  else if (key == "heads") cfg.heads = as_int();
  else if (key == "ff_size") cfg.ff_size = as_int();
  else if (key == "max_len") cfg.max_len = as_int();
  else if (key == "dropout_keep") cfg.dropout_keep = as_double();
  else if (key == "vocab_max") cfg.vocab_max = as_int();
  else if (key == "init_std") cfg.init_std = as_double();
  else if (key == "scale_init") cfg.scale_init = as_double();
  else if (key == "freeze_table") cfg.freeze_table = as_bool();
  else if (key == "freeze_encoder") cfg.freeze_encoder = as_bool();
  else if (key == "metric") {
    if (value == "cosine") cfg.metric = Metric::kCosine;
    else if (value == "dot") cfg.metric = Metric::kDot;
    else throw std::invalid_argument("config: metric must be cosine or dot");
  }
  else if (key == "log_interval") cfg.log_interval = as_int();
  else if (key == "checkpoint_interval") cfg.checkpoint_interval = as_i64();
  else if (key == "threads") cfg.threads = as_int();
  else if (key == "linking_contexts") cfg.linking_contexts = as_bool();
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\"");
      const auto e = s.find_last_not_of(" \t\r\"");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    try {
      apply_config_line(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

// --- checkpoint io ----------------------------------------------------------

void save_checkpoint(Checkpoint& ckpt, const std::string& prefix) {
  TensorContainer c;
  ckpt.params.for_each([&](const std::string& name, Tensor& t) { c.put(name, t); });
  // moment maps are unordered; emit them sorted so saves are byte-stable
  {
    std::map<std::string, std::pair<std::vector<float>, std::vector<float>>*> ordered;
    for (auto& [name, mv] : ckpt.opt.moments()) ordered[name] = &mv;
    for (auto& [name, mv] : ordered) {
      Tensor m({int(mv->first.size())});
      m.values = mv->first;
      Tensor v({int(mv->second.size())});
      v.values = mv->second;
      c.put("opt.m." + name, std::move(m));
      c.put("opt.v." + name, std::move(v));
    }
  }
  std::map<std::string, std::unordered_map<int, AdamState::SparseRowState>*> sparse_sorted;
  for (auto& [table_name, rows] : ckpt.opt.sparse()) sparse_sorted[table_name] = &rows;
  for (auto& [table_name, rows_ptr] : sparse_sorted) {
    auto& rows = *rows_ptr;
    std::map<int, AdamState::SparseRowState*> ordered;
    for (auto& [row, st] : rows) ordered[row] = &st;
    const int r = int(ordered.size());
    if (r == 0) continue;
    const int dim = int(ordered.begin()->second->m.size());
    Tensor rows_t({r}), t_t({r}), m_t({r, dim}), v_t({r, dim});
    int i = 0;
    for (auto& [row, st] : ordered) {
      rows_t.values[size_t(i)] = float(row);
      t_t.values[size_t(i)] = float(st->t);
      std::copy(st->m.begin(), st->m.end(), m_t.values.begin() + size_t(i) * dim);
      std::copy(st->v.begin(), st->v.end(), v_t.values.begin() + size_t(i) * dim);
      ++i;
    }
    c.put("opt.sparse." + table_name + ".rows", std::move(rows_t));
    c.put("opt.sparse." + table_name + ".t", std::move(t_t));
    c.put("opt.sparse." + table_name + ".m", std::move(m_t));
    c.put("opt.sparse." + table_name + ".v", std::move(v_t));
  }
  Tensor step({1});
  step.values[0] = float(ckpt.step);
  c.put("step", std::move(step));
  save_container(c, prefix + ".rlck");

  save_table(ckpt.table, prefix + ".relc");

  nlohmann::json meta;
  const EncoderConfig& ec = ckpt.params.config;
  meta["encoder"] = {{"vocab_size", ec.vocab_size}, {"max_len", ec.max_len},
                     {"hidden", ec.hidden},         {"layers", ec.layers},
                     {"heads", ec.heads},           {"ff_size", ec.ff_size},
                     {"output_dim", ec.output_dim}, {"dropout_keep", ec.dropout_keep}};
  meta["step"] = ckpt.step;
  meta["vocab"] = ckpt.vocab.tokens();
  std::ofstream os(prefix + ".meta.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + prefix + ".meta.json");
  os << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& prefix) {
  Checkpoint ckpt;
  std::ifstream ms(prefix + ".meta.json");
  if (!ms) throw std::runtime_error("cannot open " + prefix + ".meta.json");
  nlohmann::json meta = nlohmann::json::parse(ms);
  EncoderConfig ec;
  const auto& e = meta.at("encoder");
  ec.vocab_size = e.at("vocab_size").get<int>();
  ec.max_len = e.at("max_len").get<int>();
  ec.hidden = e.at("hidden").get<int>();
  ec.layers = e.at("layers").get<int>();
  ec.heads = e.at("heads").get<int>();
  ec.ff_size = e.at("ff_size").get<int>();
  ec.output_dim = e.at("output_dim").get<int>();
  ec.dropout_keep = e.at("dropout_keep").get<double>();
  ckpt.vocab = Vocab(meta.at("vocab").get<std::vector<std::string>>());

  TensorContainer c = load_container(prefix + ".rlck");
  ckpt.params.config = ec;
  ckpt.params.layers.resize(size_t(ec.layers));
  ckpt.params.for_each([&](const std::string& name, Tensor& t) { t = c.get(name); });
  for (auto& [name, t] : c.entries) {
    if (name.rfind("opt.m.", 0) == 0)
      ckpt.opt.moments()[name.substr(6)].first = t.values;
    else if (name.rfind("opt.v.", 0) == 0)
      ckpt.opt.moments()[name.substr(6)].second = t.values;
  }
  for (auto& [name, t] : c.entries) {
    if (name.rfind("opt.sparse.", 0) != 0 || name.size() < 16) continue;
    if (name.substr(name.size() - 5) != ".rows") continue;
    const std::string table_name = name.substr(11, name.size() - 11 - 5);
    const Tensor& rows_t = t;
    const Tensor& t_t = c.get("opt.sparse." + table_name + ".t");
    const Tensor& m_t = c.get("opt.sparse." + table_name + ".m");
    const Tensor& v_t = c.get("opt.sparse." + table_name + ".v");
    const int dim = m_t.cols();
    for (int i = 0; i < rows_t.rows(); ++i) {
      auto& st = ckpt.opt.sparse()[table_name][int(rows_t.values[size_t(i)])];
      st.t = int64_t(t_t.values[size_t(i)]);
      st.m.assign(m_t.values.begin() + size_t(i) * dim, m_t.values.begin() + size_t(i + 1) * dim);
      st.v.assign(v_t.values.begin() + size_t(i) * dim, v_t.values.begin() + size_t(i + 1) * dim);
    }
  }
  ckpt.step = int64_t(c.get("step").values[0]);
  ckpt.opt.set_step(ckpt.step);
  ckpt.table = load_table(prefix + ".relc");
  return ckpt;
}

// --- training loop ----------------------------------------------------------

std::vector<TrainItem> items_from_records(const std::vector<MentionRecord>& records,
                                          EmbeddingTable& table) {
  std::vector<TrainItem> items;
  items.reserve(records.size());
  auto& freq = table.frequencies();
  freq.assign(size_t(table.size()), 0);
  for (const auto& r : records) {
    const int row = table.index_of(r.entity_id);
    if (row < 0)
      throw std::runtime_error("train: corpus entity '" + r.entity_id +
                               "' missing from the embedding table");
    ++freq[size_t(row)];
    items.push_back({r.token_ids, r.mention_begin, r.mention_end, row});
  }
  return items;
}

Context item_context(const TrainItem& item, const TrainConfig& cfg, RngState& rng) {
  if (item.mention_begin >= 0 && cfg.linking_contexts) {
    // in-domain linking tuning: same construction as linking_eval, never masked
    auto ctx = make_linking_context_budget(
        item.token_ids, {item.mention_begin, item.mention_end},
        std::min(129, cfg.max_len));
    if (!ctx) throw std::runtime_error("train: unbuildable linking context");
    return std::move(*ctx);
  }
  if (item.mention_begin >= 0) {
    auto ctx = make_context(item.token_ids, {item.mention_begin, item.mention_end},
                            {cfg.mask_rate, cfg.max_len, cfg.mask_per_token}, rng);
    if (!ctx) throw std::runtime_error("train: unbuildable context (mention too long)");
    return std::move(*ctx);
  }
  // QA mode: no markers, head-truncated
  Context ctx;
  ctx.token_ids.push_back(kCls);
  const int take = std::min<int>(int(item.token_ids.size()), cfg.max_len - 1);
  ctx.token_ids.insert(ctx.token_ids.end(), item.token_ids.begin(),
                       item.token_ids.begin() + take);
  return ctx;
}

namespace {

// contexts for one batch; parallel when cfg.threads > 1 (per-example rng keyed
// on (seed, epoch, item index) keeps any thread count bit-deterministic)
std::vector<Context> assemble_batch(const std::vector<TrainItem>& items,
                                    const std::vector<int>& order, size_t begin, int b,
                                    const TrainConfig& cfg, int64_t epoch) {
  std::vector<Context> contexts(static_cast<size_t>(b));
  auto build = [&](int i) {
    const int idx = order[begin + size_t(i)];
    RngState rng = RngState(cfg.seed).derive(kRngMask);
    rng = rng.derive(uint64_t(epoch) * 0x10001 + uint64_t(idx));
    contexts[size_t(i)] = item_context(items[size_t(idx)], cfg, rng);
  };
  if (cfg.threads <= 1) {
    for (int i = 0; i < b; ++i) build(i);
    return contexts;
  }
  std::vector<std::future<void>> futs;
  const int chunk = (b + cfg.threads - 1) / cfg.threads;
  for (int t = 0; t < cfg.threads; ++t) {
    const int lo = t * chunk, hi = std::min(b, lo + chunk);
    if (lo >= hi) break;
    futs.push_back(std::async(std::launch::async, [&, lo, hi] {
      for (int i = lo; i < hi; ++i) build(i);
    }));
  }
  for (auto& f : futs) f.get();
  return contexts;
}

Tensor gather_rows(const EmbeddingTable& table, const std::vector<int>& rows) {
  Tensor out({int(rows.size()), table.dim()});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(table.row(rows[i]), table.dim(), out.data() + i * size_t(table.dim()));
  return out;
}

}  // namespace

TrainResult train_loop(std::vector<TrainItem> items, EmbeddingTable& table,
                       EncoderParams& params, AdamState& opt, const TrainConfig& cfg,
                       const std::string& metrics_csv,
                       const std::vector<std::vector<int>>* hard_negatives,
                       const MetricsHook& hook, const CheckpointHook& checkpoint_hook) {
  cfg.validate();
  if (items.empty()) throw std::runtime_error("train: empty corpus");
  if (hard_negatives && !cfg.freeze_table)
    throw std::runtime_error("train: hard-negative mode requires a frozen entity table");
  const int b = cfg.batch_size;
  if (int(items.size()) < b)
    throw std::runtime_error("train: corpus smaller than one batch");

  std::ofstream csv;
  if (!metrics_csv.empty()) {
    csv.open(metrics_csv, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + metrics_csv);
    csv << "step,lr,loss,mean_rank,accuracy\n";
  }

  RngState dropout_rng = RngState(cfg.seed).derive(kRngDropout);
  RngState shuffle_rng = RngState(cfg.seed).derive(kRngShuffle);
  const int64_t steps_per_epoch = int64_t(items.size()) / b;  // partial batch dropped

  std::vector<int> order(items.size());
  TrainResult result;
  int64_t epoch = -1;
  for (int64_t step = 0; step < cfg.total_steps; ++step) {
    const int64_t this_epoch = step / steps_per_epoch;
    if (this_epoch != epoch) {
      epoch = this_epoch;
      for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
      // seeded Fisher-Yates keyed on the epoch
      RngState er = shuffle_rng.derive(uint64_t(epoch) + 101);
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[size_t(er.below(uint64_t(i)))]);
    }
    const size_t pos = size_t(step % steps_per_epoch) * size_t(b);

    std::vector<Context> contexts = assemble_batch(items, order, pos, b, cfg, epoch);
    std::vector<int> row_of(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) row_of[size_t(i)] = items[size_t(order[pos + size_t(i)])].entity_row;

    params.zero_grad();
    BatchCache<float> cache;
    Tensor g = encode_batch(params, contexts, /*train=*/true, dropout_rng, &cache);
    const double a = params.scale_a.values[0];

    ScoreMatrix sm;
    CosineCache<float> cos_cache;
    Tensor f_rows;
    std::vector<int> cand_rows;  // hard-negative mode: b x (k+1) row ids
    if (!hard_negatives) {
      f_rows = gather_rows(table, row_of);
      sm = batch_score_matrix(g, f_rows, a, row_of, &cos_cache, cfg.metric);
    } else {
      const int k1 = int((*hard_negatives)[0].size()) + 1;
      cand_rows.reserve(size_t(b) * k1);
      for (int i = 0; i < b; ++i) {
        const int idx = order[pos + size_t(i)];
        cand_rows.push_back(items[size_t(idx)].entity_row);
        const auto& negs = (*hard_negatives)[size_t(idx)];
        if (int(negs.size()) + 1 != k1)
          throw std::runtime_error("train: ragged hard-negative lists");
        cand_rows.insert(cand_rows.end(), negs.begin(), negs.end());
      }
      f_rows = gather_rows(table, cand_rows);
      sm = rowwise_score_matrix(g, f_rows, k1, a, &cos_cache, cfg.metric);
    }

    Tensor dscores;
    const double loss = nce_loss(sm, &dscores);
    auto [mean_rank, accuracy] = in_batch_metrics(sm);

    Tensor dg, df;
    double da = 0;
    if (!hard_negatives)
      cosine_score_backward(g, f_rows, a, cos_cache, dscores, dg, df, da, cfg.metric);
    else
      rowwise_score_backward(g, f_rows, a, cos_cache, dscores, dg, df, da, cfg.metric);

    std::vector<GradSlot> slots;
    if (!cfg.freeze_encoder) {
      encode_batch_backward(params, cache, dg);
      params.scale_a.ensure_grad();
      params.scale_a.grad[0] += float(da);
      params.for_each([&](const std::string& name, Tensor& t) {
        slots.push_back({name, t.data(), t.grad.data(), t.numel()});
      });
    }

    // accumulate entity-row gradients by unique row
    std::map<int, std::vector<float>> row_grads;
    if (!cfg.freeze_table) {
      const int dim = table.dim();
      const std::vector<int>& owner = hard_negatives ? cand_rows : row_of;
      for (size_t i = 0; i < owner.size(); ++i) {
        auto& acc = row_grads[owner[i]];
        if (acc.empty()) acc.assign(size_t(dim), 0.0f);
        const float* src = df.data() + i * size_t(dim);
        for (int j = 0; j < dim; ++j) acc[size_t(j)] += src[j];
      }
      for (auto& [row, grad] : row_grads)
        slots.push_back({"entity_table", nullptr, grad.data(), int64_t(grad.size())});
    }

    clip_global_norm(slots, cfg.clip_norm);

    const double lr = lr_schedule(step, cfg.total_steps, cfg.max_lr, cfg.warmup_frac);
    if (!cfg.freeze_encoder) {
      std::vector<GradSlot> dense(slots.begin(), slots.begin() + (slots.size() - row_grads.size()));
      opt.step_dense(dense, lr);
    }
    if (!cfg.freeze_table) {
      const int dim = table.dim();
      for (auto& [row, grad] : row_grads) {
        std::vector<float> updated(table.row(row), table.row(row) + dim);
        opt.step_sparse_row("entity_table", row, updated.data(), grad.data(), dim, lr);
        table.set_row(row, updated.data());
      }
    }
    opt.advance_step();

    result.final_loss = loss;
    result.final_mean_rank = mean_rank;
    result.final_accuracy = accuracy;
    result.steps_run = step + 1;
    const bool log_now = cfg.log_interval > 0 &&
                         (step % cfg.log_interval == 0 || step + 1 == cfg.total_steps);
    if (log_now) {
      if (csv.is_open()) {
        char line[160];
        std::snprintf(line, sizeof(line), "%lld,%.8g,%.6f,%.4f,%.4f\n",
                      static_cast<long long>(step), lr, loss, mean_rank, accuracy);
        csv << line;
      }
      if (hook) hook(step, lr, loss, mean_rank, accuracy);
      log_debug("step %lld lr %.3g loss %.4f rank %.2f acc %.3f",
                static_cast<long long>(step), lr, loss, mean_rank, accuracy);
      // parameter health check at every log interval
      params.for_each([&](const std::string& name, Tensor& t) {
        for (float v : t.values)
          if (!std::isfinite(v))
            throw std::runtime_error("train: non-finite parameter in '" + name + "'");
      });
    }
    if (checkpoint_hook && cfg.checkpoint_interval > 0 &&
        (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.total_steps)
      checkpoint_hook(step + 1);
  }
  return result;
}

double evaluate_loss(const std::vector<TrainItem>& items, EmbeddingTable& table,
                     EncoderParams& params, const TrainConfig& cfg,
                     const std::vector<std::vector<int>>* hard_negatives) {
  const int b = cfg.batch_size;
  RngState rng(cfg.seed);
  double total = 0;
  int64_t batches = 0;
  for (size_t pos = 0; pos + size_t(b) <= items.size(); pos += size_t(b)) {
    std::vector<Context> contexts;
    std::vector<int> row_of;
    RngState mask_rng = RngState(cfg.seed).derive(kRngMask).derive(uint64_t(pos));
    for (int i = 0; i < b; ++i) {
      contexts.push_back(item_context(items[pos + size_t(i)], cfg, mask_rng));
      row_of.push_back(items[pos + size_t(i)].entity_row);
    }
    Tensor g = encode_batch(params, contexts, /*train=*/false, rng);
    const double a = params.scale_a.values[0];
    ScoreMatrix sm;
    if (!hard_negatives) {
      Tensor f_rows = gather_rows(table, row_of);
      sm = batch_score_matrix(g, f_rows, a, row_of, static_cast<CosineCache<float>*>(nullptr), cfg.metric);
    } else {
      const int k1 = int((*hard_negatives)[0].size()) + 1;
      std::vector<int> cand_rows;
      for (int i = 0; i < b; ++i) {
        cand_rows.push_back(row_of[size_t(i)]);
        const auto& negs = (*hard_negatives)[pos + size_t(i)];
        cand_rows.insert(cand_rows.end(), negs.begin(), negs.end());
      }
      Tensor f_rows = gather_rows(table, cand_rows);
      sm = rowwise_score_matrix(g, f_rows, k1, a, static_cast<CosineCache<float>*>(nullptr), cfg.metric);
    }
    total += nce_loss(sm);
    ++batches;
  }
  if (batches == 0) throw std::runtime_error("evaluate_loss: fewer items than one batch");
  return total / double(batches);
}

}  // namespace relic
