// relic: fill-in-the-blank entity representation training and evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "relic/ann.hpp"
#include "relic/corpus.hpp"
#include "relic/io_util.hpp"
#include "relic/linking.hpp"
#include "relic/manifest.hpp"
#include "relic/qa.hpp"
#include "relic/ranking.hpp"
#include "relic/synthetic.hpp"
#include "relic/trainer.hpp"
#include "relic/typing.hpp"

using namespace relic;

namespace {

// raw text fields of a corpus file, for vocabulary building
std::vector<std::string> corpus_texts(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open corpus " + path);
  std::vector<std::string> texts;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      texts.push_back(nlohmann::json::parse(line).at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed record: " +
                               e.what());
    }
  }
  return texts;
}

std::vector<std::string> entity_order(const std::vector<MentionRecord>& records) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.entity_id).second) ids.push_back(r.entity_id);
  return ids;
}

std::vector<std::pair<std::string, std::string>> config_kv(const TrainConfig& cfg) {
  auto str = [](auto v) { return std::to_string(v); };
  return {{"batch_size", str(cfg.batch_size)},
          {"total_steps", str(cfg.total_steps)},
          {"max_lr", str(cfg.max_lr)},
          {"warmup_frac", str(cfg.warmup_frac)},
          {"clip_norm", str(cfg.clip_norm)},
          {"mask_rate", str(cfg.mask_rate)},
          {"seed", str(cfg.seed)},
          {"d", str(cfg.d)},
          {"hidden", str(cfg.hidden)},
          {"layers", str(cfg.layers)},
          {"heads", str(cfg.heads)},
          {"ff_size", str(cfg.ff_size)},
          {"max_len", str(cfg.max_len)},
          {"vocab_max", str(cfg.vocab_max)},
          {"freeze_table", cfg.freeze_table ? "true" : "false"},
          {"freeze_encoder", cfg.freeze_encoder ? "true" : "false"},
          {"metric", cfg.metric == Metric::kCosine ? "cosine" : "dot"},
          {"threads", str(cfg.threads)}};
}

// fresh model + training run over a corpus file
struct TrainedModel {
  Checkpoint ckpt;
  TrainResult result;
  size_t skipped = 0;
};

TrainedModel run_training(const std::string& corpus_path, const TrainConfig& cfg,
                          const std::string& init_prefix, const std::string& out_prefix) {
  TrainedModel out;
  if (!init_prefix.empty()) {
    out.ckpt = load_checkpoint(init_prefix);
  }
  Vocab vocab = init_prefix.empty() ? build_vocab(corpus_texts(corpus_path), cfg.vocab_max)
                                    : out.ckpt.vocab;
  LoadedCorpus corpus = load_corpus(corpus_path, vocab);
  out.skipped = corpus.skipped;
  if (corpus.records.empty()) throw std::runtime_error("train: empty corpus");

  if (init_prefix.empty()) {
    RngState table_rng = RngState(cfg.seed).derive(1);
    RngState enc_rng = RngState(cfg.seed).derive(2);
    out.ckpt.vocab = vocab;
    out.ckpt.table = EmbeddingTable::init(entity_order(corpus.records), cfg.d, table_rng,
                                          cfg.init_std);
    out.ckpt.params = init_encoder<float>(cfg.encoder_config(vocab.size()), enc_rng,
                                          cfg.init_std, cfg.scale_init);
  }
  std::vector<TrainItem> items = items_from_records(corpus.records, out.ckpt.table);
  const int64_t base_step = out.ckpt.step;
  CheckpointHook at_interval = [&](int64_t step) {
    out.ckpt.step = base_step + step;
    Checkpoint& live = out.ckpt;
    save_checkpoint(live, out_prefix + ".step" + std::to_string(out.ckpt.step));
  };
  out.result = train_loop(items, out.ckpt.table, out.ckpt.params, out.ckpt.opt, cfg,
                          out_prefix + ".metrics.csv", nullptr, nullptr, at_interval);
  out.ckpt.step = base_step + out.result.steps_run;
  return out;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
  if (path.empty()) return;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << header << "\n";
  for (const auto& r : rows) os << r << "\n";
}

struct CommonTrainFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs

  TrainConfig resolve(TrainConfig base = {}) const {
    TrainConfig cfg = base;
    if (!config_path.empty()) cfg = parse_train_config(config_path, cfg);
    for (const auto& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + kv + "'");
      apply_config_line(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RELIC-style entity representations: training and evaluation"};
  app.require_subcommand(1);

  // ---- gen-synthetic -------------------------------------------------------
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
  SyntheticSpec spec;
  std::string gen_out = "synthetic";
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--entities", spec.n_entities);
  gen->add_option("--types", spec.n_types);
  gen->add_option("--types-per-entity", spec.types_per_entity);
  gen->add_option("--contexts", spec.contexts_per_entity);
  gen->add_flag("--name-unique,!--no-name-unique", spec.name_uniqueness,
                "globally unique surface names");
  gen->add_option("--seed", spec.seed);

  // ---- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train entity embeddings on a corpus");
  std::string train_corpus, train_out = "model", train_init;
  CommonTrainFlags train_flags;
  train_cmd->add_option("--corpus", train_corpus, "corpus JSONL")->required();
  train_cmd->add_option("--out", train_out, "checkpoint prefix");
  train_cmd->add_option("--init", train_init, "checkpoint prefix to fine-tune from");
  train_cmd->add_option("--config", train_flags.config_path, "key = value config file");
  train_cmd->add_option("--set", train_flags.overrides, "config overrides (key=value)");
  std::optional<double> train_mask_rate;
  std::optional<int64_t> train_steps;
  std::optional<uint64_t> train_seed;
  std::optional<int> train_threads;
  train_cmd->add_option("--mask-rate", train_mask_rate);
  train_cmd->add_option("--total-steps", train_steps);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--threads", train_threads);

  // ---- eval-typing ---------------------------------------------------------
  auto* et = app.add_subcommand("eval-typing", "typing probe on entity embeddings");
  std::string et_ckpt, et_labels, et_out;
  ProbeConfig probe_cfg;
  et->add_option("--checkpoint", et_ckpt)->required();
  et->add_option("--labels", et_labels)->required();
  et->add_option("--out", et_out, "CSV output path");
  et->add_option("--dh", probe_cfg.d_h);
  et->add_option("--val-frac", probe_cfg.val_frac);
  et->add_option("--seed", probe_cfg.seed);
  et->add_option("--max-steps", probe_cfg.max_steps);
  et->add_option("--patience", probe_cfg.patience);
  bool map_per_type = false;
  et->add_flag("--map-per-type", map_per_type);

  // ---- eval-category -------------------------------------------------------
  auto* ec = app.add_subcommand("eval-category", "few-shot category completion");
  std::string ec_ckpt, ec_categories, ec_out;
  int ec_exemplars = 3, ec_trials = 5;
  uint64_t ec_seed = 1;
  bool ec_no_normalize = false;
  ec->add_option("--checkpoint", ec_ckpt)->required();
  ec->add_option("--categories", ec_categories)->required();
  ec->add_option("--out", ec_out, "CSV output path");
  ec->add_option("--exemplars", ec_exemplars);
  ec->add_option("--trials", ec_trials);
  ec->add_option("--seed", ec_seed);
  ec->add_flag("--no-normalize-centroid", ec_no_normalize);

  // ---- eval-linking --------------------------------------------------------
  auto* el = app.add_subcommand("eval-linking", "entity linking over gold mentions");
  std::string el_ckpt, el_docs, el_alias, el_candidates, el_out;
  int64_t el_limit = 0;
  el->add_option("--checkpoint", el_ckpt)->required();
  el->add_option("--docs", el_docs, "corpus-format JSONL with gold mentions")->required();
  el->add_option("--alias", el_alias, "alias JSONL");
  el->add_option("--candidates", el_candidates, "candidate-set file, one id per line");
  el->add_option("--out", el_out, "CSV output path");
  el->add_option("--limit", el_limit, "evaluate at most this many mentions");

  // ---- eval-qa -------------------------------------------------------------
  auto* eq = app.add_subcommand("eval-qa", "two-round QA fine-tuning and retrieval EM");
  std::string eq_ckpt, eq_qa, eq_qa_dev, eq_alias, eq_out = "qa_model";
  QaConfig qa_cfg;
  CommonTrainFlags qa_flags;
  eq->add_option("--checkpoint", eq_ckpt)->required();
  eq->add_option("--qa", eq_qa, "QA JSONL train set")->required();
  eq->add_option("--qa-dev", eq_qa_dev, "QA JSONL dev set (defaults to the train set)");
  eq->add_option("--alias", eq_alias, "alias JSONL for linking raw answer strings");
  eq->add_option("--out", eq_out, "fine-tuned checkpoint prefix");
  eq->add_option("--steps1", qa_cfg.round1_steps);
  eq->add_option("--steps2", qa_cfg.round2_steps);
  eq->add_option("--negatives", qa_cfg.hard_negatives);
  eq->add_option("--config", qa_flags.config_path);
  eq->add_option("--set", qa_flags.overrides);

  // ---- nn ------------------------------------------------------------------
  auto* nn = app.add_subcommand("nn", "print nearest neighbors of an entity");
  std::string nn_ckpt, nn_id, nn_metric = "cosine";
  int nn_k = 10;
  nn->add_option("--checkpoint", nn_ckpt)->required();
  nn->add_option("--id", nn_id, "query entity id")->required();
  nn->add_option("--k", nn_k);
  nn->add_option("--metric", nn_metric)->check(CLI::IsMember({"cosine", "dot"}));

  // ---- ablate-mask ---------------------------------------------------------
  auto* ab = app.add_subcommand("ablate-mask", "mask-rate ablation over training runs");
  std::string ab_corpus, ab_labels, ab_out;
  std::vector<double> ab_rates;
  std::vector<uint64_t> ab_seeds = {1};
  CommonTrainFlags ab_flags;
  int64_t ab_link_limit = 0;
  ab->add_option("--corpus", ab_corpus)->required();
  ab->add_option("--labels", ab_labels)->required();
  ab->add_option("--rates", ab_rates, "mask rates to train")->required()->delimiter(',');
  ab->add_option("--seeds", ab_seeds)->delimiter(',');
  ab->add_option("--out", ab_out, "CSV output path");
  ab->add_option("--config", ab_flags.config_path);
  ab->add_option("--set", ab_flags.overrides);
  ab->add_option("--link-limit", ab_link_limit, "cap mentions per linking eval");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      spec.validate();
      RunManifest manifest;
      manifest.command = "gen-synthetic";
      manifest.seed = spec.seed;
      manifest.config = {{"entities", std::to_string(spec.n_entities)},
                         {"types", std::to_string(spec.n_types)},
                         {"types_per_entity", std::to_string(spec.types_per_entity)},
                         {"contexts", std::to_string(spec.contexts_per_entity)},
                         {"name_unique", spec.name_uniqueness ? "true" : "false"}};
      manifest.outputs = {gen_out + "/corpus.jsonl", gen_out + "/labels.jsonl",
                          gen_out + "/categories.jsonl", gen_out + "/qa.jsonl",
                          gen_out + "/alias.jsonl"};
      std::filesystem::create_directories(gen_out);
      manifest.write(gen_out + "/manifest.json");
      SyntheticFiles files = gen_synthetic(spec, gen_out);
      print_json({{"corpus", files.corpus},
                  {"labels", files.labels},
                  {"categories", files.categories},
                  {"qa", files.qa},
                  {"alias", files.alias}});
    } else if (*train_cmd) {
      TrainConfig cfg = train_flags.resolve();
      if (train_mask_rate) cfg.mask_rate = *train_mask_rate;
      if (train_steps) cfg.total_steps = *train_steps;
      if (train_seed) cfg.seed = *train_seed;
      if (train_threads) cfg.threads = *train_threads;
      cfg.validate();

      RunManifest manifest;
      manifest.command = "train";
      manifest.seed = cfg.seed;
      manifest.config = config_kv(cfg);
      manifest.inputs = {train_corpus};
      if (!train_init.empty())
        manifest.inputs.push_back(train_init + ".rlck");
      manifest.outputs = {train_out + ".rlck", train_out + ".relc", train_out + ".meta.json",
                          train_out + ".metrics.csv"};
      manifest.write(train_out + ".manifest.json");

      TrainedModel model = run_training(train_corpus, cfg, train_init, train_out);
      save_checkpoint(model.ckpt, train_out);
      print_json({{"checkpoint", train_out},
                  {"steps", model.result.steps_run},
                  {"final_loss", model.result.final_loss},
                  {"final_mean_rank", model.result.final_mean_rank},
                  {"final_accuracy", model.result.final_accuracy},
                  {"skipped_records", model.skipped}});
    } else if (*et) {
      Checkpoint ckpt = load_checkpoint(et_ckpt);
      TypingLabels labels = load_typing_labels(et_labels);
      probe_cfg.map_per_type = map_per_type;
      TypingEvalResult r = eval_typing(ckpt.table, labels, probe_cfg);
      print_json({{"p_at_1", r.metrics.p_at_1},
                  {"accuracy", r.metrics.accuracy},
                  {"micro_f1", r.metrics.micro_f1},
                  {"map", r.metrics.map},
                  {"train_entities", r.train_entities},
                  {"val_entities", r.val_entities}});
      char row[256];
      std::snprintf(row, sizeof(row), "%.6f,%.6f,%.6f,%.6f", r.metrics.p_at_1,
                    r.metrics.accuracy, r.metrics.micro_f1, r.metrics.map);
      write_csv(et_out, "p_at_1,accuracy,micro_f1,map", {row});
    } else if (*ec) {
      Checkpoint ckpt = load_checkpoint(ec_ckpt);
      auto categories = load_categories(ec_categories);
      CategoryCompletionResult r = category_completion(
          ckpt.table, categories, ec_exemplars, ec_seed, ec_trials, !ec_no_normalize);
      print_json({{"map", r.map},
                  {"categories", r.categories.size()},
                  {"skipped", r.skipped},
                  {"missing_members", r.missing_members}});
      std::vector<std::string> rows;
      for (const auto& c : r.categories) {
        char row[256];
        std::snprintf(row, sizeof(row), "%s,%.6f", c.name.c_str(), c.ap);
        rows.push_back(row);
      }
      write_csv(ec_out, "category,ap", rows);
    } else if (*el) {
      Checkpoint ckpt = load_checkpoint(el_ckpt);
      LoadedCorpus docs = load_corpus(el_docs, ckpt.vocab);
      AliasTable alias;
      CandidateSet cands;
      if (!el_alias.empty()) alias = load_alias_table(el_alias);
      if (!el_candidates.empty()) cands = load_candidate_set(el_candidates);
      LinkingResult r = linking_eval(ckpt.params, ckpt.table, docs.records,
                                     el_alias.empty() ? nullptr : &alias,
                                     el_candidates.empty() ? nullptr : &cands, el_limit);
      print_json({{"accuracy", r.accuracy},
                  {"correct", r.correct},
                  {"total", r.total},
                  {"unreachable", r.unreachable},
                  {"rejected", r.rejected},
                  {"candidate_missing", r.candidate_missing},
                  {"skipped_records", docs.skipped}});
      char row[256];
      std::snprintf(row, sizeof(row), "%.6f,%lld,%lld,%lld", r.accuracy,
                    static_cast<long long>(r.correct), static_cast<long long>(r.total),
                    static_cast<long long>(r.unreachable));
      write_csv(el_out, "accuracy,correct,total,unreachable", {row});
    } else if (*eq) {
      Checkpoint ckpt = load_checkpoint(eq_ckpt);
      qa_cfg.train = qa_flags.resolve(qa_cfg.train);
      qa_cfg.train.max_len = ckpt.params.config.max_len;
      qa_cfg.train.d = ckpt.params.config.output_dim;

      RunManifest manifest;
      manifest.command = "eval-qa";
      manifest.seed = qa_cfg.train.seed;
      manifest.config = config_kv(qa_cfg.train);
      manifest.inputs = {eq_ckpt + ".rlck", eq_qa};
      manifest.outputs = {eq_out + ".rlck", eq_out + ".relc", eq_out + ".meta.json"};
      manifest.write(eq_out + ".manifest.json");

      AliasTable qa_alias;
      if (!eq_alias.empty()) qa_alias = load_alias_table(eq_alias);
      const AliasTable* alias_ptr = eq_alias.empty() ? nullptr : &qa_alias;
      size_t skipped = 0;
      auto train_items = load_qa(eq_qa, ckpt.vocab, &ckpt.table, &skipped, alias_ptr);
      auto dev_items = eq_qa_dev.empty()
                           ? train_items
                           : load_qa(eq_qa_dev, ckpt.vocab, &ckpt.table, nullptr, alias_ptr);
      QaResult r = qa_pipeline(ckpt, train_items, dev_items, qa_cfg, eq_out + ".metrics");
      r.skipped_answers = int64_t(skipped);
      save_checkpoint(ckpt, eq_out);
      print_json({{"em", r.em},
                  {"em_round1", r.em_round1},
                  {"round1_final_loss", r.round1_final_loss},
                  {"round2_initial_loss", r.round2_initial_loss},
                  {"skipped_answers", r.skipped_answers},
                  {"checkpoint", eq_out}});
    } else if (*nn) {
      Checkpoint ckpt = load_checkpoint(nn_ckpt);
      const int row = ckpt.table.require(nn_id);
      const Metric metric = nn_metric == "dot" ? Metric::kDot : Metric::kCosine;
      RankedList top = nn_search(ckpt.table, ckpt.table.row(row), nn_k, metric);
      for (const auto& [id, s] : top.items) std::printf("%s %.6f\n", id.c_str(), s);
    } else if (*ab) {
      TrainConfig base = ab_flags.resolve();
      // deduplicate rates, preserving order
      std::vector<double> rates;
      for (double r : ab_rates) {
        if (std::find(rates.begin(), rates.end(), r) != rates.end()) {
          log_info("ablate-mask: duplicate rate %.3f ignored", r);
          continue;
        }
        rates.push_back(r);
      }

      RunManifest manifest;
      manifest.command = "ablate-mask";
      manifest.seed = ab_seeds.empty() ? 0 : ab_seeds[0];
      manifest.config = config_kv(base);
      manifest.inputs = {ab_corpus, ab_labels};
      if (!ab_out.empty()) manifest.outputs = {ab_out};
      if (!ab_out.empty()) manifest.write(ab_out + ".manifest.json");

      TypingLabels labels = load_typing_labels(ab_labels);
      Vocab vocab = build_vocab(corpus_texts(ab_corpus), base.vocab_max);
      LoadedCorpus corpus = load_corpus(ab_corpus, vocab);

      std::vector<std::string> rows;
      nlohmann::json summary = nlohmann::json::array();
      for (uint64_t seed : ab_seeds) {
        for (double rate : rates) {
          TrainConfig cfg = base;
          cfg.seed = seed;
          cfg.mask_rate = rate;
          RngState table_rng = RngState(cfg.seed).derive(1);
          RngState enc_rng = RngState(cfg.seed).derive(2);
          Checkpoint ckpt;
          ckpt.vocab = vocab;
          ckpt.table = EmbeddingTable::init(entity_order(corpus.records), cfg.d, table_rng,
                                            cfg.init_std);
          ckpt.params = init_encoder<float>(cfg.encoder_config(vocab.size()), enc_rng,
                                            cfg.init_std, cfg.scale_init);
          auto items = items_from_records(corpus.records, ckpt.table);
          train_loop(items, ckpt.table, ckpt.params, ckpt.opt, cfg, "");

          LinkingResult link = linking_eval(ckpt.params, ckpt.table, corpus.records,
                                            nullptr, nullptr, ab_link_limit);
          ProbeConfig pc;
          pc.seed = 7;  // shared probe seed across models
          TypingEvalResult typing = eval_typing(ckpt.table, labels, pc);

          char buf[256];
          std::snprintf(buf, sizeof(buf), "%.3f,%llu,%.6f,%.6f", rate,
                        static_cast<unsigned long long>(seed), link.accuracy,
                        typing.metrics.map);
          rows.push_back(buf);
          summary.push_back({{"rate", rate},
                             {"seed", seed},
                             {"linking_accuracy", link.accuracy},
                             {"typing_map", typing.metrics.map}});
          log_info("ablate rate %.2f seed %llu: linking %.3f typing-map %.3f", rate,
                   static_cast<unsigned long long>(seed), link.accuracy, typing.metrics.map);
        }
      }
      write_csv(ab_out, "rate,seed,linking_accuracy,typing_map", rows);
      print_json(summary);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
