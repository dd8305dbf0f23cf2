#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "relic/io_util.hpp"
#include "relic/optimizer.hpp"
#include "relic/synthetic.hpp"
#include "relic/trainer.hpp"

using namespace relic;

namespace {

struct Fixture {
  Vocab vocab;
  EmbeddingTable table;
  EncoderParams params;
  std::vector<TrainItem> items;
  TrainConfig cfg;

  explicit Fixture(uint64_t seed = 1, int n_entities = 12, int contexts = 6) {
    std::vector<std::string> words;
    for (int i = 0; i < 40; ++i) words.push_back("w" + std::to_string(i));
    std::string text;
    for (auto& w : words) text += w + " ";
    vocab = build_vocab({text}, 64);

    cfg.seed = seed;
    cfg.batch_size = 4;
    cfg.total_steps = 10;
    cfg.d = 8;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff_size = 32;
    cfg.max_len = 16;
    cfg.max_lr = 1e-3;
    cfg.log_interval = 5;

    std::vector<std::string> ids;
    for (int i = 0; i < n_entities; ++i) ids.push_back("E" + std::to_string(i));
    RngState table_rng = RngState(seed).derive(1);
    table = EmbeddingTable::init(ids, cfg.d, table_rng);
    RngState enc_rng = RngState(seed).derive(2);
    params = init_encoder<float>(cfg.encoder_config(vocab.size()), enc_rng);

    RngState data_rng(seed + 99);
    // interleaved so sequential eval batches mix entities
    for (int c = 0; c < contexts; ++c) {
      for (int e = 0; e < n_entities; ++e) {
        TrainItem item;
        const int base = int(data_rng.below(30));
        item.token_ids = {vocab.lookup("w" + std::to_string(base)),
                          vocab.lookup("w" + std::to_string(e % 40)),
                          vocab.lookup("w" + std::to_string((base + 7) % 40)),
                          vocab.lookup("w" + std::to_string((e * 3) % 40))};
        item.mention_begin = 1;
        item.mention_end = 2;
        item.entity_row = e;
        items.push_back(item);
      }
    }
  }
};

}  // namespace

TEST_CASE("lr schedule ramps linearly then decays linearly") {
  CHECK(lr_schedule(0, 1000, 1.0, 0.1) == doctest::Approx(0.0));
  CHECK(lr_schedule(100, 1000, 1.0, 0.1) == doctest::Approx(1.0));  // warmup boundary
  CHECK(lr_schedule(550, 1000, 1.0, 0.1) == doctest::Approx(0.5));
  CHECK(lr_schedule(1000, 1000, 1.0, 0.1) == doctest::Approx(0.0));
  CHECK(lr_schedule(50, 1000, 1.0, 0.1) == doctest::Approx(0.5));

  // piecewise linear and continuous; max is exactly max_lr at the boundary
  double prev = lr_schedule(0, 200, 0.7, 0.1);
  double peak = 0;
  for (int s = 1; s <= 200; ++s) {
    double lr = lr_schedule(s, 200, 0.7, 0.1);
    CHECK(std::fabs(lr - prev) <= 0.7 / 20 + 1e-12);  // bounded slope
    peak = std::max(peak, lr);
    prev = lr;
  }
  CHECK(peak == doctest::Approx(0.7));
  CHECK(lr_schedule(20, 200, 0.7, 0.1) == doctest::Approx(0.7));
}

TEST_CASE("clip_global_norm rescales only above the threshold") {
  std::vector<float> small = {0.3f, 0.4f};  // norm 0.5
  std::vector<GradSlot> slots = {{"g", nullptr, small.data(), 2}};
  clip_global_norm(slots, 1.0);
  CHECK(small[0] == doctest::Approx(0.3f));
  CHECK(small[1] == doctest::Approx(0.4f));

  std::vector<float> big = {3.0f, 4.0f};  // norm 5
  std::vector<GradSlot> slots2 = {{"g", nullptr, big.data(), 2}};
  const double norm = clip_global_norm(slots2, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(big[0] == doctest::Approx(0.6f));
  CHECK(big[1] == doctest::Approx(0.8f));
  CHECK(std::hypot(big[0], big[1]) <= 1.0 + 1e-6);
}

TEST_CASE("adam first step follows the bias-corrected closed form") {
  AdamState opt;
  std::vector<float> param = {1.0f};
  std::vector<float> grad = {1.0f};
  std::vector<GradSlot> slots = {{"p", param.data(), grad.data(), 1}};
  const double lr = 0.01;
  opt.step_dense(slots, lr);
  // m_hat = v_hat = 1 at step 1, update = -lr / (1 + eps)
  CHECK(param[0] == doctest::Approx(1.0 - lr / (1.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  AdamState opt;
  std::vector<float> param = {2.5f};
  std::vector<float> grad = {0.0f};
  std::vector<GradSlot> slots = {{"p", param.data(), grad.data(), 1}};
  opt.step_dense(slots, 0.01);
  opt.advance_step();
  opt.step_dense(slots, 0.01);
  CHECK(param[0] == 2.5f);
}

TEST_CASE("adam rejects non-finite gradients naming the tensor") {
  AdamState opt;
  std::vector<float> param = {1.0f};
  std::vector<float> grad = {std::nanf("")};
  std::vector<GradSlot> slots = {{"bad_tensor", param.data(), grad.data(), 1}};
  CHECK_THROWS_WITH_AS(opt.step_dense(slots, 0.01), doctest::Contains("bad_tensor"),
                       std::runtime_error);
}

TEST_CASE("training with zero steps keeps the checkpoint at initialization") {
  Fixture f;
  f.cfg.total_steps = 0;
  EmbeddingTable before = f.table;
  EncoderParams before_params = f.params;
  AdamState opt;
  train_loop(f.items, f.table, f.params, opt, f.cfg, "");
  CHECK(f.table.vectors().values == before.vectors().values);
  std::vector<Tensor*> ta = f.params.tensors(), tb = before_params.tensors();
  bool same = true;
  for (size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->values != tb[i]->values) same = false;
  CHECK(same);
}

TEST_CASE("identical seeds give bit-identical training runs") {
  Fixture a(7), b(7);
  AdamState oa, ob;
  a.cfg.total_steps = 12;
  b.cfg.total_steps = 12;
  TrainResult ra = train_loop(a.items, a.table, a.params, oa, a.cfg, "");
  TrainResult rb = train_loop(b.items, b.table, b.params, ob, b.cfg, "");
  CHECK(ra.final_loss == rb.final_loss);
  CHECK(a.table.vectors().values == b.table.vectors().values);
  std::vector<Tensor*> ta = a.params.tensors(), tb = b.params.tensors();
  bool same = true;
  for (size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->values != tb[i]->values) same = false;
  CHECK(same);
}

TEST_CASE("multi-threaded batch preparation matches single-threaded") {
  Fixture a(9), b(9);
  a.cfg.total_steps = 8;
  b.cfg.total_steps = 8;
  b.cfg.threads = 2;
  AdamState oa, ob;
  train_loop(a.items, a.table, a.params, oa, a.cfg, "");
  train_loop(b.items, b.table, b.params, ob, b.cfg, "");
  CHECK(a.table.vectors().values == b.table.vectors().values);
}

TEST_CASE("training reduces loss on a fixed evaluation batch") {
  Fixture f(3, 16, 8);
  f.cfg.total_steps = 120;
  f.cfg.max_lr = 2e-3;
  AdamState opt;
  const double loss_before = evaluate_loss(f.items, f.table, f.params, f.cfg);
  train_loop(f.items, f.table, f.params, opt, f.cfg, "");
  const double loss_after = evaluate_loss(f.items, f.table, f.params, f.cfg);
  CHECK(loss_after < loss_before);
}

TEST_CASE("frozen table stays bit-identical while the encoder moves") {
  Fixture f(5);
  f.cfg.total_steps = 6;
  f.cfg.freeze_table = true;
  EmbeddingTable before = f.table;
  Tensor proj_before = f.params.proj_w;
  AdamState opt;
  train_loop(f.items, f.table, f.params, opt, f.cfg, "");
  CHECK(f.table.vectors().values == before.vectors().values);
  CHECK(f.params.proj_w.values != proj_before.values);
}

TEST_CASE("frozen encoder stays put while the table moves") {
  Fixture f(6);
  f.cfg.total_steps = 6;
  f.cfg.freeze_encoder = true;
  Tensor proj_before = f.params.proj_w;
  EmbeddingTable before = f.table;
  AdamState opt;
  train_loop(f.items, f.table, f.params, opt, f.cfg, "");
  CHECK(f.params.proj_w.values == proj_before.values);
  CHECK(f.table.vectors().values != before.vectors().values);
}

TEST_CASE("unknown corpus entity fails before step zero") {
  Fixture f;
  MentionRecord r;
  r.token_ids = {7, 8, 9};
  r.mention_begin = 1;
  r.mention_end = 2;
  r.entity_id = "GHOST";
  CHECK_THROWS_WITH_AS(items_from_records({r}, f.table), doctest::Contains("GHOST"),
                       std::runtime_error);
}

TEST_CASE("checkpoints round trip through the container format") {
  Fixture f(11);
  f.cfg.total_steps = 5;
  Checkpoint ckpt;
  ckpt.vocab = f.vocab;
  ckpt.table = f.table;
  ckpt.params = f.params;
  train_loop(f.items, ckpt.table, ckpt.params, ckpt.opt, f.cfg, "");
  ckpt.step = 5;

  const std::string prefix =
      (std::filesystem::temp_directory_path() / "relic_trainer_ckpt").string();
  save_checkpoint(ckpt, prefix);
  Checkpoint back = load_checkpoint(prefix);
  CHECK(back.step == 5);
  CHECK(back.table.ids() == ckpt.table.ids());
  CHECK(back.table.vectors().values == ckpt.table.vectors().values);
  CHECK(back.vocab.tokens() == ckpt.vocab.tokens());
  std::vector<Tensor*> ta = ckpt.params.tensors(), tb = back.params.tensors();
  for (size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->values == tb[i]->values);
  // optimizer moments survive
  CHECK(back.opt.moments().size() == ckpt.opt.moments().size());
  CHECK(back.opt.sparse().at("entity_table").size() ==
        ckpt.opt.sparse().at("entity_table").size());

  // a second save of the loaded checkpoint is byte-identical
  const std::string prefix2 = prefix + "_2";
  save_checkpoint(back, prefix2);
  CHECK(read_file(prefix + ".rlck") == read_file(prefix2 + ".rlck"));
  CHECK(read_file(prefix + ".relc") == read_file(prefix2 + ".relc"));
  for (const char* ext : {".rlck", ".relc", ".meta.json"}) {
    std::filesystem::remove(prefix + ext);
    std::filesystem::remove(prefix2 + ext);
  }
}

TEST_CASE("config files parse with overrides and reject unknown keys") {
  auto path = (std::filesystem::temp_directory_path() / "relic_cfg_test.cfg").string();
  write_file(path,
             "# training config\nbatch_size = 16\nmax_lr = 0.002\nmetric = dot\n"
             "freeze_table = true\n");
  TrainConfig cfg = parse_train_config(path);
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.max_lr == doctest::Approx(0.002));
  CHECK(cfg.metric == Metric::kDot);
  CHECK(cfg.freeze_table);

  write_file(path, "no_such_key = 5\n");
  CHECK_THROWS_WITH_AS(parse_train_config(path), doctest::Contains("unknown key"),
                       std::runtime_error);
  std::filesystem::remove(path);
}
