#include "relic/synthetic.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "relic/rng.hpp"

namespace relic {

void SyntheticSpec::validate() const {
  if (n_entities < 1 || n_types < 1 || types_per_entity < 1 || contexts_per_entity < 1)
    throw std::invalid_argument("synthetic spec: all counts must be >= 1");
  if (types_per_entity > n_types)
    throw std::invalid_argument("synthetic spec: types_per_entity exceeds n_types");
}

namespace {

std::string entity_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "E%04d", i);
  return buf;
}

std::string type_word(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "kind%02d", t);
  return buf;
}

const char* kFillers[] = {"today",  "yesterday", "quietly", "reportedly",
                          "often",  "rarely",    "proudly", "nearby"};
constexpr int kNumFillers = 8;

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

}  // namespace

SyntheticFiles gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  RngState rng(spec.seed);

  // surface names: globally unique, or shared by groups of ~4
  std::vector<std::string> names(size_t(spec.n_entities));
  const int name_groups = std::max(1, spec.n_entities / 4);
  for (int i = 0; i < spec.n_entities; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "item%04d", spec.name_uniqueness ? i : i % name_groups);
    names[size_t(i)] = buf;
  }

  // latent types per entity
  std::vector<std::vector<int>> types(size_t(spec.n_entities));
  for (auto& ts : types) {
    std::vector<int> pool(size_t(spec.n_types));
    for (int t = 0; t < spec.n_types; ++t) pool[size_t(t)] = t;
    for (int k = 0; k < spec.types_per_entity; ++k) {
      const size_t pick = size_t(k) + size_t(rng.below(uint64_t(spec.n_types - k)));
      std::swap(pool[size_t(k)], pool[pick]);
    }
    ts.assign(pool.begin(), pool.begin() + spec.types_per_entity);
    std::sort(ts.begin(), ts.end());
  }

  SyntheticFiles files;
  files.corpus = out_dir + "/corpus.jsonl";
  files.labels = out_dir + "/labels.jsonl";
  files.categories = out_dir + "/categories.jsonl";
  files.qa = out_dir + "/qa.jsonl";
  files.alias = out_dir + "/alias.jsonl";

  // corpus + QA (questions repeat each entity's first context sentence)
  {
    auto corpus = open_out(files.corpus);
    auto qa = open_out(files.qa);
    for (int i = 0; i < spec.n_entities; ++i) {
      std::string first_sentence;
      for (int c = 0; c < spec.contexts_per_entity; ++c) {
        // two distinct type words when the entity has them, so masked
        // mentions stay identifiable from context alone
        const auto& ts = types[size_t(i)];
        const int t1 = ts[size_t(rng.below(uint64_t(ts.size())))];
        int t2 = t1;
        if (ts.size() > 1)
          while (t2 == t1) t2 = ts[size_t(rng.below(uint64_t(ts.size())))];
        const std::string f1 = kFillers[rng.below(kNumFillers)];
        const std::string f2 = kFillers[rng.below(kNumFillers)];

        std::string text = "the ";
        const size_t mention_begin = text.size();
        text += names[size_t(i)];
        const size_t mention_end = text.size();
        text += " was seen " + f1 + " near the " + type_word(t1);
        if (t2 != t1) text += " and the " + type_word(t2);
        text += " " + f2;

        nlohmann::json rec;
        rec["text"] = text;
        rec["mention_span"] = {mention_begin, mention_end};
        rec["entity_id"] = entity_id(i);
        rec["doc_id"] = entity_id(i) + "_" + std::to_string(c);
        corpus << rec.dump() << "\n";
        if (c == 0) first_sentence = text;
      }
      nlohmann::json q;
      q["question"] = first_sentence;
      q["answer_entity"] = entity_id(i);
      qa << q.dump() << "\n";
    }
  }

  // typing labels
  {
    auto labels = open_out(files.labels);
    for (int i = 0; i < spec.n_entities; ++i) {
      nlohmann::json rec;
      rec["entity_id"] = entity_id(i);
      std::vector<std::string> ts;
      for (int t : types[size_t(i)]) ts.push_back(type_word(t));
      rec["types"] = ts;
      labels << rec.dump() << "\n";
    }
  }

  // categories: one per type, members are the entities carrying it
  {
    auto categories = open_out(files.categories);
    for (int t = 0; t < spec.n_types; ++t) {
      std::vector<std::string> members;
      for (int i = 0; i < spec.n_entities; ++i)
        for (int ti : types[size_t(i)])
          if (ti == t) members.push_back(entity_id(i));
      nlohmann::json rec;
      rec["category"] = type_word(t);
      rec["members"] = members;
      categories << rec.dump() << "\n";
    }
  }

  // alias table: surface name -> entities bearing it
  {
    auto alias = open_out(files.alias);
    std::vector<std::pair<std::string, std::vector<std::string>>> by_name;
    for (int i = 0; i < spec.n_entities; ++i) {
      auto it = std::find_if(by_name.begin(), by_name.end(),
                             [&](const auto& p) { return p.first == names[size_t(i)]; });
      if (it == by_name.end())
        by_name.push_back({names[size_t(i)], {entity_id(i)}});
      else
        it->second.push_back(entity_id(i));
    }
    for (const auto& [name, cands] : by_name) {
      nlohmann::json rec;
      rec["mention"] = name;
      rec["candidates"] = cands;
      alias << rec.dump() << "\n";
    }
  }

  return files;
}

}  // namespace relic
