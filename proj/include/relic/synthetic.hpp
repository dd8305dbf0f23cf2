#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace relic {

// Desk-scale stand-in for a hyperlinked encyclopedia corpus: every entity gets
// a few latent types; each context sentence names the entity (the mention) and
// drops words that reveal only its types. With name_uniqueness set, surface
// names identify entities outright while the remaining context reveals types
// alone, which is what makes mask-rate ablations informative.
struct SyntheticSpec {
  int n_entities = 200;
  int n_types = 24;
  int types_per_entity = 3;
  int contexts_per_entity = 20;
  bool name_uniqueness = true;
  uint64_t seed = 1;

  void validate() const;
};

struct SyntheticFiles {
  std::string corpus;      // corpus JSONL
  std::string labels;      // typing labels JSONL
  std::string categories;  // categories JSONL
  std::string qa;          // QA JSONL (questions repeat context sentences)
  std::string alias;       // alias JSONL
};

// Writes the five evaluation files into out_dir; byte-identical given a seed.
SyntheticFiles gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace relic
