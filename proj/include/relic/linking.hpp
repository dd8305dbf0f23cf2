#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "relic/corpus.hpp"
#include "relic/encoder.hpp"
#include "relic/entity_table.hpp"

namespace relic {

// Mention surface string (lowercased) -> permissible candidate entities.
struct AliasTable {
  std::unordered_map<std::string, std::vector<std::string>> candidates;
};

AliasTable load_alias_table(const std::string& path);

// One entity id per line.
CandidateSet load_candidate_set(const std::string& path);

struct LinkingResult {
  double accuracy = 0;
  int64_t correct = 0;
  int64_t total = 0;
  int64_t unreachable = 0;      // gold ids absent from the table
  int64_t rejected = 0;         // unbuildable linking contexts
  int64_t candidate_missing = 0;  // candidate ids absent from the table
};

// Per gold mention: build the linking context (first 64 document tokens plus
// the 64-token mention window, mention verbatim), encode, restrict candidates
// to the alias entry for the mention string intersected with the candidate
// set when given, take the cosine top-1 and compare to gold.
LinkingResult linking_eval(EncoderParams& params, const EmbeddingTable& table,
                           const std::vector<MentionRecord>& docs,
                           const AliasTable* alias = nullptr,
                           const CandidateSet* candidates = nullptr,
                           int64_t max_mentions = 0);

}  // namespace relic
