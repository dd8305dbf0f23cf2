#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relic/rng.hpp"
#include "relic/vocab.hpp"

namespace relic {

// One encoder input: [CLS]-prefixed token ids with an optional single
// [E_s]...[E_e] marker pair around the mention. QA-mode contexts carry no
// marker pair at all.
struct Context {
  std::vector<int> token_ids;
  std::optional<std::pair<int, int>> mention_span;  // positions of [E_s] and [E_e]

  int length() const { return int(token_ids.size()); }
};

// Throws when a Context violates its invariants.
void validate_context(const Context& ctx);

struct Example {
  Context context;
  std::string entity_id;
};

// A tokenized corpus record before masking/windowing decisions are made.
struct MentionRecord {
  std::vector<int> token_ids;
  int mention_begin = 0;  // token range, half-open
  int mention_end = 0;
  std::string entity_id;
  std::string mention_text;  // lowercased surface form, for alias lookup
  std::string doc_id;
};

struct ContextOptions {
  double mask_rate = 0.0;
  int max_len = 64;
  bool mask_per_token = false;  // escape hatch: one [MASK] per mention token
};

// `window` consecutive tokens with `center` as close to the middle as the
// sequence boundaries allow; whole sequence when shorter than `window`.
std::vector<int> window_context(const std::vector<int>& token_ids, int center, int window);

// Builds a training context: maybe-masked mention wrapped in markers, [CLS]
// prepended, windowed around the mention when over max_len.
// Returns nullopt when the example must be rejected (bad span or a mention
// that cannot fit inside max_len with its markers).
std::optional<Context> make_context(const std::vector<int>& sentence_ids,
                                    std::pair<int, int> mention, const ContextOptions& opt,
                                    RngState& rng);

// Entity-linking context: [CLS] + first 64 document tokens + the 64-token
// window around the mention with the mention wrapped in markers (never
// masked). Overlap between prefix and window is emitted once.
std::optional<Context> make_linking_context(const std::vector<int>& doc_tokens,
                                            std::pair<int, int> mention,
                                            int prefix_len = 64, int window = 64);

// Budget form: [CLS] plus an even prefix/window split of (budget - 1) tokens.
// The default budget 129 gives the 64 + 64 construction; smaller encoders pass
// their max_len so the context always fits.
std::optional<Context> make_linking_context_budget(const std::vector<int>& doc_tokens,
                                                   std::pair<int, int> mention,
                                                   int budget = 129);

struct LoadedCorpus {
  std::vector<MentionRecord> records;
  size_t skipped = 0;  // unmappable mention spans
};

// Reads corpus JSONL ({"text", "mention_span":[b,e], "entity_id", "doc_id"?}),
// tokenizes, and maps character spans to token ranges. Records whose span maps
// to no token are counted and skipped. Malformed lines raise with the line
// number.
LoadedCorpus load_corpus(const std::string& path, const Vocab& vocab);

// One pass over records applying masking + windowing; the unit of training
// data. Records that make_context rejects are counted in *rejected.
std::vector<Example> materialize_examples(const std::vector<MentionRecord>& records,
                                          const ContextOptions& opt, RngState& rng,
                                          size_t* rejected = nullptr);

// load_corpus followed by one materialization pass, deterministic given seed.
std::vector<Example> ingest_corpus(const std::string& path, const Vocab& vocab,
                                   double mask_rate, int max_len, uint64_t seed,
                                   size_t* skipped = nullptr);

}  // namespace relic
