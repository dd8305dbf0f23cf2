#include "relic/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace relic {

void validate_context(const Context& ctx) {
  if (ctx.token_ids.empty() || ctx.token_ids[0] != kCls)
    throw std::runtime_error("context: first token must be [CLS]");
  int n_start = 0, n_end = 0, pos_start = -1, pos_end = -1;
  for (int i = 0; i < ctx.length(); ++i) {
    if (ctx.token_ids[i] == kMentionStart) ++n_start, pos_start = i;
    if (ctx.token_ids[i] == kMentionEnd) ++n_end, pos_end = i;
  }
  if (!ctx.mention_span) {
    if (n_start || n_end) throw std::runtime_error("context: markers present in QA mode");
    return;
  }
  auto [k, j] = *ctx.mention_span;
  if (n_start != 1 || n_end != 1)
    throw std::runtime_error("context: expected exactly one marker pair");
  if (pos_start != k || pos_end != j)
    throw std::runtime_error("context: mention_span does not match marker positions");
  if (j - k <= 1) throw std::runtime_error("context: empty mention between markers");
}

std::vector<int> window_context(const std::vector<int>& token_ids, int center, int window) {
  const int n = int(token_ids.size());
  if (window < 3) throw std::invalid_argument("window_context: window must be >= 3");
  if (center < 0 || center >= n)
    throw std::invalid_argument("window_context: center outside sequence");
  if (n <= window) return token_ids;
  int left = center - window / 2;
  left = std::clamp(left, 0, n - window);
  return std::vector<int>(token_ids.begin() + left, token_ids.begin() + left + window);
}

// Window over `body` that keeps the whole [span_begin, span_end] range inside,
// as centered as the edges allow.
static std::vector<int> window_keeping_span(const std::vector<int>& body, int span_begin,
                                            int span_end, int window, int* out_shift) {
  const int n = int(body.size());
  *out_shift = 0;
  if (n <= window) return body;
  int center = (span_begin + span_end) / 2;
  int left = center - window / 2;
  // the span must fit: span_end - span_begin + 1 <= window holds by caller contract
  left = std::clamp(left, span_end - window + 1, span_begin);
  left = std::clamp(left, 0, n - window);
  *out_shift = left;
  return std::vector<int>(body.begin() + left, body.begin() + left + window);
}

std::optional<Context> make_context(const std::vector<int>& sentence_ids,
                                    std::pair<int, int> mention, const ContextOptions& opt,
                                    RngState& rng) {
  const int n = int(sentence_ids.size());
  auto [mb, me] = mention;
  if (mb < 0 || me > n || mb >= me) return std::nullopt;  // empty or out of bounds
  if (!(opt.mask_rate >= 0.0 && opt.mask_rate <= 1.0))
    throw std::invalid_argument("make_context: mask_rate outside [0, 1]");
  if (opt.max_len < 4) throw std::invalid_argument("make_context: max_len too small");

  const bool mask = rng.uniform() < opt.mask_rate;
  std::vector<int> mention_tokens;
  if (mask) {
    if (opt.mask_per_token)
      mention_tokens.assign(size_t(me - mb), kMask);
    else
      mention_tokens.assign(1, kMask);
  } else {
    mention_tokens.assign(sentence_ids.begin() + mb, sentence_ids.begin() + me);
  }

  // marker pair + mention must fit beside [CLS]
  if (int(mention_tokens.size()) + 2 > opt.max_len - 1) return std::nullopt;

  std::vector<int> body;
  body.reserve(size_t(n) + 2);
  body.insert(body.end(), sentence_ids.begin(), sentence_ids.begin() + mb);
  const int marker_start = int(body.size());
  body.push_back(kMentionStart);
  body.insert(body.end(), mention_tokens.begin(), mention_tokens.end());
  body.push_back(kMentionEnd);
  const int marker_end = int(body.size()) - 1;
  body.insert(body.end(), sentence_ids.begin() + me, sentence_ids.end());

  int shift = 0;
  if (int(body.size()) + 1 > opt.max_len)
    body = window_keeping_span(body, marker_start, marker_end, opt.max_len - 1, &shift);

  Context ctx;
  ctx.token_ids.reserve(body.size() + 1);
  ctx.token_ids.push_back(kCls);
  ctx.token_ids.insert(ctx.token_ids.end(), body.begin(), body.end());
  ctx.mention_span = {marker_start - shift + 1, marker_end - shift + 1};
  validate_context(ctx);
  return ctx;
}

std::optional<Context> make_linking_context(const std::vector<int>& doc_tokens,
                                            std::pair<int, int> mention, int prefix_len,
                                            int window) {
  const int n = int(doc_tokens.size());
  auto [mb, me] = mention;
  if (mb < 0 || me > n || mb >= me) return std::nullopt;

  // window around the mention; widen for mentions longer than the window
  const int w = std::max(window, me - mb);
  int win_begin = 0, win_end = n;
  if (n > w) {
    int center = (mb + me - 1) / 2;
    int left = std::clamp(center - w / 2, me - w, mb);
    left = std::clamp(left, 0, n - w);
    win_begin = left;
    win_end = left + w;
  }

  const int pfx_end = std::min(prefix_len, n);

  Context ctx;
  ctx.token_ids.push_back(kCls);
  auto emit = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      if (i == mb) {
        ctx.mention_span = {ctx.length(), 0};
        ctx.token_ids.push_back(kMentionStart);
      }
      ctx.token_ids.push_back(doc_tokens[size_t(i)]);
      if (i + 1 == me) {
        ctx.mention_span->second = ctx.length();
        ctx.token_ids.push_back(kMentionEnd);
      }
    }
  };

  if (win_begin <= pfx_end) {
    // prefix and mention window overlap or touch: emit the merged range once
    emit(0, std::max(pfx_end, win_end));
  } else {
    emit(0, pfx_end);
    emit(win_begin, win_end);
  }
  validate_context(ctx);
  return ctx;
}

std::optional<Context> make_linking_context_budget(const std::vector<int>& doc_tokens,
                                                   std::pair<int, int> mention, int budget) {
  if (budget < 7) throw std::invalid_argument("make_linking_context: budget too small");
  const int prefix = (budget - 1) / 2;
  return make_linking_context(doc_tokens, mention, prefix, budget - 1 - prefix);
}

LoadedCorpus load_corpus(const std::string& path, const Vocab& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open corpus " + path);
  LoadedCorpus out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      const std::string text = rec.at("text").get<std::string>();
      const auto span = rec.at("mention_span");
      const size_t char_begin = span.at(0).get<size_t>();
      const size_t char_end = span.at(1).get<size_t>();
      MentionRecord r;
      r.entity_id = rec.at("entity_id").get<std::string>();
      if (r.entity_id.empty()) throw std::runtime_error("empty entity_id");
      if (rec.contains("doc_id")) r.doc_id = rec["doc_id"].get<std::string>();

      auto spans = split_with_spans(text);
      r.token_ids.reserve(spans.size());
      int tok_begin = -1, tok_end = -1;
      for (int i = 0; i < int(spans.size()); ++i) {
        r.token_ids.push_back(vocab.lookup(spans[size_t(i)].token));
        const bool overlaps =
            spans[size_t(i)].begin < char_end && spans[size_t(i)].end > char_begin;
        if (overlaps) {
          if (tok_begin < 0) tok_begin = i;
          tok_end = i + 1;
        }
      }
      if (tok_begin < 0 || char_begin >= char_end || char_end > text.size()) {
        ++out.skipped;
        continue;
      }
      r.mention_begin = tok_begin;
      r.mention_end = tok_end;
      for (int i = tok_begin; i < tok_end; ++i) {
        if (i > tok_begin) r.mention_text += ' ';
        r.mention_text += spans[size_t(i)].token;
      }
      out.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed record: " + e.what());
    }
  }
  return out;
}

std::vector<Example> materialize_examples(const std::vector<MentionRecord>& records,
                                          const ContextOptions& opt, RngState& rng,
                                          size_t* rejected) {
  std::vector<Example> out;
  out.reserve(records.size());
  size_t n_rejected = 0;
  for (const auto& r : records) {
    auto ctx = make_context(r.token_ids, {r.mention_begin, r.mention_end}, opt, rng);
    if (!ctx) {
      ++n_rejected;
      continue;
    }
    out.push_back({std::move(*ctx), r.entity_id});
  }
  if (rejected) *rejected = n_rejected;
  return out;
}

std::vector<Example> ingest_corpus(const std::string& path, const Vocab& vocab,
                                   double mask_rate, int max_len, uint64_t seed,
                                   size_t* skipped) {
  LoadedCorpus corpus = load_corpus(path, vocab);
  RngState rng(seed);
  size_t rejected = 0;
  auto examples =
      materialize_examples(corpus.records, {mask_rate, max_len, false}, rng, &rejected);
  if (skipped) *skipped = corpus.skipped + rejected;
  return examples;
}

}  // namespace relic
