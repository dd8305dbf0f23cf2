#include "relic/linking.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "relic/io_util.hpp"

namespace relic {

AliasTable load_alias_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open alias table " + path);
  AliasTable out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      out.candidates[lowercase_ascii(rec.at("mention").get<std::string>())] =
          rec.at("candidates").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed alias record: " + e.what());
    }
  }
  return out;
}

CandidateSet load_candidate_set(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open candidate set " + path);
  CandidateSet out;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.ids.insert(line);
  }
  return out;
}

LinkingResult linking_eval(EncoderParams& params, const EmbeddingTable& table,
                           const std::vector<MentionRecord>& docs, const AliasTable* alias,
                           const CandidateSet* candidates, int64_t max_mentions) {
  LinkingResult result;
  const int budget = std::min(129, params.config.max_len);
  RngState rng(0);

  std::vector<int> base_rows;  // candidate-set restriction shared by all mentions
  if (candidates) {
    size_t missing = 0;
    base_rows = candidates->resolve(table, &missing);
    result.candidate_missing += int64_t(missing);
  }

  for (const auto& doc : docs) {
    if (max_mentions > 0 && result.total + result.rejected >= max_mentions) break;
    auto ctx = make_linking_context_budget(doc.token_ids,
                                           {doc.mention_begin, doc.mention_end}, budget);
    if (!ctx) {
      ++result.rejected;
      continue;
    }
    ++result.total;
    const int gold_row = table.index_of(doc.entity_id);

    // restrict to the alias entry for this mention, intersected with the
    // candidate set when both are present
    std::vector<int> rows = base_rows;
    bool restricted = candidates != nullptr;
    if (alias) {
      auto it = alias->candidates.find(doc.mention_text);
      if (it != alias->candidates.end()) {
        std::vector<int> alias_rows;
        for (const auto& id : it->second) {
          const int row = table.index_of(id);
          if (row < 0) {
            ++result.candidate_missing;
            continue;
          }
          alias_rows.push_back(row);
        }
        std::sort(alias_rows.begin(), alias_rows.end());
        if (restricted) {
          std::vector<int> merged;
          std::set_intersection(rows.begin(), rows.end(), alias_rows.begin(),
                                alias_rows.end(), std::back_inserter(merged));
          rows = std::move(merged);
        } else {
          rows = std::move(alias_rows);
        }
        restricted = true;
      }
    }

    // gold outside the table or the candidate restriction can never be chosen
    const bool reachable =
        gold_row >= 0 &&
        (!restricted || std::binary_search(rows.begin(), rows.end(), gold_row));
    if (!reachable) {
      ++result.unreachable;
      continue;  // stays in the denominator
    }

    Tensor g = encode_context(params, *ctx, /*train=*/false, rng);
    RankedList top = nn_search(table, g.data(), 1, Metric::kCosine,
                               restricted ? &rows : nullptr);
    if (!top.items.empty() && top.items[0].first == doc.entity_id) ++result.correct;
  }
  result.accuracy = result.total > 0 ? double(result.correct) / double(result.total) : 0.0;
  return result;
}

}  // namespace relic
