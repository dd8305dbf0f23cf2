#include "relic/vocab.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace relic {

static const char* kReservedNames[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]",
                                                   "[MASK]", "[E_s]", "[E_e]"};

Vocab::Vocab() {
  for (const char* name : kReservedNames) tokens_.push_back(name);
  for (int i = 0; i < size(); ++i) index_[tokens_[i]] = i;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (int(tokens_.size()) < kNumReserved)
    throw std::invalid_argument("vocab: token list misses reserved tokens");
  for (int i = 0; i < kNumReserved; ++i)
    if (tokens_[i] != kReservedNames[i])
      throw std::invalid_argument("vocab: reserved token " + std::to_string(i) +
                                  " must be " + kReservedNames[i]);
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second)
      throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id out of range");
  return tokens_[size_t(id)];
}

bool Vocab::contains(const std::string& token) const { return index_.count(token) > 0; }

std::string lowercase_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
  return out;
}

static bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::vector<TokenSpan> split_with_spans(const std::string& text) {
  std::vector<TokenSpan> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    size_t begin = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    out.push_back({lowercase_ascii(text.substr(begin, i - begin)), begin, i});
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& texts, int max_size) {
  if (max_size < kNumReserved)
    throw std::invalid_argument("build_vocab: max_size must be >= " +
                                std::to_string(kNumReserved));
  // std::map keeps tokens sorted, which settles frequency ties lexicographically
  std::map<std::string, int64_t> counts;
  for (const auto& text : texts)
    for (const auto& span : split_with_spans(text)) ++counts[span.token];

  std::vector<std::pair<std::string, int64_t>> by_freq(counts.begin(), counts.end());
  std::stable_sort(by_freq.begin(), by_freq.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens;
  for (const char* name : kReservedNames) tokens.push_back(name);
  for (const auto& [token, n] : by_freq) {
    if (int(tokens.size()) >= max_size) break;
    tokens.push_back(token);
  }
  return Vocab(std::move(tokens));
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& span : split_with_spans(text)) ids.push_back(vocab.lookup(span.token));
  return ids;
}

}  // namespace relic
