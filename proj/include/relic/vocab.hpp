#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace relic {

// Reserved token ids, fixed in this order.
enum ReservedToken : int {
  kPad = 0,
  kUnk = 1,
  kCls = 2,
  kMask = 3,
  kMentionStart = 4,  // [E_s]
  kMentionEnd = 5,    // [E_e]
};
constexpr int kNumReserved = 6;

class Vocab {
 public:
  Vocab();  // reserved tokens only
  explicit Vocab(std::vector<std::string> tokens);  // full ordered token list

  int lookup(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return int(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Reserved tokens plus the (max_size - 6) most frequent lowercased whitespace
// tokens; frequency ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& texts, int max_size);

// Lowercased whitespace split, [UNK] fallback. Does not prepend [CLS].
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

// Tokens with their byte spans in the original text (ASCII-lowercased match).
struct TokenSpan {
  std::string token;
  size_t begin = 0;
  size_t end = 0;
};
std::vector<TokenSpan> split_with_spans(const std::string& text);

std::string lowercase_ascii(const std::string& s);

}  // namespace relic
