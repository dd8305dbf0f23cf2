#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "relic/entity_table.hpp"

namespace relic {

// Mean over relevant items of precision at each relevant item's rank.
// Relevant ids must be nonempty and contained in the ranking.
double average_precision(const RankedList& ranking,
                         const std::unordered_set<std::string>& relevant);

struct Category {
  std::string name;
  std::vector<std::string> members;
};

std::vector<Category> load_categories(const std::string& path);

struct CategoryResult {
  std::string name;
  std::vector<std::string> exemplars;  // of the last trial
  double ap = 0;                       // mean over trials
};

struct CategoryCompletionResult {
  std::vector<CategoryResult> categories;
  double map = 0;
  int skipped = 0;        // categories with too few members
  int missing_members = 0;  // member ids absent from the table
};

// Per category and trial: sample n_exemplars members without replacement,
// take the (normalized) centroid, rank all other entities by dot product with
// it, and score AP against the remaining members.
CategoryCompletionResult category_completion(const EmbeddingTable& table,
                                             const std::vector<Category>& categories,
                                             int n_exemplars = 3, uint64_t seed = 1,
                                             int trials = 5, bool normalize_centroid = true);

}  // namespace relic
