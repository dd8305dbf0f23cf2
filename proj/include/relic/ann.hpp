#pragma once

#include <cstdint>
#include <vector>

#include "relic/entity_table.hpp"

namespace relic {

struct AnnConfig {
  int n_trees = 32;
  int leaf_size = 24;
  int search_budget = 0;          // candidate rows scored per query; 0 = auto
  int exhaustive_threshold = 10000;  // tables at or below this size use exact search
  bool force_exhaustive = false;
  uint64_t seed = 17;
};

// Approximate nearest neighbors in cosine similarity over an embedding table.
// Rows are L2-normalized internally; randomized projection trees route a query
// to nearby leaves and the best candidates are scored exactly. Tables at or
// below the exhaustive threshold fall back to exact search. The index pins the
// table version at build time and refuses to serve a mutated table.
class AnnIndex {
 public:
  AnnIndex(const EmbeddingTable& table, const AnnConfig& config);

  RankedList search(const float* query, int k) const;
  RankedList search(const Tensor& query, int k) const;

  bool exhaustive() const { return exhaustive_; }
  const EmbeddingTable& table() const { return *table_; }

 private:
  struct Node {
    // leaf when begin < end; internal when children are set
    int begin = 0, end = 0;
    int left = -1, right = -1;
    std::vector<float> normal;
    float threshold = 0;
  };

  int build_node(std::vector<int>& items, int begin, int end, RngState& rng, int depth);
  void check_fresh() const;

  const EmbeddingTable* table_;
  AnnConfig config_;
  uint64_t built_version_;
  bool exhaustive_;
  std::vector<float> unit_rows_;  // N x d, normalized
  std::vector<int> items_;        // leaf item pool
  std::vector<Node> nodes_;
  std::vector<int> roots_;
};

}  // namespace relic
