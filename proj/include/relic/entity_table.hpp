#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "relic/objective.hpp"
#include "relic/tensor.hpp"

namespace relic {

// Ordered (entity id, score) pairs, scores non-increasing; ties by id.
struct RankedList {
  std::vector<std::pair<std::string, float>> items;
};

struct CandidateSet {
  std::unordered_set<std::string> ids;

  // Table row indices for the ids present; absent ids are counted.
  std::vector<int> resolve(const class EmbeddingTable& table, size_t* missing) const;
};

// The entity embedding table: one context-independent vector per entity id.
// Vectors stay unnormalized in storage; cosine normalization happens at query
// time. Mutations bump a version counter used to detect stale ANN indexes.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, Tensor vectors);

  static EmbeddingTable init(const std::vector<std::string>& ids, int d, RngState& rng,
                             double init_std = 0.02);

  int size() const { return int(ids_.size()); }
  int dim() const { return vectors_.cols(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id_of(int row) const { return ids_[size_t(row)]; }
  const Tensor& vectors() const { return vectors_; }

  int index_of(const std::string& id) const;  // -1 when absent
  int require(const std::string& id) const;   // throws when absent

  const float* row(int i) const { return vectors_.data() + size_t(i) * dim(); }
  void set_row(int i, const float* v);
  void add_to_row(int i, const float* delta);

  uint64_t version() const { return version_; }

  std::vector<int64_t>& frequencies() { return frequencies_; }
  const std::vector<int64_t>& frequencies() const { return frequencies_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
  Tensor vectors_;
  std::vector<int64_t> frequencies_;
  uint64_t version_ = 0;
};

// Exact top-k by cosine or dot product, restricted to `candidates` when given.
// Deterministic: ordered by (score desc, id asc).
RankedList nn_search(const EmbeddingTable& table, const float* query, int k, Metric metric,
                     const std::vector<int>* candidate_rows = nullptr);
RankedList nn_search(const EmbeddingTable& table, const Tensor& query, int k, Metric metric,
                     const CandidateSet* candidates = nullptr, size_t* missing = nullptr);

// Arithmetic mean of exemplar rows; rows are L2-normalized first when
// `normalize` is set (exemplar norms vary with frequency and would otherwise
// dominate the mean).
Tensor centroid(const EmbeddingTable& table, const std::vector<std::string>& exemplar_ids,
                bool normalize = true);

// "RELC" binary table file: magic, u32 version=1, u32 d, u64 N, per id
// u16 length + UTF-8 bytes, then N*d little-endian f32. Round trips bit-exact.
void save_table(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_table(const std::string& path);

}  // namespace relic
