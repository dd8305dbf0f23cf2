#include "relic/entity_table.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "relic/io_util.hpp"

namespace relic {

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Tensor vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
  if (int(ids_.size()) != vectors_.rows())
    throw std::invalid_argument("embedding table: id count does not match rows");
  for (int i = 0; i < size(); ++i) {
    if (ids_[size_t(i)].empty()) throw std::invalid_argument("embedding table: empty id");
    if (!index_.emplace(ids_[size_t(i)], i).second)
      throw std::invalid_argument("embedding table: duplicate id '" + ids_[size_t(i)] + "'");
  }
}

EmbeddingTable EmbeddingTable::init(const std::vector<std::string>& ids, int d,
                                    RngState& rng, double init_std) {
  if (ids.empty()) throw std::invalid_argument("embedding table: no ids");
  Tensor vectors = init_trunc_normal<float>({int(ids.size()), d}, init_std, rng);
  return EmbeddingTable(ids, std::move(vectors));
}

int EmbeddingTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

int EmbeddingTable::require(const std::string& id) const {
  int i = index_of(id);
  if (i < 0) throw std::runtime_error("embedding table: unknown entity id '" + id + "'");
  return i;
}

void EmbeddingTable::set_row(int i, const float* v) {
  std::copy_n(v, dim(), vectors_.data() + size_t(i) * dim());
  ++version_;
}

void EmbeddingTable::add_to_row(int i, const float* delta) {
  float* row = vectors_.data() + size_t(i) * dim();
  for (int j = 0; j < dim(); ++j) row[j] += delta[j];
  ++version_;
}

std::vector<int> CandidateSet::resolve(const EmbeddingTable& table, size_t* missing) const {
  std::vector<int> rows;
  size_t absent = 0;
  for (const auto& id : ids) {
    int i = table.index_of(id);
    if (i < 0)
      ++absent;
    else
      rows.push_back(i);
  }
  std::sort(rows.begin(), rows.end());
  if (missing) *missing = absent;
  return rows;
}

RankedList nn_search(const EmbeddingTable& table, const float* query, int k, Metric metric,
                     const std::vector<int>* candidate_rows) {
  if (k < 1) throw std::invalid_argument("nn_search: k must be >= 1");
  const int d = table.dim();
  const double qn = row_norm(query, d);
  if (metric == Metric::kCosine && qn == 0.0)
    throw std::runtime_error("nn_search: zero-norm query with cosine metric");

  struct Hit {
    double score;
    int row;
  };
  std::vector<Hit> hits;
  auto scan = [&](int row) {
    double s = row_dot(query, table.row(row), d);
    if (metric == Metric::kCosine) {
      const double rn = row_norm(table.row(row), d);
      s = rn == 0.0 ? -1e300 : s / (qn * rn);
    }
    hits.push_back({s, row});
  };
  if (candidate_rows) {
    for (int row : *candidate_rows) scan(row);
  } else {
    for (int row = 0; row < table.size(); ++row) scan(row);
  }

  auto better = [&](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return table.id_of(a.row) < table.id_of(b.row);
  };
  const size_t take = std::min<size_t>(size_t(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + take, hits.end(), better);
  RankedList out;
  out.items.reserve(take);
  for (size_t i = 0; i < take; ++i)
    out.items.emplace_back(table.id_of(hits[i].row), float(hits[i].score));
  return out;
}

RankedList nn_search(const EmbeddingTable& table, const Tensor& query, int k, Metric metric,
                     const CandidateSet* candidates, size_t* missing) {
  if (int(query.numel()) != table.dim())
    shape_error("nn_search", query.shape_str() + " vs table dim " +
                                  std::to_string(table.dim()));
  if (!candidates) return nn_search(table, query.data(), k, metric, nullptr);
  std::vector<int> rows = candidates->resolve(table, missing);
  if (rows.empty()) return {};
  return nn_search(table, query.data(), k, metric, &rows);
}

Tensor centroid(const EmbeddingTable& table, const std::vector<std::string>& exemplar_ids,
                bool normalize) {
  if (exemplar_ids.empty()) throw std::invalid_argument("centroid: no exemplars");
  const int d = table.dim();
  std::vector<double> acc(size_t(d), 0.0);
  for (const auto& id : exemplar_ids) {
    int row = table.index_of(id);
    if (row < 0) throw std::runtime_error("centroid: missing id '" + id + "'");
    const float* v = table.row(row);
    double scale = 1.0;
    if (normalize) {
      const double n = row_norm(v, d);
      if (n == 0.0) throw std::runtime_error("centroid: zero-norm exemplar '" + id + "'");
      scale = 1.0 / n;
    }
    for (int j = 0; j < d; ++j) acc[size_t(j)] += v[j] * scale;
  }
  Tensor out({d});
  for (int j = 0; j < d; ++j) out.values[size_t(j)] = float(acc[size_t(j)] / double(exemplar_ids.size()));
  return out;
}

static constexpr char kTableMagic[4] = {'R', 'E', 'L', 'C'};
static constexpr uint32_t kTableVersion = 1;

void save_table(const EmbeddingTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kTableMagic, 4);
  write_u32(os, kTableVersion);
  write_u32(os, uint32_t(table.dim()));
  write_u64(os, uint64_t(table.size()));
  for (const auto& id : table.ids()) {
    if (id.size() > 0xffff) throw std::runtime_error("save_table: id too long");
    write_u16(os, uint16_t(id.size()));
    os.write(id.data(), std::streamsize(id.size()));
  }
  for (float v : table.vectors().values) write_f32(os, v);
  if (!os) throw std::runtime_error("write failed: " + path);
}

EmbeddingTable load_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4)) truncated("table magic");
  if (std::memcmp(magic, kTableMagic, 4) != 0)
    throw std::runtime_error(path + ": bad magic, not a RELC table");
  uint32_t version = read_u32(is, "table version");
  if (version != kTableVersion)
    throw std::runtime_error(path + ": unsupported table version " + std::to_string(version));
  const int d = int(read_u32(is, "table dim"));
  const uint64_t n = read_u64(is, "table size");
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    uint16_t len = read_u16(is, "id length");
    id.assign(len, '\0');
    if (len && !is.read(id.data(), len)) truncated("id bytes");
  }
  Tensor vectors({int(n), d});
  for (auto& v : vectors.values) v = read_f32(is, "table payload");
  return EmbeddingTable(std::move(ids), std::move(vectors));
}

}  // namespace relic
