#include "relic/ann.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace relic {

AnnIndex::AnnIndex(const EmbeddingTable& table, const AnnConfig& config)
    : table_(&table), config_(config), built_version_(table.version()) {
  const int n = table.size(), d = table.dim();
  exhaustive_ = config.force_exhaustive || n <= config.exhaustive_threshold;

  unit_rows_.resize(size_t(n) * d);
  for (int i = 0; i < n; ++i) {
    const float* row = table.row(i);
    double norm = row_norm(row, d);
    if (norm == 0.0) norm = 1.0;
    for (int j = 0; j < d; ++j) unit_rows_[size_t(i) * d + j] = float(row[j] / norm);
  }
  if (exhaustive_) return;

  RngState rng(config.seed);
  roots_.reserve(size_t(config_.n_trees));
  for (int t = 0; t < config_.n_trees; ++t) {
    std::vector<int> items(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) items[size_t(i)] = i;
    roots_.push_back(build_node(items, 0, n, rng, 0));
  }
}

int AnnIndex::build_node(std::vector<int>& items, int begin, int end, RngState& rng,
                         int depth) {
  const int d = table_->dim();
  const int node_id = int(nodes_.size());
  nodes_.emplace_back();

  if (end - begin <= config_.leaf_size || depth > 48) {
    Node& node = nodes_[size_t(node_id)];
    node.begin = int(items_.size());
    items_.insert(items_.end(), items.begin() + begin, items.begin() + end);
    node.end = int(items_.size());
    return node_id;
  }

  // hyperplane between two random members, splitting at the midpoint
  std::vector<float> normal(static_cast<size_t>(d));
  float threshold = 0;
  bool ok = false;
  for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
    const int a = items[size_t(begin) + rng.below(uint64_t(end - begin))];
    const int b = items[size_t(begin) + rng.below(uint64_t(end - begin))];
    if (a == b) continue;
    const float* xa = unit_rows_.data() + size_t(a) * d;
    const float* xb = unit_rows_.data() + size_t(b) * d;
    double nn = 0;
    for (int j = 0; j < d; ++j) {
      normal[size_t(j)] = xa[j] - xb[j];
      nn += double(normal[size_t(j)]) * normal[size_t(j)];
    }
    if (nn < 1e-12) continue;
    double dot_mid = 0;
    for (int j = 0; j < d; ++j)
      dot_mid += double(normal[size_t(j)]) * 0.5 * (xa[j] + xb[j]);
    threshold = float(dot_mid);
    ok = true;
  }
  if (!ok) {  // degenerate set: keep as a leaf
    Node& node = nodes_[size_t(node_id)];
    node.begin = int(items_.size());
    items_.insert(items_.end(), items.begin() + begin, items.begin() + end);
    node.end = int(items_.size());
    return node_id;
  }

  auto side = [&](int row) {
    const float* x = unit_rows_.data() + size_t(row) * d;
    double s = 0;
    for (int j = 0; j < d; ++j) s += double(normal[size_t(j)]) * x[j];
    return s < threshold;
  };
  auto mid_it = std::stable_partition(items.begin() + begin, items.begin() + end, side);
  int mid = int(mid_it - items.begin());
  if (mid == begin || mid == end) mid = (begin + end) / 2;  // refuse empty children

  const int left = build_node(items, begin, mid, rng, depth + 1);
  const int right = build_node(items, mid, end, rng, depth + 1);
  Node& node = nodes_[size_t(node_id)];
  node.normal = std::move(normal);
  node.threshold = threshold;
  node.left = left;
  node.right = right;
  return node_id;
}

void AnnIndex::check_fresh() const {
  if (table_->version() != built_version_)
    throw std::runtime_error("ann index: stale, table mutated after build");
}

RankedList AnnIndex::search(const float* query, int k) const {
  check_fresh();
  if (k < 1) throw std::invalid_argument("ann search: k must be >= 1");
  const int n = table_->size(), d = table_->dim();

  const double qn = row_norm(query, d);
  if (qn == 0.0) throw std::runtime_error("ann search: zero-norm query");
  std::vector<float> q(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) q[size_t(j)] = float(query[j] / qn);

  if (exhaustive_) return nn_search(*table_, query, k, Metric::kCosine);

  std::vector<int> candidates;
  {
    // best-first over all trees: explore the side of each hyperplane the
    // query falls on, backtracking through the smallest margins first
    using Entry = std::pair<double, int>;  // (-margin, node)
    std::priority_queue<Entry> frontier;
    for (int root : roots_) frontier.push({1e30, root});
    std::vector<uint8_t> seen(size_t(n), 0);
    int budget_cfg = config_.search_budget;
    if (budget_cfg <= 0) budget_cfg = std::max({2000, 64 * k, n / 5});
    const size_t budget = size_t(std::max(budget_cfg, k));
    while (!frontier.empty() && candidates.size() < budget) {
      auto [priority, node_id] = frontier.top();
      frontier.pop();
      const Node& node = nodes_[size_t(node_id)];
      if (node.left < 0) {
        for (int it = node.begin; it < node.end; ++it) {
          const int row = items_[size_t(it)];
          if (!seen[size_t(row)]) {
            seen[size_t(row)] = 1;
            candidates.push_back(row);
          }
        }
        continue;
      }
      double s = 0;
      for (int j = 0; j < d; ++j) s += double(node.normal[size_t(j)]) * q[size_t(j)];
      const double margin = std::fabs(s - node.threshold);
      const int near = s < node.threshold ? node.left : node.right;
      const int far = s < node.threshold ? node.right : node.left;
      frontier.push({std::min(priority, margin), near});
      frontier.push({std::min(priority, -margin), far});
    }
  }

  struct Hit {
    double score;
    int row;
  };
  std::vector<Hit> hits;
  hits.reserve(candidates.size());
  for (int row : candidates) {
    const float* x = unit_rows_.data() + size_t(row) * d;
    hits.push_back({row_dot(q.data(), x, d), row});
  }
  auto better = [&](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return table_->id_of(a.row) < table_->id_of(b.row);
  };
  const size_t take = std::min<size_t>(size_t(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + take, hits.end(), better);
  RankedList out;
  out.items.reserve(take);
  for (size_t i = 0; i < take; ++i)
    out.items.emplace_back(table_->id_of(hits[i].row), float(hits[i].score));
  return out;
}

RankedList AnnIndex::search(const Tensor& query, int k) const {
  if (int(query.numel()) != table_->dim())
    shape_error("ann search", query.shape_str() + " vs table dim " +
                                  std::to_string(table_->dim()));
  return search(query.data(), k);
}

}  // namespace relic
