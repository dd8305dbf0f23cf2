#include "relic/ranking.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "relic/io_util.hpp"

namespace relic {

double average_precision(const RankedList& ranking,
                         const std::unordered_set<std::string>& relevant) {
  if (relevant.empty()) throw std::invalid_argument("average_precision: empty relevant set");
  size_t found = 0;
  double hits = 0, ap = 0;
  for (size_t r = 0; r < ranking.items.size(); ++r) {
    if (relevant.count(ranking.items[r].first)) {
      hits += 1;
      ap += hits / double(r + 1);
      ++found;
    }
  }
  if (found != relevant.size())
    throw std::invalid_argument("average_precision: relevant ids missing from the ranking");
  return ap / double(relevant.size());
}

std::vector<Category> load_categories(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open categories " + path);
  std::vector<Category> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      out.push_back({rec.at("category").get<std::string>(),
                     rec.at("members").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed category record: " + e.what());
    }
  }
  return out;
}

CategoryCompletionResult category_completion(const EmbeddingTable& table,
                                             const std::vector<Category>& categories,
                                             int n_exemplars, uint64_t seed, int trials,
                                             bool normalize_centroid) {
  if (n_exemplars < 1) throw std::invalid_argument("category_completion: n_exemplars >= 1");
  if (trials < 1) throw std::invalid_argument("category_completion: trials >= 1");
  CategoryCompletionResult out;
  RngState rng(seed);
  double ap_sum = 0;
  int scored = 0;
  for (const auto& cat : categories) {
    // members present in the table
    std::vector<std::string> members;
    for (const auto& id : cat.members) {
      if (table.index_of(id) >= 0)
        members.push_back(id);
      else
        ++out.missing_members;
    }
    if (int(members.size()) <= n_exemplars) {
      ++out.skipped;
      log_info("category_completion: skipping '%s' (%zu usable members)", cat.name.c_str(),
               members.size());
      continue;
    }

    CategoryResult result;
    result.name = cat.name;
    double cat_ap = 0;
    for (int trial = 0; trial < trials; ++trial) {
      // exemplars without replacement
      std::vector<std::string> pool = members;
      std::vector<std::string> exemplars;
      for (int k = 0; k < n_exemplars; ++k) {
        const size_t pick = size_t(k) + size_t(rng.below(uint64_t(pool.size() - size_t(k))));
        std::swap(pool[size_t(k)], pool[pick]);
        exemplars.push_back(pool[size_t(k)]);
      }
      Tensor c = centroid(table, exemplars, normalize_centroid);

      std::unordered_set<std::string> exemplar_set(exemplars.begin(), exemplars.end());
      std::unordered_set<std::string> relevant(pool.begin() + n_exemplars, pool.end());

      // rank every non-exemplar entity by dot product with the centroid
      std::vector<int> rows;
      rows.reserve(size_t(table.size()));
      for (int i = 0; i < table.size(); ++i)
        if (!exemplar_set.count(table.id_of(i))) rows.push_back(i);
      RankedList ranking = nn_search(table, c.data(), int(rows.size()), Metric::kDot, &rows);

      cat_ap += average_precision(ranking, relevant);
      result.exemplars = std::move(exemplars);
    }
    result.ap = cat_ap / trials;
    out.categories.push_back(std::move(result));
    ap_sum += out.categories.back().ap;
    ++scored;
  }
  out.map = scored > 0 ? ap_sum / scored : 0.0;
  return out;
}

}  // namespace relic
