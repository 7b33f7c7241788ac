#include "nes/contingency.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

CategoryValue encode_value(std::vector<std::string> entities) {
  if (entities.empty()) return std::nullopt;
  std::sort(entities.begin(), entities.end());
  return text::join(entities, " & ");
}

CategoryValue category_value(const Corpus& corpus, const Chunk& chunk, const std::string& category) {
  if (chunk.suppressed.contains(category)) {
    auto it = corpus.suppressed.find(category);
    return it != corpus.suppressed.end() ? it->second : fmt::format("[{}]", category);
  }
  return encode_value(chunk.entities_of(category));
}

CellKey cell_key(const Corpus& corpus, const Chunk& chunk, const std::vector<std::string>& categories) {
  CellKey key;
  key.values.reserve(categories.size());
  for (const auto& cat : categories) key.values.push_back(category_value(corpus, chunk, cat));
  return key;
}

const CellKey& ContingencyTable::key_of(const std::string& chunk_id) const {
  for (const auto& [key, cell] : cells)
    if (std::find(cell.chunk_ids.begin(), cell.chunk_ids.end(), chunk_id) != cell.chunk_ids.end()) return key;
  throw std::out_of_range(fmt::format("chunk '{}' is not in the table", chunk_id));
}

void ContingencyTable::move_chunk(const std::string& chunk_id, const CellKey& to) {
  const CellKey from = key_of(chunk_id);
  if (from == to) return;
  auto& src = cells.at(from);
  src.chunk_ids.erase(std::find(src.chunk_ids.begin(), src.chunk_ids.end(), chunk_id));
  if (--src.count == 0) cells.erase(from);
  auto& dst = cells[to];
  dst.chunk_ids.push_back(chunk_id);
  ++dst.count;
}

ContingencyTable build_table(const Corpus& corpus) { return build_table(corpus, corpus.categories); }

ContingencyTable build_table(const Corpus& corpus, const std::vector<std::string>& categories) {
  ContingencyTable t;
  t.categories = categories;
  for (const auto& chunk : corpus.chunks) {
    auto& cell = t.cells[cell_key(corpus, chunk, categories)];
    ++cell.count;
    cell.chunk_ids.push_back(chunk.id);
    ++t.n;
  }
  return t;
}

ContingencyTable marginalize(const ContingencyTable& table, const std::vector<std::string>& keep) {
  if (keep.empty()) throw std::invalid_argument("marginalize: J must be non-empty");
  std::vector<std::size_t> idx;
  ContingencyTable out;
  for (std::size_t i = 0; i < table.categories.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), table.categories[i]) != keep.end()) {
      idx.push_back(i);
      out.categories.push_back(table.categories[i]);
    }
  }
  for (const auto& cat : keep)
    if (std::find(table.categories.begin(), table.categories.end(), cat) == table.categories.end())
      throw std::invalid_argument(fmt::format("marginalize: '{}' is not a table category", cat));

  for (const auto& [key, cell] : table.cells) {
    CellKey sub;
    sub.values.reserve(idx.size());
    for (auto i : idx) sub.values.push_back(key.values[i]);
    auto& dst = out.cells[sub];
    dst.count += cell.count;
    dst.chunk_ids.insert(dst.chunk_ids.end(), cell.chunk_ids.begin(), cell.chunk_ids.end());
  }
  out.n = table.n;
  return out;
}

FrequencyCounts frequency_counts(const ContingencyTable& table) {
  FrequencyCounts fc;
  for (const auto& [key, cell] : table.cells) {
    if (cell.count == 0) continue;
    ++fc.s[cell.count];
    ++fc.k;
    fc.n += cell.count;
  }
  return fc;
}

FrequencyCounts make_frequency_counts(const std::map<std::size_t, std::size_t>& s) {
  FrequencyCounts fc;
  for (const auto& [j, sj] : s) {
    if (j == 0) throw std::invalid_argument("frequency counts are indexed from j = 1");
    if (sj == 0) continue;
    fc.s[j] = sj;
    fc.k += sj;
    fc.n += j * sj;
  }
  return fc;
}

std::set<std::string> sample_uniques(const ContingencyTable& table) {
  std::set<std::string> out;
  for (const auto& [key, cell] : table.cells)
    if (cell.count == 1) out.insert(cell.chunk_ids.front());
  return out;
}

json table_to_json(const ContingencyTable& table) {
  json cells = json::array();
  for (const auto& [key, cell] : table.cells) {
    json values = json::array();
    for (const auto& v : key.values) values.push_back(v ? json(*v) : json(nullptr));
    cells.push_back({{"key", values}, {"count", cell.count}, {"chunk_ids", cell.chunk_ids}});
  }
  return {{"categories", table.categories}, {"n", table.n}, {"cells", cells}};
}

std::string frequency_counts_csv(const FrequencyCounts& counts) {
  std::ostringstream os;
  os << "j,s_j\n";
  for (const auto& [j, sj] : counts.s) os << j << ',' << sj << '\n';
  return os.str();
}

} // namespace nes
