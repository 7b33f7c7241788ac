#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nes/corpus.hpp"

namespace nes {

/// A category value: std::nullopt is the "no entity" sentinel, otherwise the
/// alphabetically sorted entities joined with " & ".
using CategoryValue = std::optional<std::string>;

struct CellKey {
  std::vector<CategoryValue> values;

  auto operator<=>(const CellKey&) const = default;
  bool operator==(const CellKey&) const = default;
};

/// Canonical value for one chunk's entity list (sorted, " & "-joined).
CategoryValue encode_value(std::vector<std::string> entities);

/// Value of `category` for `chunk`, honouring corpus-wide suppression.
CategoryValue category_value(const Corpus& corpus, const Chunk& chunk, const std::string& category);

CellKey cell_key(const Corpus& corpus, const Chunk& chunk, const std::vector<std::string>& categories);

struct Cell {
  std::size_t count = 0;
  std::vector<std::string> chunk_ids;
};

/// Sparse multiway table of chunk counts keyed by per-category values.
struct ContingencyTable {
  std::vector<std::string> categories;
  std::map<CellKey, Cell> cells;
  std::size_t n = 0;

  std::size_t p() const noexcept { return categories.size(); }
  /// Key of the cell holding `chunk_id`; throws if absent.
  const CellKey& key_of(const std::string& chunk_id) const;
  /// Moves a chunk from its current cell to `to`, dropping emptied cells.
  void move_chunk(const std::string& chunk_id, const CellKey& to);
};

struct FrequencyCounts {
  std::map<std::size_t, std::size_t> s;  // j -> number of cells with count j
  std::size_t k = 0;
  std::size_t n = 0;

  std::size_t s_of(std::size_t j) const {
    auto it = s.find(j);
    return it == s.end() ? 0 : it->second;
  }
};

ContingencyTable build_table(const Corpus& corpus);
ContingencyTable build_table(const Corpus& corpus, const std::vector<std::string>& categories);

/// Sums out every category not in `keep`. Result categories follow the
/// table's own order. Throws std::invalid_argument for an empty or foreign J.
ContingencyTable marginalize(const ContingencyTable& table, const std::vector<std::string>& keep);

FrequencyCounts frequency_counts(const ContingencyTable& table);

/// Builds counts directly from a map j -> s_j (validates nothing beyond j >= 1).
FrequencyCounts make_frequency_counts(const std::map<std::size_t, std::size_t>& s);

std::set<std::string> sample_uniques(const ContingencyTable& table);

nlohmann::json table_to_json(const ContingencyTable& table);
std::string frequency_counts_csv(const FrequencyCounts& counts);

} // namespace nes
