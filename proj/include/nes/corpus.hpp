#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace nes {

inline constexpr double kUnitNormTolerance = 1e-6;

/// One text unit of a document, with its entity annotations and embedding.
///
/// `entities` maps a category name to the entity surface strings found in
/// `text`, in annotation order. An empty `embedding` means the chunk has no
/// current embedding (never computed, or invalidated by a swap).
struct Chunk {
  std::string id;
  std::string doc_id;
  std::string text;
  std::map<std::string, std::vector<std::string>> entities;
  std::vector<double> embedding;
  // Categories whose entities in this chunk were replaced by the category
  // placeholder (must-change role).
  std::set<std::string> suppressed;

  bool has_embedding() const noexcept { return !embedding.empty(); }
  const std::vector<std::string>& entities_of(const std::string& category) const;
};

struct Corpus {
  std::vector<Chunk> chunks;
  std::vector<std::string> categories;
  std::size_t d = 0;
  // category -> placeholder for categories suppressed corpus-wide.
  std::map<std::string, std::string> suppressed;

  std::size_t n() const noexcept { return chunks.size(); }
  std::size_t m() const;
  std::size_t p() const noexcept { return categories.size(); }
  std::size_t index_of(const std::string& chunk_id) const;
  bool has_category(const std::string& category) const;
};

struct SuppressionRule {
  std::string pattern;
  std::string placeholder;
  bool case_insensitive = false;
  bool regex = false;
};

struct SuppressionResult {
  Corpus corpus;
  std::size_t replacements = 0;
  // Ids of chunks whose text changed; their embeddings describe the old text.
  std::vector<std::string> changed;
};

/// Ordered text with unit-norm sentence embeddings, the input to chunking.
struct Sentence {
  std::string text;
  std::vector<double> embedding;
};

Corpus corpus_from_json(const nlohmann::json& doc);
nlohmann::json corpus_to_json(const Corpus& corpus);

/// Reads and validates an ingest file. Throws ParseError on schema problems
/// and ValidationError on invariant violations.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Checks every corpus and chunk invariant; throws ValidationError on the
/// first violation.
void validate(const Corpus& corpus);

SuppressionResult suppress_direct_identifiers(const Corpus& corpus,
                                              const std::vector<SuppressionRule>& rules);

/// Linear-interpolation percentile (q in [0, 100]) of `values`.
double percentile(std::vector<double> values, double q);

/// Splits sentences into contiguous chunks, breaking after sentence i when the
/// cosine distance to sentence i+1 is strictly above the `threshold`-th
/// percentile of all consecutive distances. Returns sentence indices per chunk.
std::vector<std::vector<std::size_t>> semantic_chunk(const std::vector<Sentence>& sentences,
                                                     double threshold);

} // namespace nes
