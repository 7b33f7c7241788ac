#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nes/contingency.hpp"
#include "nes/corpus.hpp"
#include "nes/spherical_mixture.hpp"

namespace nes {

/// S: swapped, F: must stay fixed, C: must change (suppressed), U: unconstrained.
enum class Role { S, F, C, U };

Role parse_role(const std::string& name);
std::string to_string(Role role);

struct SwapConstraints {
  bool cross_document = true;
  bool same_cluster = true;
};

struct Release {
  std::size_t swap_count = 0;
  std::map<std::string, Role> roles;
  SwapConstraints constraints;
  std::uint64_t seed = 0;

  std::vector<std::string> with_role(Role role) const;
};

/// Throws ValidationError if roles miss a corpus category, name an unknown
/// one, or no category is swapped while swap_count > 0.
void check_release(const Release& release, const Corpus& corpus);

nlohmann::json release_to_json(const Release& release);
Release release_from_json(const nlohmann::json& doc);

using ChunkPair = std::pair<std::string, std::string>;

struct SwapRecord {
  std::size_t step = 0;  // 1-based index of the swap within its run
  std::string chunk_a;
  std::string chunk_b;
  std::string category;
  // (entity taken from a, entity taken from b), paired by position.
  std::vector<std::pair<std::string, std::string>> substitutions;
  std::vector<std::string> leftovers_a;
  std::vector<std::string> leftovers_b;
};

nlohmann::json record_to_json(const SwapRecord& record);

struct SwapState {
  Corpus corpus;
  ContingencyTable table;
  std::vector<SwapRecord> records;
  std::set<std::string> swapped_chunk_ids;
  std::size_t swaps = 0;
};

SwapState initial_state(const Corpus& corpus, const ContingencyTable& table);

/// One sequential run. `state` is the state after the last completed swap;
/// the state after any prefix can be rebuilt with replay().
struct SwapTrajectory {
  SwapState state;
  std::vector<ChunkPair> pairs;  // in the order applied
  bool exhausted = false;         // ran out of valid pairs before swap_count
};

/// Unordered valid pairs (first id precedes second in corpus order). Category
/// values are those of `table.categories`; memberships are indexed like
/// corpus.chunks.
std::vector<ChunkPair> valid_pairs(const Corpus& corpus, const ContingencyTable& table, const Memberships& memberships,
                                   const Release& release);

/// Exchanges the S-category entities of the pair by position, in both entity
/// lists and texts, and moves both chunks to their new cells.
SwapState apply_swap(SwapState state, const ChunkPair& pair, const std::vector<std::string>& s_categories);
void apply_swap_in_place(SwapState& state, const ChunkPair& pair, const std::vector<std::string>& s_categories);

SwapTrajectory sequential_swap(const Corpus& corpus, const ContingencyTable& table, const Memberships& memberships,
                               const Release& release);

/// State after the first `prefix` swaps of a trajectory.
SwapState replay(const Corpus& corpus, const ContingencyTable& table, const std::vector<ChunkPair>& pairs,
                 std::size_t prefix, const std::vector<std::string>& s_categories);

/// Replaces every entity of `category` by `placeholder` in the texts, empties
/// those entity lists and marks the affected chunks (embeddings become stale).
Corpus suppress_category(const Corpus& corpus, const std::string& category, const std::string& placeholder);

} // namespace nes
