#include "nes/swap_engine.hpp"

#include <algorithm>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "nes/error.hpp"
#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

Role parse_role(const std::string& name) {
  const auto r = text::to_upper(text::trim(name));
  if (r == "S") return Role::S;
  if (r == "F") return Role::F;
  if (r == "C") return Role::C;
  if (r == "U") return Role::U;
  throw ValidationError(fmt::format("unknown role '{}' (expected S, F, C or U)", name));
}

std::string to_string(Role role) {
  switch (role) {
    case Role::S: return "S";
    case Role::F: return "F";
    case Role::C: return "C";
    case Role::U: return "U";
  }
  return "?";
}

std::vector<std::string> Release::with_role(Role role) const {
  std::vector<std::string> out;
  for (const auto& [cat, r] : roles)
    if (r == role) out.push_back(cat);
  return out;
}

void check_release(const Release& release, const Corpus& corpus) {
  for (const auto& cat : corpus.categories)
    if (!release.roles.contains(cat)) throw ValidationError(fmt::format("release has no role for '{}'", cat));
  for (const auto& [cat, role] : release.roles)
    if (!corpus.has_category(cat)) throw ValidationError(fmt::format("release names unknown category '{}'", cat));
  if (release.swap_count > 0 && release.with_role(Role::S).empty())
    throw ValidationError("a release with swaps needs at least one S category");
  if (!release.constraints.cross_document) throw ValidationError("swaps must cross documents");
}

json release_to_json(const Release& r) {
  json roles = json::object();
  for (const auto& [cat, role] : r.roles) roles[cat] = to_string(role);
  return {{"swap_count", r.swap_count},
          {"roles", roles},
          {"constraints", {{"cross_document", r.constraints.cross_document},
                           {"same_cluster", r.constraints.same_cluster}}},
          {"seed", r.seed}};
}

Release release_from_json(const json& doc) {
  try {
    Release r;
    r.swap_count = doc.at("swap_count").get<std::size_t>();
    for (const auto& [cat, role] : doc.at("roles").items()) r.roles[cat] = parse_role(role.get<std::string>());
    if (doc.contains("constraints")) {
      const auto& c = doc["constraints"];
      r.constraints.cross_document = c.value("cross_document", true);
      r.constraints.same_cluster = c.value("same_cluster", true);
    }
    r.seed = doc.value("seed", std::uint64_t{0});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed release JSON: {}", e.what()));
  }
}

json record_to_json(const SwapRecord& r) {
  json subs = json::array();
  for (const auto& [a, b] : r.substitutions) subs.push_back({a, b});
  return {{"step", r.step},         {"chunk_a", r.chunk_a},          {"chunk_b", r.chunk_b},
          {"category", r.category}, {"substitutions", subs},         {"leftovers_a", r.leftovers_a},
          {"leftovers_b", r.leftovers_b}};
}

SwapState initial_state(const Corpus& corpus, const ContingencyTable& table) {
  SwapState s;
  s.corpus = corpus;
  s.table = table;
  return s;
}

namespace {

// Per-chunk integer codes of the table's category values; 0 stands for "no entity".
struct Interned {
  std::vector<std::vector<int>> codes;
  std::vector<std::size_t> s_cols;
  std::vector<std::size_t> other_cols;
};

Interned intern(const Corpus& corpus, const ContingencyTable& table, const Release& release) {
  Interned in;
  const auto& cats = table.categories;
  std::vector<std::map<std::string, int>> dict(cats.size());
  in.codes.resize(corpus.n(), std::vector<int>(cats.size(), 0));
  for (std::size_t i = 0; i < corpus.n(); ++i) {
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto v = category_value(corpus, corpus.chunks[i], cats[c]);
      if (v) in.codes[i][c] = dict[c].try_emplace(*v, static_cast<int>(dict[c].size()) + 1).first->second;
    }
  }
  for (std::size_t c = 0; c < cats.size(); ++c) {
    auto it = release.roles.find(cats[c]);
    if (it != release.roles.end() && it->second == Role::S)
      in.s_cols.push_back(c);
    else
      in.other_cols.push_back(c);
  }
  return in;
}

std::vector<std::pair<std::size_t, std::size_t>> valid_index_pairs(const Corpus& corpus, const ContingencyTable& table,
                                                                   const Memberships& l, const Release& release) {
  if (l.size() != corpus.n())
    throw std::invalid_argument(fmt::format("{} memberships for {} chunks", l.size(), corpus.n()));
  for (const auto& [cat, role] : release.roles)
    if (role == Role::S && std::find(table.categories.begin(), table.categories.end(), cat) == table.categories.end())
      throw std::invalid_argument(fmt::format("swapped category '{}' is not a table category", cat));
  const auto in = intern(corpus, table, release);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.n(); ++i) {
    const auto& c = in.codes[i];
    if (std::any_of(in.s_cols.begin(), in.s_cols.end(), [&](std::size_t k) { return c[k] != 0; }))
      eligible.push_back(i);
  }
  auto differs = [&](std::size_t i, std::size_t j, const std::vector<std::size_t>& cols) {
    return std::any_of(cols.begin(), cols.end(), [&](std::size_t k) { return in.codes[i][k] != in.codes[j][k]; });
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < eligible.size(); ++a) {
    const auto i = eligible[a];
    for (std::size_t b = a + 1; b < eligible.size(); ++b) {
      const auto j = eligible[b];
      if (corpus.chunks[i].doc_id == corpus.chunks[j].doc_id) continue;
      if (release.constraints.same_cluster && l[i] != l[j]) continue;
      if (!differs(i, j, in.other_cols) || !differs(i, j, in.s_cols)) continue;
      out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<std::string> placeholders(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const auto& [cat, ph] : corpus.suppressed) out.push_back(ph);
  return out;
}

void require_in_text(const Chunk& c, const std::string& entity) {
  if (c.text.find(entity) == std::string::npos)
    throw IntegrityError(fmt::format("entity '{}' does not occur in the text of chunk '{}'", entity, c.id));
}

} // namespace

std::vector<ChunkPair> valid_pairs(const Corpus& corpus, const ContingencyTable& table, const Memberships& memberships,
                                   const Release& release) {
  std::vector<ChunkPair> out;
  for (auto [i, j] : valid_index_pairs(corpus, table, memberships, release))
    out.emplace_back(corpus.chunks[i].id, corpus.chunks[j].id);
  return out;
}

void apply_swap_in_place(SwapState& state, const ChunkPair& pair, const std::vector<std::string>& s_categories) {
  if (pair.first == pair.second) throw std::invalid_argument("a chunk cannot be swapped with itself");
  auto& a = state.corpus.chunks[state.corpus.index_of(pair.first)];
  auto& b = state.corpus.chunks[state.corpus.index_of(pair.second)];
  const std::size_t step = state.swaps + 1;

  std::vector<text::Substitution> subs_a, subs_b;
  std::vector<SwapRecord> records;
  for (const auto& cat : s_categories) {
    auto& ea = a.entities[cat];
    auto& eb = b.entities[cat];
    for (const auto& e : ea) require_in_text(a, e);
    for (const auto& e : eb) require_in_text(b, e);
    SwapRecord rec{step, a.id, b.id, cat, {}, {}, {}};
    const std::size_t m = std::min(ea.size(), eb.size());
    for (std::size_t i = 0; i < m; ++i) {
      rec.substitutions.emplace_back(ea[i], eb[i]);
      subs_a.push_back({ea[i], eb[i]});
      subs_b.push_back({eb[i], ea[i]});
      std::swap(ea[i], eb[i]);
    }
    rec.leftovers_a.assign(ea.begin() + static_cast<std::ptrdiff_t>(m), ea.end());
    rec.leftovers_b.assign(eb.begin() + static_cast<std::ptrdiff_t>(m), eb.end());
    if (ea.empty()) a.entities.erase(cat);
    if (eb.empty()) b.entities.erase(cat);
    records.push_back(std::move(rec));
  }
  const auto guard = placeholders(state.corpus);
  a.text = text::substitute(a.text, subs_a, false, guard);
  b.text = text::substitute(b.text, subs_b, false, guard);
  a.embedding.clear();
  b.embedding.clear();

  state.table.move_chunk(a.id, cell_key(state.corpus, a, state.table.categories));
  state.table.move_chunk(b.id, cell_key(state.corpus, b, state.table.categories));
  state.swapped_chunk_ids.insert(a.id);
  state.swapped_chunk_ids.insert(b.id);
  for (auto& r : records) state.records.push_back(std::move(r));
  state.swaps = step;
}

SwapState apply_swap(SwapState state, const ChunkPair& pair, const std::vector<std::string>& s_categories) {
  apply_swap_in_place(state, pair, s_categories);
  return state;
}

SwapTrajectory sequential_swap(const Corpus& corpus, const ContingencyTable& table, const Memberships& memberships,
                               const Release& release) {
  check_release(release, corpus);
  SwapTrajectory traj;
  traj.state = initial_state(corpus, table);
  if (release.swap_count == 0) return traj;

  const auto s_categories = release.with_role(Role::S);
  auto pool = valid_index_pairs(corpus, table, memberships, release);
  std::mt19937_64 rng(release.seed);
  std::vector<char> used(corpus.n(), 0);
  while (traj.pairs.size() < release.swap_count) {
    // Swapping leaves every other chunk's values untouched, so the pool only
    // loses the pairs that involve already swapped chunks.
    std::erase_if(pool, [&](const auto& p) { return used[p.first] || used[p.second]; });
    if (pool.empty()) {
      traj.exhausted = true;
      break;
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const auto [i, j] = pool[pick(rng)];
    ChunkPair pair{corpus.chunks[i].id, corpus.chunks[j].id};
    apply_swap_in_place(traj.state, pair, s_categories);
    traj.pairs.push_back(std::move(pair));
    used[i] = used[j] = 1;
  }
  return traj;
}

SwapState replay(const Corpus& corpus, const ContingencyTable& table, const std::vector<ChunkPair>& pairs,
                 std::size_t prefix, const std::vector<std::string>& s_categories) {
  auto state = initial_state(corpus, table);
  for (std::size_t i = 0; i < std::min(prefix, pairs.size()); ++i) apply_swap_in_place(state, pairs[i], s_categories);
  return state;
}

Corpus suppress_category(const Corpus& corpus, const std::string& category, const std::string& placeholder) {
  if (!corpus.has_category(category)) throw ValidationError(fmt::format("unknown category '{}'", category));
  if (placeholder.size() < 3 || placeholder.front() != '[' || placeholder.back() != ']')
    throw ValidationError(fmt::format("placeholder '{}' must be non-empty and bracketed", placeholder));
  Corpus out = corpus;
  auto guard = placeholders(corpus);
  guard.push_back(placeholder);
  bool touched = false;
  for (auto& c : out.chunks) {
    auto it = c.entities.find(category);
    if (it == c.entities.end() || it->second.empty()) continue;
    std::vector<text::Substitution> subs;
    for (const auto& e : it->second) subs.push_back({e, placeholder});
    c.text = text::substitute(c.text, subs, false, guard);
    c.entities.erase(it);
    c.suppressed.insert(category);
    c.embedding.clear();
    touched = true;
  }
  if (touched) out.suppressed[category] = placeholder;
  return out;
}

} // namespace nes
