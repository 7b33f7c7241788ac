#include "nes/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <unordered_set>

#include <fmt/format.h>

#include "nes/error.hpp"
#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

const std::vector<std::string>& Chunk::entities_of(const std::string& category) const {
  static const std::vector<std::string> none;
  auto it = entities.find(category);
  return it == entities.end() ? none : it->second;
}

std::size_t Corpus::m() const {
  std::set<std::string_view> docs;
  for (const auto& c : chunks) docs.insert(c.doc_id);
  return docs.size();
}

std::size_t Corpus::index_of(const std::string& chunk_id) const {
  for (std::size_t i = 0; i < chunks.size(); ++i)
    if (chunks[i].id == chunk_id) return i;
  throw ValidationError(fmt::format("unknown chunk id '{}'", chunk_id));
}

bool Corpus::has_category(const std::string& category) const {
  return std::find(categories.begin(), categories.end(), category) != categories.end();
}

namespace {

std::string record_name(std::size_t index, const json& rec) {
  if (rec.is_object() && rec.contains("id") && rec["id"].is_string())
    return fmt::format("chunk #{} ('{}')", index, rec["id"].get<std::string>());
  return fmt::format("chunk #{}", index);
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(fmt::format("{}: missing field '{}'", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: field '{}' has the wrong type ({})", where, key, e.what()));
  }
}

double l2norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

} // namespace

Corpus corpus_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("ingest document must be a JSON object");
  Corpus corpus;
  const auto d = require<long long>(doc, "d", "ingest document");
  if (d < 1) throw ParseError("ingest document: 'd' must be positive");
  corpus.d = static_cast<std::size_t>(d);
  corpus.categories = require<std::vector<std::string>>(doc, "categories", "ingest document");
  if (doc.contains("suppressed"))
    corpus.suppressed = require<std::map<std::string, std::string>>(doc, "suppressed", "ingest document");

  if (!doc.contains("chunks") || !doc["chunks"].is_array())
    throw ParseError("ingest document: 'chunks' must be an array");
  const auto& arr = doc["chunks"];
  corpus.chunks.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& rec = arr[i];
    const auto where = record_name(i, rec);
    if (!rec.is_object()) throw ParseError(where + ": record must be an object");
    Chunk c;
    c.id = require<std::string>(rec, "id", where);
    c.doc_id = require<std::string>(rec, "doc_id", where);
    c.text = require<std::string>(rec, "text", where);
    if (rec.contains("entities")) {
      const auto& ents = rec["entities"];
      if (!ents.is_object()) throw ParseError(where + ": 'entities' must be an object");
      for (const auto& [cat, list] : ents.items()) {
        if (!corpus.has_category(cat))
          throw ParseError(fmt::format("{}: entity category '{}' is not declared", where, cat));
        if (!list.is_array()) throw ParseError(fmt::format("{}: entities['{}'] must be an array", where, cat));
        auto& out = c.entities[cat];
        for (const auto& e : list) {
          if (!e.is_string()) throw ParseError(fmt::format("{}: entities['{}'] holds a non-string", where, cat));
          out.push_back(e.get<std::string>());
        }
      }
    }
    if (rec.contains("embedding") && !rec["embedding"].is_null())
      c.embedding = require<std::vector<double>>(rec, "embedding", where);
    if (rec.contains("suppressed"))
      for (auto& s : require<std::vector<std::string>>(rec, "suppressed", where)) c.suppressed.insert(s);
    corpus.chunks.push_back(std::move(c));
  }
  validate(corpus);
  return corpus;
}

json corpus_to_json(const Corpus& corpus) {
  json chunks = json::array();
  for (const auto& c : corpus.chunks) {
    json ents = json::object();
    for (const auto& cat : corpus.categories) {
      auto it = c.entities.find(cat);
      ents[cat] = it == c.entities.end() ? json::array() : json(it->second);
    }
    json rec = {{"id", c.id}, {"doc_id", c.doc_id}, {"text", c.text}, {"entities", ents}};
    if (c.has_embedding()) rec["embedding"] = c.embedding;
    if (!c.suppressed.empty()) rec["suppressed"] = c.suppressed;
    chunks.push_back(std::move(rec));
  }
  json out = {{"d", corpus.d}, {"categories", corpus.categories}, {"chunks", std::move(chunks)}};
  if (!corpus.suppressed.empty()) out["suppressed"] = corpus.suppressed;
  return out;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return corpus_from_json(doc);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot write '{}'", path.string()));
  out << corpus_to_json(corpus).dump(1) << '\n';
}

void validate(const Corpus& corpus) {
  std::unordered_set<std::string_view> ids;
  for (std::size_t i = 0; i < corpus.chunks.size(); ++i) {
    const auto& c = corpus.chunks[i];
    const auto where = fmt::format("chunk #{} ('{}')", i, c.id);
    if (c.id.empty()) throw ValidationError(where + ": empty id");
    if (!ids.insert(c.id).second) throw ValidationError(where + ": duplicate chunk id");
    if (c.doc_id.empty()) throw ValidationError(where + ": empty doc_id");
    for (const auto& [cat, list] : c.entities) {
      if (!corpus.has_category(cat))
        throw ValidationError(fmt::format("{}: undeclared category '{}'", where, cat));
      for (const auto& e : list) {
        if (e.empty()) throw ValidationError(fmt::format("{}: empty entity in '{}'", where, cat));
        if (c.text.find(e) == std::string::npos)
          throw ValidationError(fmt::format("{}: entity '{}' ({}) does not occur in text", where, e, cat));
      }
    }
    for (const auto& cat : c.suppressed)
      if (!corpus.has_category(cat))
        throw ValidationError(fmt::format("{}: suppressed category '{}' is not declared", where, cat));
    if (c.has_embedding()) {
      if (c.embedding.size() != corpus.d)
        throw ValidationError(fmt::format("{}: embedding has dimension {}, expected {}", where,
                                          c.embedding.size(), corpus.d));
      const double norm = l2norm(c.embedding);
      if (!(std::abs(norm - 1.0) <= kUnitNormTolerance))
        throw ValidationError(fmt::format("{}: embedding norm {} is not 1", where, norm));
    }
  }
  for (const auto& [cat, placeholder] : corpus.suppressed) {
    if (!corpus.has_category(cat))
      throw ValidationError(fmt::format("suppressed category '{}' is not declared", cat));
    if (placeholder.empty()) throw ValidationError(fmt::format("empty placeholder for '{}'", cat));
  }
}

namespace {

void check_rule(const SuppressionRule& r) {
  if (r.pattern.empty()) throw ValidationError("suppression rule with empty pattern");
  const auto& ph = r.placeholder;
  if (ph.size() < 3 || ph.front() != '[' || ph.back() != ']')
    throw ValidationError(fmt::format("placeholder '{}' must be non-empty and bracketed", ph));
}

// Applies the regex rules to the parts of `s` that are not placeholders.
std::string apply_regex_rules(const std::string& s, const std::vector<const SuppressionRule*>& rules,
                              const std::vector<std::string>& placeholders, std::size_t& count) {
  std::string cur = s;
  for (const auto* rule : rules) {
    auto flags = std::regex::ECMAScript;
    if (rule->case_insensitive) flags |= std::regex::icase;
    const std::regex re(rule->pattern, flags);
    std::string out;
    std::size_t pos = 0;
    while (pos < cur.size()) {
      // Find the next protected placeholder and process the segment before it.
      std::size_t next = std::string::npos;
      std::size_t len = 0;
      for (const auto& ph : placeholders) {
        auto f = cur.find(ph, pos);
        if (f < next || (f == next && f != std::string::npos && ph.size() > len)) {
          next = f;
          len = ph.size();
        }
      }
      const auto seg_end = next == std::string::npos ? cur.size() : next;
      const std::string seg = cur.substr(pos, seg_end - pos);
      count += static_cast<std::size_t>(
          std::distance(std::sregex_iterator(seg.begin(), seg.end(), re), std::sregex_iterator()));
      out += std::regex_replace(seg, re, rule->placeholder);
      if (next == std::string::npos) break;
      out += cur.substr(next, len);
      pos = next + len;
    }
    cur = std::move(out);
  }
  return cur;
}

} // namespace

SuppressionResult suppress_direct_identifiers(const Corpus& corpus,
                                              const std::vector<SuppressionRule>& rules) {
  if (rules.empty()) throw std::invalid_argument("suppress_direct_identifiers: no rules given");
  for (const auto& r : rules) check_rule(r);

  std::vector<std::string> placeholders;
  std::vector<text::Substitution> exact, folded;
  std::vector<const SuppressionRule*> regexes;
  for (const auto& r : rules) {
    placeholders.push_back(r.placeholder);
    if (r.regex)
      regexes.push_back(&r);
    else
      (r.case_insensitive ? folded : exact).push_back({r.pattern, r.placeholder});
  }

  auto rewrite = [&](const std::string& s, std::size_t& count) {
    std::string out = text::substitute(s, exact, false, placeholders, &count);
    if (!folded.empty()) out = text::substitute(out, folded, true, placeholders, &count);
    if (!regexes.empty()) out = apply_regex_rules(out, regexes, placeholders, count);
    return out;
  };

  SuppressionResult result{corpus, 0};
  for (auto& c : result.corpus.chunks) {
    auto rewritten_text = rewrite(c.text, result.replacements);
    if (rewritten_text != c.text) result.changed.push_back(c.id);
    c.text = std::move(rewritten_text);
    for (auto& [cat, list] : c.entities) {
      std::vector<std::string> kept;
      for (const auto& e : list) {
        std::size_t ignored = 0;
        auto rewritten = rewrite(e, ignored);
        const bool fully_suppressed =
            std::find(placeholders.begin(), placeholders.end(), rewritten) != placeholders.end();
        if (!fully_suppressed) kept.push_back(std::move(rewritten));
      }
      list = std::move(kept);
    }
  }
  return result;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sequence");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<std::vector<std::size_t>> semantic_chunk(const std::vector<Sentence>& sentences,
                                                     double threshold) {
  if (sentences.empty()) throw std::invalid_argument("semantic_chunk: no sentences");
  if (!(threshold >= 0.0 && threshold <= 100.0))
    throw std::invalid_argument("semantic_chunk: threshold must be in [0, 100]");
  const auto d = sentences.front().embedding.size();
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& e = sentences[i].embedding;
    if (e.size() != d)
      throw ValidationError(fmt::format("sentence {}: embedding dimension {} differs from {}", i, e.size(), d));
    if (!(std::abs(l2norm(e) - 1.0) <= kUnitNormTolerance))
      throw ValidationError(fmt::format("sentence {}: embedding is not unit norm", i));
  }

  std::vector<std::vector<std::size_t>> chunks{{0}};
  if (sentences.size() == 1) return chunks;

  std::vector<double> dist(sentences.size() - 1);
  for (std::size_t i = 0; i + 1 < sentences.size(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += sentences[i].embedding[j] * sentences[i + 1].embedding[j];
    dist[i] = 1.0 - dot;
  }
  const double cut = percentile(dist, threshold);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > cut) chunks.emplace_back();
    chunks.back().push_back(i + 1);
  }
  return chunks;
}

} // namespace nes
