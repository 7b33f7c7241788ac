#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "nes/cli.hpp"
#include "nes/error.hpp"
#include "nes/spherical_mixture.hpp"
#include "nes/text.hpp"

namespace nes::cli {

std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw ValidationError(fmt::format("expected Category=Value, got '{}'", item));
    const auto key = text::trim(item.substr(0, eq));
    if (!out.emplace(key, text::trim(item.substr(eq + 1))).second)
      throw ValidationError(fmt::format("'{}' assigned twice", key));
  }
  return out;
}

std::map<std::string, Role> parse_roles(const std::vector<std::string>& items) {
  std::map<std::string, Role> out;
  for (const auto& [cat, role] : parse_assignments(items)) out[cat] = parse_role(role);
  return out;
}

void validate(const RunConfig& c, const std::string& command) {
  if (c.threads == 0) throw ValidationError("threads must be at least 1");
  parse_provider_kind(c.provider);
  if (c.dim == 1) throw ValidationError("embedding dimension must be at least 2");
  if (c.provider == "cache" && c.cache_path.empty()) throw ValidationError("the cache provider needs --cache-path");
  if (c.provider == "http" && c.endpoint.empty()) throw ValidationError("the http provider needs --endpoint");

  if (command == "ingest") {
    if (c.input.empty() == c.sentences.empty()) throw ValidationError("ingest needs exactly one of --in or --sentences");
    if (!(c.threshold >= 0.0 && c.threshold <= 100.0)) throw ValidationError("threshold must lie in [0, 100]");
  }
  if (command == "fit") {
    parse_family(c.family);
    if (c.K == 0) throw ValidationError("K must be at least 1");
    if (!(c.eps >= 0.0) || c.eps * static_cast<double>(c.K) > 1.0) throw ValidationError("eps * K must not exceed 1");
    if (!(c.tol > 0.0)) throw ValidationError("tol must be positive");
    if (c.max_iter == 0) throw ValidationError("max-iter must be at least 1");
  }
  if (command == "sweep") {
    if (c.N.empty()) throw ValidationError("sweep needs at least one population size --N");
    for (double n : c.N)
      if (!(n >= 1.0) || !std::isfinite(n)) throw ValidationError(fmt::format("invalid population size {}", n));
    if (c.s_eligible.size() < c.subset_size || c.subset_size == 0)
      throw ValidationError("subset size must be between 1 and the number of S-eligible categories");
  }
  if (command == "sweep" || command == "select" || command == "swap") {
    for (const auto& [cat, role] : parse_roles(c.roles))
      if (role == Role::S) throw ValidationError(fmt::format("'{}': swapped categories come from the subset", cat));
    const auto ph = parse_assignments(c.placeholders);
    for (const auto& [cat, p] : ph)
      if (p.size() < 3 || p.front() != '[' || p.back() != ']')
        throw ValidationError(fmt::format("placeholder '{}' must be bracketed", p));
  }
  if (command == "select") {
    if (!(c.a > 0.0)) throw ValidationError("trade-off slope a must be positive");
  }
}

ProviderConfig provider_config(const RunConfig& c, std::size_t corpus_d) {
  ProviderConfig p;
  p.kind = parse_provider_kind(c.provider);
  p.d = c.dim != 0 ? c.dim : corpus_d;
  p.cache_path = c.cache_path;
  p.endpoint = c.endpoint;
  if (corpus_d != 0 && p.d != corpus_d)
    throw ValidationError(fmt::format("--dim {} differs from the corpus dimension {}", p.d, corpus_d));
  return p;
}

SweepConfig sweep_config(const RunConfig& c) {
  SweepConfig s;
  s.s_eligible = c.s_eligible;
  s.subset_size = c.subset_size;
  s.max_swaps = c.max_swaps;
  s.N_grid = c.N;
  s.roles = parse_roles(c.roles);
  s.placeholders = parse_assignments(c.placeholders);
  s.same_cluster = c.same_cluster;
  s.seed = c.seed;
  s.threads = c.threads;
  return s;
}

} // namespace nes::cli
