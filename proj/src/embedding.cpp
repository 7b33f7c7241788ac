#include "nes/embedding.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "httplib.h"
#include "json.hpp"
#include "nes/error.hpp"
#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

ProviderKind parse_provider_kind(const std::string& name) {
  if (name == "stub" || name == "deterministic_stub") return ProviderKind::DeterministicStub;
  if (name == "cache" || name == "file_cache") return ProviderKind::FileCache;
  if (name == "http" || name == "http_endpoint") return ProviderKind::HttpEndpoint;
  throw ValidationError(fmt::format("unknown embedding provider '{}'", name));
}

CacheMissError::CacheMissError(std::vector<std::string> missing)
    : std::runtime_error(fmt::format("embedding cache miss for {} chunk(s): {}", missing.size(),
                                     text::join(missing, ", "))),
      missing_(std::move(missing)) {}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in (0, 1] from the counter-th output of the stream keyed by `key`.
double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  const auto bits = splitmix64(key ^ splitmix64(counter)) >> 11;
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

void check_config(const ProviderConfig& config) {
  if (config.d < 2) throw ValidationError("embedding dimension must be at least 2");
  if (config.max_batch == 0) throw ValidationError("embedding batch size must be positive");
}

std::vector<std::vector<double>> embed_from_cache(const std::vector<EmbeddingRequest>& requests,
                                                  const ProviderConfig& config) {
  const auto cache = load_embedding_cache(config.cache_path);
  std::vector<std::vector<double>> out;
  std::vector<std::string> missing;
  out.reserve(requests.size());
  for (const auto& r : requests) {
    auto it = cache.find(text::content_hash(r.text));
    if (it == cache.end()) {
      missing.push_back(r.chunk_id);
      continue;
    }
    out.push_back(it->second);
  }
  if (!missing.empty()) throw CacheMissError(std::move(missing));
  return out;
}

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError(fmt::format("endpoint '{}' lacks a scheme", url));
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::vector<std::vector<double>> post_batch(httplib::Client& client, const std::string& path,
                                            const std::vector<EmbeddingRequest>& batch,
                                            const ProviderConfig& config) {
  json body = {{"input", json::array()}, {"dim", config.d}};
  for (const auto& r : batch) body["input"].push_back(r.text);

  httplib::Headers headers;
  if (const char* token = std::getenv(config.token_env.c_str()); token && *token)
    headers.emplace("Authorization", fmt::format("Bearer {}", token));

  std::string last_error;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status == 200) {
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw TransportError(fmt::format("endpoint returned invalid JSON: {}", e.what()));
      }
      if (!reply.contains("embeddings") || !reply["embeddings"].is_array())
        throw TransportError("endpoint reply lacks an 'embeddings' array");
      auto vecs = reply["embeddings"].get<std::vector<std::vector<double>>>();
      if (vecs.size() != batch.size())
        throw TransportError(fmt::format("endpoint returned {} vectors for {} texts", vecs.size(), batch.size()));
      return vecs;
    } else if (res->status >= 400 && res->status < 500) {
      throw TransportError(fmt::format("endpoint rejected request with status {}", res->status));
    } else {
      last_error = fmt::format("status {}", res->status);
    }
    spdlog::warn("embedding request failed ({}), attempt {}/{}", last_error, attempt + 1, config.max_retries + 1);
  }
  throw TransportError(fmt::format("embedding endpoint failed after {} attempts: {}", config.max_retries + 1,
                                   last_error));
}

std::vector<std::vector<double>> embed_over_http(const std::vector<EmbeddingRequest>& requests,
                                                 const ProviderConfig& config) {
  const auto ep = split_endpoint(config.endpoint);
  httplib::Client client(ep.base);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  std::vector<std::vector<double>> out;
  out.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += config.max_batch) {
    const auto end = std::min(requests.size(), start + config.max_batch);
    std::vector<EmbeddingRequest> batch(requests.begin() + static_cast<std::ptrdiff_t>(start),
                                        requests.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto& v : post_batch(client, ep.path, batch, config)) out.push_back(std::move(v));
  }
  return out;
}

} // namespace

std::vector<double> stub_embedding(const std::string& text, std::size_t d) {
  const auto key = text::fnv1a64(text);
  std::vector<double> v(d);
  // Box-Muller over consecutive counter pairs.
  for (std::size_t i = 0; i < d; i += 2) {
    const double u1 = counter_uniform(key, i);
    const double u2 = counter_uniform(key, i + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < d) v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  normalize(v);
  return v;
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError("cannot normalize a zero or non-finite vector");
  for (auto& x : v) x /= norm;
}

std::vector<std::vector<double>> embed(const std::vector<EmbeddingRequest>& requests,
                                       const ProviderConfig& config) {
  check_config(config);
  for (const auto& r : requests)
    if (r.text.empty()) throw ValidationError(fmt::format("empty text for chunk '{}'", r.chunk_id));

  std::vector<std::vector<double>> out;
  switch (config.kind) {
  case ProviderKind::DeterministicStub:
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(stub_embedding(r.text, config.d));
    return out;
  case ProviderKind::FileCache:
    out = embed_from_cache(requests, config);
    break;
  case ProviderKind::HttpEndpoint:
    out = embed_over_http(requests, config);
    break;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].size() != config.d)
      throw ValidationError(fmt::format("embedding for chunk '{}' has dimension {}, expected {}",
                                        requests[i].chunk_id, out[i].size(), config.d));
    normalize(out[i]);
  }
  return out;
}

std::unordered_map<std::string, std::vector<double>> load_embedding_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open embedding cache '{}'", path.string()));
  try {
    return json::parse(in).get<std::unordered_map<std::string, std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("embedding cache '{}' is malformed: {}", path.string(), e.what()));
  }
}

void save_embedding_cache(const std::unordered_map<std::string, std::vector<double>>& cache,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot write embedding cache '{}'", path.string()));
  // Sorted keys keep the file byte-stable.
  json doc = json::object();
  std::map<std::string, std::vector<double>> sorted(cache.begin(), cache.end());
  for (const auto& [k, v] : sorted) doc[k] = v;
  out << doc.dump() << '\n';
}

std::vector<std::vector<double>> EmbeddingMemo::embed(const std::vector<EmbeddingRequest>& requests) {
  std::vector<std::vector<double>> out(requests.size());
  std::vector<EmbeddingRequest> misses;
  std::vector<std::size_t> miss_slots;
  std::vector<std::string> hashes(requests.size());
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < requests.size(); ++i) {
      hashes[i] = text::content_hash(requests[i].text);
      if (auto it = memo_.find(hashes[i]); it != memo_.end()) {
        out[i] = it->second;
      } else {
        misses.push_back(requests[i]);
        miss_slots.push_back(i);
      }
    }
  }
  if (misses.empty()) return out;
  auto fresh = nes::embed(misses, config_);
  std::lock_guard lock(mutex_);
  ++calls_;
  for (std::size_t j = 0; j < fresh.size(); ++j) {
    memo_.emplace(hashes[miss_slots[j]], fresh[j]);
    out[miss_slots[j]] = std::move(fresh[j]);
  }
  return out;
}

std::size_t EmbeddingMemo::provider_calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

} // namespace nes
