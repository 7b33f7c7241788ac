#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nes {

struct EmbeddingRequest {
  std::string chunk_id;
  std::string text;
};

enum class ProviderKind { FileCache, HttpEndpoint, DeterministicStub };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::DeterministicStub;
  std::string endpoint;               // http only, e.g. "http://localhost:8080/embed"
  std::filesystem::path cache_path;   // file cache only
  std::size_t d = 0;
  std::size_t max_batch = 64;
  int max_retries = 3;
  // Name of the environment variable holding an opaque bearer token.
  std::string token_env = "NES_EMBED_TOKEN";
};

ProviderKind parse_provider_kind(const std::string& name);

/// Thrown when a file-cache lookup misses; `missing()` lists the chunk ids.
class CacheMissError : public std::runtime_error {
public:
  explicit CacheMissError(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const noexcept { return missing_; }

private:
  std::vector<std::string> missing_;
};

/// Content-hash seeded pseudo-random unit vector of dimension d.
std::vector<double> stub_embedding(const std::string& text, std::size_t d);

/// Scales `v` to unit norm in place; throws ValidationError for a zero vector.
void normalize(std::vector<double>& v);

/// One unit vector per request, in request order.
std::vector<std::vector<double>> embed(const std::vector<EmbeddingRequest>& requests,
                                       const ProviderConfig& config);

/// Loads a cache file (JSON map content-hash -> vector).
std::unordered_map<std::string, std::vector<double>> load_embedding_cache(const std::filesystem::path& path);
void save_embedding_cache(const std::unordered_map<std::string, std::vector<double>>& cache,
                          const std::filesystem::path& path);

/// Thread-safe memo in front of a provider, keyed by content hash, so that a
/// text is sent to the provider at most once per process.
class EmbeddingMemo {
public:
  explicit EmbeddingMemo(ProviderConfig config) : config_(std::move(config)) {}

  std::vector<std::vector<double>> embed(const std::vector<EmbeddingRequest>& requests);
  const ProviderConfig& config() const noexcept { return config_; }
  std::size_t provider_calls() const;

private:
  ProviderConfig config_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> memo_;
  std::size_t calls_ = 0;
};

} // namespace nes
