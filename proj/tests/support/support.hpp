#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nes/contingency.hpp"
#include "nes/corpus.hpp"
#include "nes/ewens_pitman.hpp"
#include "nes/risk_utility.hpp"
#include "nes/spherical_mixture.hpp"

namespace nes::testing {

/// Every integer partition of n, as frequency counts.
std::vector<FrequencyCounts> all_partitions(std::size_t n);

/// Expected singleton count by summing over all partitions of n.
double enumerated_expected_uniques(const EwensPitmanParams& params, std::size_t n);

/// Chi-square goodness-of-fit p-value of `draws` CRP samples of size n
/// against the sampling-formula probabilities.
double crp_goodness_of_fit(const EwensPitmanParams& params, std::size_t n, std::size_t draws, std::uint64_t seed);

/// Quadratic-time maximal set under "lower DR, higher DU".
std::vector<RiskUtilityPoint> brute_force_frontier(const std::vector<RiskUtilityPoint>& points);

Vector uniform_on_sphere(std::size_t d, std::mt19937_64& rng);
/// Unit vector at angular noise `spread` around `center`.
Vector jitter(const Vector& center, double spread, std::mt19937_64& rng);

struct NormalizationEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Importance-sampling estimate of the integral of exp(log density) against
/// the uniform probability measure on the sphere. Half the draws are uniform,
/// half concentrate near the location.
NormalizationEstimate density_integral(Family family, std::size_t d, double rho, std::size_t samples,
                                       std::uint64_t seed);

struct SyntheticOptions {
  std::size_t docs = 40;
  std::size_t chunks_per_doc = 20;
  std::size_t d = 8;
  std::size_t clusters = 4;
  double spread = 0.25;
  double entity_rate = 0.5;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string> kCategories{"Organization", "Person", "Event", "Product", "Location", "Date"};

/// Corpus whose texts contain every annotated entity and whose embeddings are
/// grouped around `clusters` random centres.
Corpus synthetic_corpus(const SyntheticOptions& options);

/// Valid pairs by direct comparison of category values over all chunk pairs.
std::vector<std::pair<std::string, std::string>> brute_force_valid_pairs(const Corpus& corpus,
                                                                         const std::vector<std::string>& categories,
                                                                         const Memberships& l,
                                                                         const std::vector<std::string>& swapped,
                                                                         bool same_cluster);

/// Per-category sorted list of all entity strings in the corpus.
std::map<std::string, std::vector<std::string>> entity_multiset(const Corpus& corpus);

/// A fresh directory under the system temp dir.
std::string temp_dir(const std::string& tag);

} // namespace nes::testing
