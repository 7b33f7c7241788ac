#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "nes/contingency.hpp"

namespace nes {

struct EwensPitmanParams {
  double theta = 1.0;  // strength, > -alpha
  double alpha = 0.0;  // discount, in [0, 1)
};

/// Throws DomainError unless 0 <= alpha < 1 and theta > -alpha.
void check_params(const EwensPitmanParams& params);

/// Log probability of the frequency counts under the two-parameter sampling
/// formula. alpha = 0 is the one-parameter (Ewens) case.
double epsf_log_pmf(const FrequencyCounts& counts, const EwensPitmanParams& params);

struct MleStart {
  EwensPitmanParams start;
  EwensPitmanParams end;
  double loglik = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct MleFit {
  EwensPitmanParams params;
  double loglik = 0.0;
  // Gradient norm in (log(theta + alpha), logit(alpha)) coordinates.
  double grad_norm = 0.0;
  bool ewens_case = false;     // alpha driven to 0
  bool alpha_clamped = false;  // alpha pinned at 1 - 1e-8
  std::vector<MleStart> starts;
};

inline constexpr double kMaxAlpha = 1.0 - 1e-8;

/// Maximum-likelihood (theta, alpha) by multi-start Newton-Raphson in
/// (log(theta + alpha), logit(alpha)). Requires at least two cells; throws
/// ConvergenceError when no start converges.
MleFit fit_mle(const FrequencyCounts& counts);

nlohmann::json fit_to_json(const MleFit& fit);

/// Expected number of singleton cells in a sample of size N.
double expected_uniques_exact(const EwensPitmanParams& params, double N);
/// Large-N approximation Gamma(theta + 1) / Gamma(theta + alpha) * N^alpha.
double expected_uniques_asymptotic(const EwensPitmanParams& params, double N);

struct PopulationEstimate {
  double N = 0.0;
  double S1_hat = 0.0;  // expected population uniques (large-N form)
  double raw = 0.0;     // unclamped ratio
  double p_hat = 0.0;   // raw clamped to [0, 1]
  bool clamped = false;
};

/// Estimated share of sample uniques that are population uniques, for a
/// sample of size n with s1 uniques drawn from a population of size N.
PopulationEstimate pop_unique_ratio(const EwensPitmanParams& params, double N, std::size_t n, std::size_t s1);

/// Frequency counts of one two-parameter Chinese restaurant process draw
/// with n customers.
FrequencyCounts sample_crp(const EwensPitmanParams& params, std::size_t n, std::uint64_t seed);

} // namespace nes
