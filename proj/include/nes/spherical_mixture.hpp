#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace nes {

/// Row-major n x d matrix of unit vectors, one observation per row.
using UnitMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Family { PKB, SCauchy };

std::string to_string(Family f);
Family parse_family(const std::string& name);

/// Upper bound on the concentration is 1 - kRhoGap.
inline constexpr double kRhoGap = 1e-6;

struct ComponentParams {
  Vector mu;
  double rho = 0.0;
};

struct MixtureModel {
  Family family = Family::PKB;
  std::size_t d = 0;
  double eps = 0.0;
  std::vector<double> weights;
  std::vector<ComponentParams> components;

  std::size_t K() const noexcept { return components.size(); }
};

/// Component index per observation, 0-based.
using Memberships = std::vector<std::size_t>;

/// log[(1 - rho^2) / |x - rho mu|^d] w.r.t. the uniform probability measure.
double pkb_log_density(const Vector& x, const ComponentParams& c, std::size_t d);
/// log[((1 - rho^2) / |x - rho mu|^2)^(d-1)].
double scauchy_log_density(const Vector& x, const ComponentParams& c, std::size_t d);
double log_density(Family family, const Vector& x, const ComponentParams& c, std::size_t d);

/// Log density expressed through t = <x, mu>; shared by both families.
double log_density_from_cosine(Family family, double t, double rho, std::size_t d);

struct EmOptions {
  Family family = Family::PKB;
  std::size_t K = 1;
  double eps = 1e-3;
  double tol = 1e-6;
  std::size_t max_iter = 500;
  std::size_t inner_iter = 50;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EmResult {
  MixtureModel model;
  // Observed-data log-likelihood: initial value, then one entry per iteration.
  std::vector<double> trace;
  bool converged = false;
  std::size_t iterations = 0;
  // Re-seed count per component and the trace indices at which re-seeds took place.
  std::vector<std::size_t> reseeds;
  std::vector<std::size_t> reseed_points;
};

/// EM fit with clamp-and-renormalise weight floor `eps` and a numerical
/// M-step for (mu, rho). Throws ConvergenceError when one component needs
/// more than three re-seeds.
EmResult fit_em(const UnitMatrix& X, const EmOptions& options);

/// Observed-data log-likelihood sum_i log sum_k pi_k f(x_i | phi_k).
double mixture_log_likelihood(const MixtureModel& model, const UnitMatrix& X);

std::vector<double> responsibilities(const MixtureModel& model, const Vector& x);
Memberships assign(const MixtureModel& model, const UnitMatrix& X, std::size_t threads = 1);

/// sum_i log f(x_i | phi_{l_i}); the weights are not included.
double conditional_log_likelihood(const MixtureModel& model, const UnitMatrix& X, const Memberships& l);

/// Weighted single-component objective sum_i w_i log f(x_i | mu, rho).
double component_objective(Family family, const UnitMatrix& X, std::span<const double> w, const Vector& mu,
                           double rho);

/// Coordinate ascent on (mu, rho) for one component; never decreases the
/// objective relative to `start`.
ComponentParams maximize_component(Family family, const UnitMatrix& X, std::span<const double> w,
                                   ComponentParams start, std::size_t max_inner = 50);

/// Exact maximiser of the water-filling problem max sum m_k log pi_k subject to
/// pi_k >= eps and sum pi_k = 1.
std::vector<double> floor_weights(std::span<const double> mass, double eps);

void check_model(const MixtureModel& model);

nlohmann::json model_to_json(const MixtureModel& model);
MixtureModel model_from_json(const nlohmann::json& doc);
std::string trace_csv(const std::vector<double>& trace);

/// Stacks corpus-style embeddings into a matrix; throws if any is missing.
UnitMatrix to_matrix(const std::vector<std::vector<double>>& rows, std::size_t d);

} // namespace nes
