#include "nes/spherical_mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nes/error.hpp"
#include "nes/parallel.hpp"

namespace nes {

using nlohmann::json;

std::string to_string(Family f) { return f == Family::PKB ? "PKB" : "sCauchy"; }

Family parse_family(const std::string& name) {
  if (name == "PKB" || name == "pkb") return Family::PKB;
  if (name == "sCauchy" || name == "scauchy" || name == "SCauchy") return Family::SCauchy;
  throw ValidationError(fmt::format("unknown mixture family '{}'", name));
}

namespace {

// Exponents of log f = A log(1 - rho^2) - B log |x - rho mu|^2.
struct Exponents {
  double a;
  double b;
};

Exponents exponents(Family family, std::size_t d) {
  const auto dd = static_cast<double>(d);
  return family == Family::PKB ? Exponents{1.0, dd / 2.0} : Exponents{dd - 1.0, dd - 1.0};
}

// |x - rho mu|^2 for unit x, mu with <x, mu> = t, in a form that stays
// accurate when x is close to mu.
double squared_gap(double t, double rho) {
  const double one_minus_t = std::max(0.0, 1.0 - t);
  return (1.0 - rho) * (1.0 - rho) + 2.0 * rho * one_minus_t;
}

void check_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError(fmt::format("concentration {} is outside [0, 1)", rho));
}

constexpr double kMaxRho = 1.0 - kRhoGap;

// Weighted objective and its rho-derivative for fixed cosines t.
struct RhoProblem {
  Exponents e;
  const Vector& t;
  std::span<const double> w;
  double total;

  double value(double rho) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i)
      if (w[static_cast<std::size_t>(i)] != 0.0) s += w[static_cast<std::size_t>(i)] * std::log(squared_gap(t[i], rho));
    return e.a * total * std::log1p(-rho * rho) - e.b * s;
  }

  double slope(double rho) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double wi = w[static_cast<std::size_t>(i)];
      if (wi != 0.0) s += wi * (2.0 * rho - 2.0 * t[i]) / squared_gap(t[i], rho);
    }
    return -2.0 * e.a * rho * total / (1.0 - rho * rho) - e.b * s;
  }
};

// Global search over [0, 1 - gap]: scan the derivative on a grid that is
// uniform in -log(1 - rho), refine each + to - sign change, compare with
// the endpoints.
double best_rho(const RhoProblem& prob) {
  constexpr int kGrid = 48;
  const double u_max = -std::log(kRhoGap);
  std::vector<double> grid(kGrid), slopes(kGrid);
  for (int j = 0; j < kGrid; ++j) {
    grid[j] = j == kGrid - 1 ? kMaxRho : -std::expm1(-u_max * j / (kGrid - 1));
    slopes[j] = prob.slope(grid[j]);
  }
  double best = 0.0;
  double best_val = prob.value(0.0);
  auto consider = [&](double rho) {
    const double v = prob.value(rho);
    if (v > best_val) {
      best_val = v;
      best = rho;
    }
  };
  consider(kMaxRho);
  for (int j = 0; j + 1 < kGrid; ++j) {
    if (slopes[j] > 0.0 && slopes[j + 1] < 0.0) {
      std::uintmax_t iters = 200;
      auto [lo, hi] = boost::math::tools::toms748_solve(
          [&](double r) { return prob.slope(r); }, grid[j], grid[j + 1], slopes[j], slopes[j + 1],
          boost::math::tools::eps_tolerance<double>(52), iters);
      consider(0.5 * (lo + hi));
    } else if (slopes[j + 1] == 0.0) {
      consider(grid[j + 1]);
    }
  }
  return best;
}

struct EStep {
  Eigen::MatrixXd gamma;      // n x K responsibilities
  std::vector<double> point;  // per-observation log-likelihood
  double loglik = 0.0;
};

Eigen::MatrixXd log_density_matrix(const MixtureModel& model, const UnitMatrix& X, std::size_t threads) {
  const auto n = X.rows();
  const auto K = static_cast<Eigen::Index>(model.K());
  Eigen::MatrixXd out(n, K);
  parallel_for(model.K(), threads, [&](std::size_t k) {
    const auto& c = model.components[k];
    const Vector t = X * c.mu;
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, static_cast<Eigen::Index>(k)) = log_density_from_cosine(model.family, t[i], c.rho, model.d);
  });
  return out;
}

EStep expectation(const MixtureModel& model, const UnitMatrix& X, std::size_t threads) {
  const auto n = X.rows();
  const auto K = static_cast<Eigen::Index>(model.K());
  EStep es;
  es.gamma = log_density_matrix(model, X, threads);
  es.point.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < K; ++k) es.gamma.col(k).array() += std::log(model.weights[static_cast<std::size_t>(k)]);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = es.gamma.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) s += std::exp(es.gamma(i, k) - top);
    const double ll = top + std::log(s);
    es.point[static_cast<std::size_t>(i)] = ll;
    for (Eigen::Index k = 0; k < K; ++k) es.gamma(i, k) = std::exp(es.gamma(i, k) - ll);
  }
  // Fixed-order summation keeps the total independent of threading.
  es.loglik = std::accumulate(es.point.begin(), es.point.end(), 0.0);
  return es;
}

Vector row_vector(const UnitMatrix& X, Eigen::Index i) { return X.row(i).transpose(); }

std::vector<Eigen::Index> farthest_point_seeds(const UnitMatrix& X, std::size_t K, std::uint64_t seed) {
  const auto n = X.rows();
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> seeds{static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))};
  Vector nearest = Vector::Constant(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < K) {
    const Vector t = X * row_vector(X, seeds.back());
    for (Eigen::Index i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], 1.0 - t[i]);
    Eigen::Index pick = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (nearest[i] > nearest[pick]) pick = i;
    seeds.push_back(pick);
  }
  return seeds;
}

double weight_objective(std::span<const double> mass, std::span<const double> pi) {
  double s = 0.0;
  for (std::size_t k = 0; k < mass.size(); ++k)
    if (mass[k] > 0.0) s += mass[k] * std::log(pi[k]);
  return s;
}

} // namespace

double log_density_from_cosine(Family family, double t, double rho, std::size_t d) {
  check_rho(rho);
  const auto e = exponents(family, d);
  return e.a * std::log1p(-rho * rho) - e.b * std::log(squared_gap(t, rho));
}

double pkb_log_density(const Vector& x, const ComponentParams& c, std::size_t d) {
  return log_density_from_cosine(Family::PKB, x.dot(c.mu), c.rho, d);
}

double scauchy_log_density(const Vector& x, const ComponentParams& c, std::size_t d) {
  return log_density_from_cosine(Family::SCauchy, x.dot(c.mu), c.rho, d);
}

double log_density(Family family, const Vector& x, const ComponentParams& c, std::size_t d) {
  return family == Family::PKB ? pkb_log_density(x, c, d) : scauchy_log_density(x, c, d);
}

double component_objective(Family family, const UnitMatrix& X, std::span<const double> w, const Vector& mu,
                           double rho) {
  check_rho(rho);
  const Vector t = X * mu;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  return RhoProblem{exponents(family, static_cast<std::size_t>(X.cols())), t, w, total}.value(rho);
}

ComponentParams maximize_component(Family family, const UnitMatrix& X, std::span<const double> w,
                                   ComponentParams start, std::size_t max_inner) {
  const auto e = exponents(family, static_cast<std::size_t>(X.cols()));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) return start;
  const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));

  auto objective = [&](const Vector& mu, double rho) {
    const Vector t = X * mu;
    return RhoProblem{e, t, w, total}.value(rho);
  };

  ComponentParams cur = start;
  double cur_val = objective(cur.mu, cur.rho);
  const double start_val = cur_val;

  for (std::size_t it = 0; it < max_inner; ++it) {
    const double before = cur_val;

    // Location: the objective is convex in mu on the ambient space, so the
    // normalised gradient maximises its linear minoriser on the sphere.
    const Vector t = X * cur.mu;
    if (cur.rho > 0.0) {
      Vector scale(t.size());
      for (Eigen::Index i = 0; i < t.size(); ++i) scale[i] = wv[i] / squared_gap(t[i], cur.rho);
      const Vector grad = X.transpose() * scale;
      const double gnorm = grad.norm();
      if (gnorm > 0.0) {
        const Vector dir = grad / gnorm;
        double step = std::numeric_limits<double>::infinity();
        for (int bt = 0; bt < 30; ++bt) {
          const Vector cand = std::isinf(step) ? dir : Vector((cur.mu + step * dir).normalized());
          const double val = objective(cand, cur.rho);
          if (val >= cur_val) {
            cur.mu = cand;
            cur_val = val;
            break;
          }
          step = std::isinf(step) ? 1.0 : step * 0.5;
        }
      }
    } else {
      const Vector mean = X.transpose() * wv;
      if (mean.norm() > 0.0) cur.mu = mean.normalized();
      cur_val = objective(cur.mu, cur.rho);
    }

    // Concentration: global 1-D search at the current location.
    {
      const Vector tt = X * cur.mu;
      const RhoProblem prob{e, tt, w, total};
      const double rho = best_rho(prob);
      const double val = prob.value(rho);
      if (val >= cur_val) {
        cur.rho = rho;
        cur_val = val;
      }
    }
    if (cur_val - before <= 1e-13 * std::max(1.0, std::abs(cur_val))) break;
  }
  return cur_val >= start_val ? cur : start;
}

std::vector<double> floor_weights(std::span<const double> mass, double eps) {
  const std::size_t K = mass.size();
  if (K == 0) return {};
  if (eps * static_cast<double>(K) > 1.0) throw DomainError("weight floor eps * K exceeds 1");
  std::vector<bool> pinned(K, false);
  std::vector<double> pi(K);
  for (;;) {
    std::size_t n_pinned = 0;
    double free_mass_total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (pinned[k])
        ++n_pinned;
      else
        free_mass_total += std::max(0.0, mass[k]);
    }
    const double budget = 1.0 - static_cast<double>(n_pinned) * eps;
    const std::size_t n_free = K - n_pinned;
    bool changed = false;
    for (std::size_t k = 0; k < K; ++k) {
      if (pinned[k]) {
        pi[k] = eps;
        continue;
      }
      pi[k] = free_mass_total > 0.0 ? budget * std::max(0.0, mass[k]) / free_mass_total
                                    : budget / static_cast<double>(n_free);
      if (pi[k] < eps) {
        pinned[k] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return pi;
}

void check_model(const MixtureModel& model) {
  if (model.K() == 0) throw ValidationError("mixture has no components");
  if (model.weights.size() != model.K()) throw ValidationError("weights and components differ in length");
  double sum = 0.0;
  for (double p : model.weights) {
    if (!(p > 0.0)) throw ValidationError("mixture weights must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError(fmt::format("mixture weights sum to {}", sum));
  for (const auto& c : model.components) {
    if (static_cast<std::size_t>(c.mu.size()) != model.d) throw ValidationError("location has wrong dimension");
    if (std::abs(c.mu.norm() - 1.0) > 1e-9) throw ValidationError("location is not a unit vector");
    check_rho(c.rho);
  }
}

EmResult fit_em(const UnitMatrix& X, const EmOptions& opt) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto d = static_cast<std::size_t>(X.cols());
  if (opt.K == 0) throw std::invalid_argument("fit_em: K must be positive");
  if (n < opt.K) throw std::invalid_argument(fmt::format("fit_em: {} observations for K = {}", n, opt.K));
  if (opt.eps < 0.0 || opt.eps * static_cast<double>(opt.K) > 1.0)
    throw std::invalid_argument("fit_em: eps * K must not exceed 1");
  if (d > n) spdlog::warn("embedding dimension {} exceeds the number of observations {}", d, n);

  EmResult res;
  auto& model = res.model;
  model.family = opt.family;
  model.d = d;
  model.eps = opt.eps;
  model.weights.assign(opt.K, 1.0 / static_cast<double>(opt.K));
  for (auto idx : farthest_point_seeds(X, opt.K, opt.seed)) model.components.push_back({row_vector(X, idx), 0.5});
  res.reseeds.assign(opt.K, 0);

  auto es = expectation(model, X, opt.threads);
  res.trace.push_back(es.loglik);

  for (std::size_t iter = 1; iter <= opt.max_iter; ++iter) {
    // Empty components get re-seeded at the worst-explained observation.
    const Eigen::VectorXd mass = es.gamma.colwise().sum();
    bool reseeded = false;
    for (std::size_t k = 0; k < opt.K; ++k) {
      if (mass[static_cast<Eigen::Index>(k)] >= 1e-8) continue;
      if (++res.reseeds[k] > 3) {
        std::ostringstream diag;
        diag << "component " << k << " emptied more than 3 times; re-seeds per component:";
        for (auto r : res.reseeds) diag << ' ' << r;
        diag << "; iteration " << iter;
        throw ConvergenceError("EM did not converge: repeated empty component", diag.str());
      }
      const auto worst = std::distance(es.point.begin(), std::min_element(es.point.begin(), es.point.end()));
      model.components[k] = {row_vector(X, worst), 0.5};
      model.weights[k] = std::max(opt.eps, 1.0 / static_cast<double>(n));
      reseeded = true;
    }
    if (reseeded) {
      const double total = std::accumulate(model.weights.begin(), model.weights.end(), 0.0);
      for (auto& p : model.weights) p /= total;
      model.weights = floor_weights(model.weights, opt.eps);
      es = expectation(model, X, opt.threads);
      res.reseed_points.push_back(res.trace.size());
      res.trace.push_back(es.loglik);
    }

    // Weights: exact constrained maximiser, kept only if it does not lose.
    std::vector<double> m(opt.K);
    for (std::size_t k = 0; k < opt.K; ++k) m[k] = es.gamma.col(static_cast<Eigen::Index>(k)).sum();
    auto pi = floor_weights(m, opt.eps);
    if (weight_objective(m, pi) >= weight_objective(m, model.weights)) model.weights = std::move(pi);

    parallel_for(opt.K, opt.threads, [&](std::size_t k) {
      const auto col = static_cast<Eigen::Index>(k);
      const Eigen::VectorXd g = es.gamma.col(col);
      model.components[k] = maximize_component(opt.family, X, std::span<const double>(g.data(), n),
                                               model.components[k], opt.inner_iter);
    });

    const double prev = es.loglik;
    es = expectation(model, X, opt.threads);
    res.trace.push_back(es.loglik);
    res.iterations = iter;
    if (es.loglik - prev < opt.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

double mixture_log_likelihood(const MixtureModel& model, const UnitMatrix& X) {
  return expectation(model, X, 1).loglik;
}

std::vector<double> responsibilities(const MixtureModel& model, const Vector& x) {
  std::vector<double> logp(model.K());
  for (std::size_t k = 0; k < model.K(); ++k)
    logp[k] = std::log(model.weights[k]) + log_density(model.family, x, model.components[k], model.d);
  const double top = *std::max_element(logp.begin(), logp.end());
  double s = 0.0;
  for (auto& v : logp) s += (v = std::exp(v - top));
  for (auto& v : logp) v /= s;
  return logp;
}

Memberships assign(const MixtureModel& model, const UnitMatrix& X, std::size_t threads) {
  const auto logf = log_density_matrix(model, X, threads);
  Memberships l(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < model.K(); ++k) {
      const double v = std::log(model.weights[k]) + logf(i, static_cast<Eigen::Index>(k));
      if (v > best_val) {  // strict: ties keep the lower index
        best_val = v;
        best = k;
      }
    }
    l[static_cast<std::size_t>(i)] = best;
  }
  return l;
}

double conditional_log_likelihood(const MixtureModel& model, const UnitMatrix& X, const Memberships& l) {
  if (l.size() != static_cast<std::size_t>(X.rows()))
    throw std::invalid_argument(fmt::format("{} memberships for {} observations", l.size(), X.rows()));
  double s = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (l[i] >= model.K()) throw std::invalid_argument("membership index out of range");
    const auto& c = model.components[l[i]];
    s += log_density_from_cosine(model.family, X.row(static_cast<Eigen::Index>(i)).dot(c.mu), c.rho, model.d);
  }
  return s;
}

json model_to_json(const MixtureModel& model) {
  json comps = json::array();
  for (const auto& c : model.components)
    comps.push_back({{"mu", std::vector<double>(c.mu.data(), c.mu.data() + c.mu.size())}, {"rho", c.rho}});
  return {{"family", to_string(model.family)}, {"K", model.K()},     {"d", model.d},
          {"eps", model.eps},                  {"weights", model.weights}, {"components", comps}};
}

MixtureModel model_from_json(const json& doc) {
  try {
    MixtureModel m;
    m.family = parse_family(doc.at("family").get<std::string>());
    m.eps = doc.at("eps").get<double>();
    m.weights = doc.at("weights").get<std::vector<double>>();
    for (const auto& c : doc.at("components")) {
      const auto mu = c.at("mu").get<std::vector<double>>();
      m.components.push_back({Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(mu.size())),
                              c.at("rho").get<double>()});
    }
    m.d = doc.contains("d") ? doc["d"].get<std::size_t>()
                            : (m.components.empty() ? 0 : static_cast<std::size_t>(m.components[0].mu.size()));
    if (doc.at("K").get<std::size_t>() != m.K()) throw ParseError("model 'K' disagrees with component count");
    check_model(m);
    return m;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed model JSON: {}", e.what()));
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
}

std::string trace_csv(const std::vector<double>& trace) {
  std::string out = "iter,loglik\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out += fmt::format("{},{:.17g}\n", i, trace[i]);
  return out;
}

UnitMatrix to_matrix(const std::vector<std::vector<double>>& rows, std::size_t d) {
  UnitMatrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d)
      throw ValidationError(fmt::format("row {} has dimension {}, expected {}", i, rows[i].size(), d));
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return X;
}

} // namespace nes
