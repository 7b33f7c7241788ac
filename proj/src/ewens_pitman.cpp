#include "nes/ewens_pitman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nes/error.hpp"

namespace nes {

using nlohmann::json;
namespace bm = boost::math;

void check_params(const EwensPitmanParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha < 1.0))
    throw DomainError(fmt::format("discount alpha = {} is outside [0, 1)", p.alpha));
  if (!(p.theta > -p.alpha) || !std::isfinite(p.theta))
    throw DomainError(fmt::format("strength theta = {} must exceed -alpha = {}", p.theta, -p.alpha));
}

namespace {

void check_counts(const FrequencyCounts& c) {
  if (c.n == 0 || c.k == 0) throw ValidationError("frequency counts are empty");
  std::size_t k = 0, n = 0;
  for (const auto& [j, sj] : c.s) {
    if (j == 0) throw ValidationError("frequency counts are indexed from j = 1");
    k += sj;
    n += j * sj;
  }
  if (k != c.k || n != c.n) throw ValidationError("frequency counts disagree with their k or n");
}

// Parameter-dependent part of the log pmf with first and second derivatives
// in (theta, alpha).
struct Terms {
  double value = 0.0;
  double d_theta = 0.0, d_alpha = 0.0;
  double d_tt = 0.0, d_ta = 0.0, d_aa = 0.0;
};

Terms likelihood_terms(const FrequencyCounts& c, double theta, double alpha, bool derivatives) {
  Terms t;
  // sum_{i=1}^{k-1} log(theta + i alpha), summed directly: k is at most n and
  // the sum stays accurate for every theta / alpha ratio.
  for (std::size_t i = 1; i < c.k; ++i) {
    const double di = static_cast<double>(i);
    const double x = theta + di * alpha;
    t.value += std::log(x);
    if (derivatives) {
      t.d_theta += 1.0 / x;
      t.d_alpha += di / x;
      t.d_tt -= 1.0 / (x * x);
      t.d_ta -= di / (x * x);
      t.d_aa -= di * di / (x * x);
    }
  }
  const double nn = static_cast<double>(c.n);
  t.value -= std::lgamma(theta + nn) - std::lgamma(theta + 1.0);
  if (derivatives) {
    t.d_theta -= bm::digamma(theta + nn) - bm::digamma(theta + 1.0);
    t.d_tt -= bm::trigamma(theta + nn) - bm::trigamma(theta + 1.0);
  }
  for (const auto& [j, sj] : c.s) {
    if (j == 1) continue;  // (1 - alpha)^{0 rising} = 1
    const double s = static_cast<double>(sj);
    const double jj = static_cast<double>(j);
    t.value += s * (std::lgamma(jj - alpha) - std::lgamma(1.0 - alpha));
    if (derivatives) {
      t.d_alpha += s * (bm::digamma(1.0 - alpha) - bm::digamma(jj - alpha));
      t.d_aa += s * (bm::trigamma(jj - alpha) - bm::trigamma(1.0 - alpha));
    }
  }
  return t;
}

double log_combinatorial(const FrequencyCounts& c) {
  double v = std::lgamma(static_cast<double>(c.n) + 1.0);
  for (const auto& [j, sj] : c.s) {
    const double s = static_cast<double>(sj);
    v -= std::lgamma(s + 1.0) + s * std::lgamma(static_cast<double>(j) + 1.0);
  }
  return v;
}

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }
double logit(double a) { return std::log(a) - std::log1p(-a); }

const double kMaxLogit = logit(kMaxAlpha);
constexpr double kMinLogit = -40.0;

EwensPitmanParams from_transformed(double u, double v) {
  const double alpha = sigmoid(v);
  return {std::exp(u) - alpha, alpha};
}

struct Local {
  double value;
  double gu, gv;
  double huu, huv, hvv;
};

Local transformed(const FrequencyCounts& c, double u, double v, bool derivatives = true) {
  const auto p = from_transformed(u, v);
  const auto t = likelihood_terms(c, p.theta, p.alpha, derivatives);
  Local l{t.value, 0, 0, 0, 0, 0};
  if (!derivatives) return l;
  const double e = std::exp(u);
  const double a1 = p.alpha * (1.0 - p.alpha);
  const double a2 = a1 * (1.0 - 2.0 * p.alpha);
  l.gu = t.d_theta * e;
  l.gv = a1 * (t.d_alpha - t.d_theta);
  l.huu = t.d_tt * e * e + t.d_theta * e;
  l.huv = e * a1 * (t.d_ta - t.d_tt);
  l.hvv = a2 * (t.d_alpha - t.d_theta) + a1 * a1 * (t.d_aa - 2.0 * t.d_ta + t.d_tt);
  return l;
}

bool finite_value(const FrequencyCounts& c, double u, double v, double& out) {
  const auto p = from_transformed(u, v);
  if (!(p.theta > -p.alpha) || !std::isfinite(p.theta)) return false;
  out = likelihood_terms(c, p.theta, p.alpha, false).value;
  return std::isfinite(out);
}

MleStart newton(const FrequencyCounts& c, EwensPitmanParams start) {
  constexpr std::size_t kMaxIter = 500;
  constexpr double kGradTol = 1e-6;
  constexpr double kMaxStep = 4.0;
  MleStart r;
  r.start = start;
  double u = std::log(start.theta + start.alpha);
  double v = std::clamp(logit(start.alpha), kMinLogit, kMaxLogit);
  Local cur = transformed(c, u, v);

  auto boundary_grad = [&](const Local& l, double vv) {
    // At a pinned logit bound only the inward component counts.
    double gv = l.gv;
    if (vv >= kMaxLogit && gv > 0) gv = 0;
    if (vv <= kMinLogit && gv < 0) gv = 0;
    return std::hypot(l.gu, gv);
  };

  for (std::size_t it = 0; it < kMaxIter; ++it) {
    r.grad_norm = boundary_grad(cur, v);
    r.iterations = it;
    if (r.grad_norm < kGradTol) {
      r.converged = true;
      break;
    }
    double du, dv;
    const double det = cur.huu * cur.hvv - cur.huv * cur.huv;
    if (cur.huu < 0 && det > 0) {
      du = -(cur.hvv * cur.gu - cur.huv * cur.gv) / det;
      dv = -(-cur.huv * cur.gu + cur.huu * cur.gv) / det;
    } else {
      du = cur.gu;
      dv = cur.gv;
    }
    const double len = std::hypot(du, dv);
    if (len > kMaxStep) {
      du *= kMaxStep / len;
      dv *= kMaxStep / len;
    }
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      const double nu = u + du;
      const double nv = std::clamp(v + dv, kMinLogit, kMaxLogit);
      double val;
      if (finite_value(c, nu, nv, val) && val >= cur.value) {
        moved = nu != u || nv != v;
        u = nu;
        v = nv;
        cur = transformed(c, u, v);
        break;
      }
      du *= 0.5;
      dv *= 0.5;
    }
    if (!moved) {
      r.grad_norm = boundary_grad(cur, v);
      r.converged = r.grad_norm < kGradTol;
      break;
    }
  }
  r.end = from_transformed(u, v);
  r.loglik = cur.value + log_combinatorial(c);
  return r;
}

} // namespace

double epsf_log_pmf(const FrequencyCounts& counts, const EwensPitmanParams& params) {
  check_params(params);
  check_counts(counts);
  return log_combinatorial(counts) + likelihood_terms(counts, params.theta, params.alpha, false).value;
}

MleFit fit_mle(const FrequencyCounts& counts) {
  check_counts(counts);
  if (counts.k < 2) throw ValidationError("fit_mle needs at least two cells");
  if (counts.k == counts.n)
    spdlog::warn("every cell is a singleton; the likelihood has no interior maximum");

  const double kk = static_cast<double>(counts.k);
  const std::vector<EwensPitmanParams> starts{{1.0, 0.5}, {10.0, 0.8}, {0.5, 0.1}, {std::max(1.0, kk / 10.0), 0.9}};
  MleFit fit;
  const MleStart* best = nullptr;
  for (const auto& s : starts) fit.starts.push_back(newton(counts, s));
  for (const auto& r : fit.starts)
    if (r.converged && (!best || r.loglik > best->loglik)) best = &r;
  if (!best) {
    std::string diag;
    for (const auto& r : fit.starts)
      diag += fmt::format("start (theta={}, alpha={}) -> (theta={:.6g}, alpha={:.6g}), |grad|={:.3g} after {} steps; ",
                          r.start.theta, r.start.alpha, r.end.theta, r.end.alpha, r.grad_norm, r.iterations);
    throw ConvergenceError("Ewens-Pitman MLE did not converge from any start", diag);
  }
  fit.params = best->end;
  fit.loglik = best->loglik;
  fit.grad_norm = best->grad_norm;
  fit.ewens_case = fit.params.alpha < 1e-8;
  if (fit.ewens_case) fit.params.alpha = 0.0;
  if (fit.params.alpha >= kMaxAlpha * (1.0 - 1e-12)) {
    fit.params.alpha = kMaxAlpha;
    fit.alpha_clamped = true;
    spdlog::warn("discount estimate reached the upper bound; clamped at 1 - 1e-8");
  }
  fit.loglik = epsf_log_pmf(counts, fit.params);
  return fit;
}

json fit_to_json(const MleFit& fit) {
  json starts = json::array();
  for (const auto& s : fit.starts)
    starts.push_back({{"start", {{"theta", s.start.theta}, {"alpha", s.start.alpha}}},
                      {"end", {{"theta", s.end.theta}, {"alpha", s.end.alpha}}},
                      {"loglik", s.loglik},
                      {"grad_norm", s.grad_norm},
                      {"iterations", s.iterations},
                      {"converged", s.converged}});
  return {{"theta", fit.params.theta}, {"alpha", fit.params.alpha}, {"loglik", fit.loglik},
          {"grad_norm", fit.grad_norm}, {"ewens_case", fit.ewens_case}, {"alpha_clamped", fit.alpha_clamped},
          {"starts", starts}};
}

double expected_uniques_exact(const EwensPitmanParams& params, double N) {
  check_params(params);
  if (!(N >= 1.0)) throw DomainError("population size must be at least 1");
  const double theta = params.theta, alpha = params.alpha;
  // N * Gamma(theta+1)/Gamma(theta+alpha) * Gamma(theta+alpha+N-1)/Gamma(theta+N)
  const double head = 1.0 / bm::tgamma_delta_ratio(theta + alpha, 1.0 - alpha);
  const double tail = bm::tgamma_delta_ratio(theta + alpha + N - 1.0, 1.0 - alpha);
  return N * head * tail;
}

double expected_uniques_asymptotic(const EwensPitmanParams& params, double N) {
  check_params(params);
  if (!(N >= 1.0)) throw DomainError("population size must be at least 1");
  return std::exp(std::lgamma(params.theta + 1.0) - std::lgamma(params.theta + params.alpha) +
                  params.alpha * std::log(N));
}

PopulationEstimate pop_unique_ratio(const EwensPitmanParams& params, double N, std::size_t n, std::size_t s1) {
  check_params(params);
  if (s1 == 0) throw DomainError("no sample uniques; the population-unique ratio is undefined");
  if (n < s1) throw DomainError("sample size is smaller than the number of sample uniques");
  if (N < static_cast<double>(n)) throw DomainError("population size is smaller than the sample size");
  PopulationEstimate e;
  e.N = N;
  e.S1_hat = expected_uniques_asymptotic(params, N);
  e.raw = std::exp(std::lgamma(params.theta + 1.0) - std::lgamma(params.theta + params.alpha) +
                   (params.alpha - 1.0) * std::log(N)) *
          static_cast<double>(n) / static_cast<double>(s1);
  e.p_hat = std::clamp(e.raw, 0.0, 1.0);
  e.clamped = e.raw > 1.0;
  if (e.clamped) spdlog::warn("population-unique ratio {:.4g} exceeds 1 at N = {:g}; clamped", e.raw, N);
  return e;
}

namespace {

// Fenwick tree over table weights n_j - alpha.
class WeightTree {
public:
  void push(double w) {
    // The new node covers (p - lowbit(p), p]; seed it with the earlier part.
    const std::size_t p = tree_.size() + 1;
    tree_.push_back(w + prefix(p - 1) - prefix(p - (p & (~p + 1))));
  }
  // Sum of the first `count` weights.
  double prefix(std::size_t count) const {
    double s = 0.0;
    for (std::size_t i = count; i > 0; i -= i & (~i + 1)) s += tree_[i - 1];
    return s;
  }
  void add(std::size_t i, double w) {
    for (++i; i <= tree_.size(); i += i & (~i + 1)) tree_[i - 1] += w;
  }
  // Smallest index whose prefix sum exceeds x.
  std::size_t find(double x) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 <= tree_.size()) step *= 2;
    for (; step; step /= 2) {
      if (pos + step <= tree_.size() && tree_[pos + step - 1] <= x) {
        pos += step;
        x -= tree_[pos - 1];
      }
    }
    return std::min(pos, tree_.size() - 1);
  }

private:
  std::vector<double> tree_;
};

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace

FrequencyCounts sample_crp(const EwensPitmanParams& params, std::size_t n, std::uint64_t seed) {
  check_params(params);
  if (n == 0) throw std::invalid_argument("sample_crp: n must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> sizes{1};
  WeightTree tree;
  tree.push(1.0 - params.alpha);
  for (std::size_t i = 2; i <= n; ++i) {
    const double k = static_cast<double>(sizes.size());
    const double total = params.theta + static_cast<double>(i - 1);
    const double x = unit_uniform(rng) * total;
    const double new_weight = params.theta + params.alpha * k;
    if (x < new_weight) {
      sizes.push_back(1);
      tree.push(1.0 - params.alpha);
    } else {
      const std::size_t j = tree.find(x - new_weight);
      ++sizes[j];
      tree.add(j, 1.0);
    }
  }
  std::map<std::size_t, std::size_t> s;
  for (auto sz : sizes) ++s[sz];
  return make_frequency_counts(s);
}

} // namespace nes
