#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>

namespace nes::testing {

namespace {

void partitions_into(std::size_t remaining, std::size_t max_part, std::map<std::size_t, std::size_t>& cur,
                     std::vector<FrequencyCounts>& out) {
  if (remaining == 0) {
    out.push_back(make_frequency_counts(cur));
    return;
  }
  for (std::size_t part = std::min(remaining, max_part); part >= 1; --part) {
    ++cur[part];
    partitions_into(remaining - part, part, cur, out);
    if (--cur[part] == 0) cur.erase(part);
  }
}

// Product-form probability, independent of the library's log-space code.
double direct_pmf(const FrequencyCounts& c, const EwensPitmanParams& p) {
  double v = 1.0;
  for (std::size_t i = 2; i <= c.n; ++i) v *= static_cast<double>(i);
  for (std::size_t i = 0; i < c.k; ++i) v *= p.theta + static_cast<double>(i) * p.alpha;
  for (std::size_t i = 0; i < c.n; ++i) v /= p.theta + static_cast<double>(i);
  for (const auto& [j, sj] : c.s) {
    double rising = 1.0;
    for (std::size_t i = 0; i + 1 < j; ++i) rising *= 1.0 - p.alpha + static_cast<double>(i);
    double jfact = 1.0;
    for (std::size_t i = 2; i <= j; ++i) jfact *= static_cast<double>(i);
    double sfact = 1.0;
    for (std::size_t i = 2; i <= sj; ++i) sfact *= static_cast<double>(i);
    v *= std::pow(rising / jfact, static_cast<double>(sj)) / sfact;
  }
  return v;
}

} // namespace

std::vector<FrequencyCounts> all_partitions(std::size_t n) {
  std::vector<FrequencyCounts> out;
  std::map<std::size_t, std::size_t> cur;
  partitions_into(n, n, cur, out);
  return out;
}

double enumerated_expected_uniques(const EwensPitmanParams& params, std::size_t n) {
  double e = 0.0;
  for (const auto& c : all_partitions(n)) e += direct_pmf(c, params) * static_cast<double>(c.s_of(1));
  return e;
}

double crp_goodness_of_fit(const EwensPitmanParams& params, std::size_t n, std::size_t draws, std::uint64_t seed) {
  const auto parts = all_partitions(n);
  std::map<std::map<std::size_t, std::size_t>, std::size_t> observed;
  for (std::size_t i = 0; i < draws; ++i) ++observed[sample_crp(params, n, seed + i).s];
  // Pool cells with small expectation so the chi-square approximation holds.
  double stat = 0.0, pooled_exp = 0.0, pooled_obs = 0.0;
  std::size_t cells = 0;
  for (const auto& c : parts) {
    const double expected = direct_pmf(c, params) * static_cast<double>(draws);
    const double obs = static_cast<double>(observed[c.s]);
    if (expected < 5.0) {
      pooled_exp += expected;
      pooled_obs += obs;
      continue;
    }
    stat += (obs - expected) * (obs - expected) / expected;
    ++cells;
  }
  if (pooled_exp > 0.0) {
    stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  }
  if (cells < 2) return 1.0;
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(cells - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<RiskUtilityPoint> brute_force_frontier(const std::vector<RiskUtilityPoint>& points) {
  std::vector<RiskUtilityPoint> out;
  for (const auto& p : points) {
    bool dominated = false;
    for (const auto& q : points) {
      if (q.DR <= p.DR && q.DU >= p.DU && (q.DR < p.DR || q.DU > p.DU)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) out.push_back(p);
  }
  return out;
}

Vector uniform_on_sphere(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(static_cast<Eigen::Index>(d));
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Vector jitter(const Vector& center, double spread, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, spread);
  Vector v = center;
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += g(rng);
  return v.normalized();
}

NormalizationEstimate density_integral(Family family, std::size_t d, double rho, std::size_t samples,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> g;
  const double pi = std::acos(-1.0);
  const auto dd = static_cast<double>(d);
  const Vector mu = uniform_on_sphere(d, rng);
  const ComponentParams c{mu, rho};
  // Angle from mu: half-Cauchy truncated to [0, pi]; direction uniform.
  const double scale = std::max(1.0 - rho, 0.01);
  const double span = std::atan(pi / scale);
  // Ratio of the (d-1)- and (d-2)-sphere areas.
  const double area_ratio = std::sqrt(pi) * std::exp(std::lgamma((dd - 1.0) / 2.0) - std::lgamma(dd / 2.0));

  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Vector x;
    if (unif(rng) < 0.5) {
      x = uniform_on_sphere(d, rng);
    } else {
      const double theta = scale * std::tan(unif(rng) * span);
      Vector v(static_cast<Eigen::Index>(d));
      do {
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
        v -= v.dot(mu) * mu;
      } while (v.norm() < 1e-12);
      x = std::cos(theta) * mu + std::sin(theta) * v.normalized();
    }
    const double t = std::clamp(x.dot(mu), -1.0, 1.0);
    const double theta = std::acos(t);
    const double sin_theta = std::sin(theta);
    const double h = scale / (span * (scale * scale + theta * theta));
    const double angular = d == 2 ? h * area_ratio : h * area_ratio / std::pow(sin_theta, dd - 2.0);
    const double q = 0.5 + 0.5 * angular;
    const double w = std::exp(log_density(family, x, c, d)) / q;
    sum += w;
    sum_sq += w * w;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

Corpus synthetic_corpus(const SyntheticOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::map<std::string, std::size_t> pool{{"Organization", 60}, {"Person", 80}, {"Event", 8},
                                                {"Product", 50},      {"Location", 30}, {"Date", 24}};
  Corpus corpus;
  corpus.categories = kCategories;
  corpus.d = o.d;
  std::vector<Vector> centers;
  for (std::size_t k = 0; k < o.clusters; ++k) centers.push_back(uniform_on_sphere(o.d, rng));

  for (std::size_t doc = 0; doc < o.docs; ++doc) {
    for (std::size_t i = 0; i < o.chunks_per_doc; ++i) {
      Chunk c;
      c.id = fmt::format("d{:03}-c{:03}", doc, i);
      c.doc_id = fmt::format("doc{:03}", doc);
      std::string text = fmt::format("Segment {} of report {} opens here.", i, doc);
      for (const auto& cat : kCategories) {
        const double rate = cat == "Event" ? o.entity_rate * 0.1 : o.entity_rate;
        std::size_t count = 0;
        while (count < 3 && unif(rng) < (count == 0 ? rate : 0.3)) ++count;
        std::vector<std::string> names;
        for (std::size_t e = 0; e < count; ++e) {
          // Fixed-width names: no entity is a substring of another.
          const auto name =
              fmt::format("{} {:03}", cat, static_cast<std::size_t>(unif(rng) * static_cast<double>(pool.at(cat))));
          if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
        }
        for (const auto& n : names) text += fmt::format(" It mentions <{}> once.", n);
        if (!names.empty()) c.entities[cat] = names;
      }
      c.text = text;
      const Vector e = jitter(centers[static_cast<std::size_t>(unif(rng) * static_cast<double>(o.clusters))], o.spread, rng);
      c.embedding.assign(e.data(), e.data() + e.size());
      corpus.chunks.push_back(std::move(c));
    }
  }
  return corpus;
}

std::vector<std::pair<std::string, std::string>> brute_force_valid_pairs(const Corpus& corpus,
                                                                         const std::vector<std::string>& categories,
                                                                         const Memberships& l,
                                                                         const std::vector<std::string>& swapped,
                                                                         bool same_cluster) {
  auto is_swapped = [&](const std::string& cat) {
    return std::find(swapped.begin(), swapped.end(), cat) != swapped.end();
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < corpus.n(); ++i) {
    for (std::size_t j = i + 1; j < corpus.n(); ++j) {
      const auto& a = corpus.chunks[i];
      const auto& b = corpus.chunks[j];
      if (a.doc_id == b.doc_id) continue;
      if (same_cluster && l[i] != l[j]) continue;
      bool other_differs = false, swapped_differs = false, a_has = false, b_has = false;
      for (const auto& cat : categories) {
        const auto va = category_value(corpus, a, cat);
        const auto vb = category_value(corpus, b, cat);
        if (is_swapped(cat)) {
          swapped_differs |= va != vb;
          a_has |= va.has_value();
          b_has |= vb.has_value();
        } else {
          other_differs |= va != vb;
        }
      }
      if (other_differs && swapped_differs && a_has && b_has) out.emplace_back(a.id, b.id);
    }
  }
  return out;
}

std::map<std::string, std::vector<std::string>> entity_multiset(const Corpus& corpus) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& c : corpus.chunks)
    for (const auto& [cat, list] : c.entities) out[cat].insert(out[cat].end(), list.begin(), list.end());
  for (auto& [cat, list] : out) std::sort(list.begin(), list.end());
  return out;
}

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   fmt::format("nes-{}-{}-{}", tag, static_cast<long>(::getpid()), counter++);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

} // namespace nes::testing
