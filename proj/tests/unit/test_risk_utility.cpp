#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>

#include <fmt/format.h>

#include "nes/error.hpp"
#include "nes/risk_utility.hpp"
#include "support.hpp"

using namespace nes;

namespace {

RiskUtilityPoint pt(double du, double dr, std::size_t swaps = 0, std::string id = "") {
  RiskUtilityPoint p;
  p.DU = du;
  p.DR = dr;
  p.swap_count = swaps;
  p.release_id = std::move(id);
  return p;
}

// One Person category: `uniques` singleton cells plus `shared` chunks in one cell.
Corpus uniques_corpus(std::size_t uniques, std::size_t shared) {
  Corpus c;
  c.categories = {"Person"};
  c.d = 2;
  for (std::size_t i = 0; i < uniques + shared; ++i) {
    const auto name = i < uniques ? fmt::format("Person {:03}", i) : std::string("Everyone");
    c.chunks.push_back({fmt::format("c{}", i), fmt::format("doc{}", i), name + ".", {{"Person", {name}}}, {1.0, 0.0}, {}});
  }
  return c;
}

bool dominates(const RiskUtilityPoint& q, const RiskUtilityPoint& p) {
  return q.DR <= p.DR && q.DU >= p.DU && (q.DR < p.DR || q.DU > p.DU);
}

std::vector<RiskUtilityPoint> random_points(std::size_t n, std::uint64_t seed, bool coarse) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RiskUtilityPoint> out;
  for (std::size_t i = 0; i < n; ++i) {
    double du = u(rng), dr = u(rng);
    if (coarse) {  // force ties
      du = std::round(du * 10) / 10;
      dr = std::round(dr * 10) / 10;
    }
    out.push_back(pt(du, dr, i, std::to_string(i)));
  }
  return out;
}

std::set<std::string> ids(const std::vector<RiskUtilityPoint>& v) {
  std::set<std::string> s;
  for (const auto& p : v) s.insert(p.release_id);
  return s;
}

struct Fixture {
  Corpus corpus = testing::synthetic_corpus({.docs = 6, .chunks_per_doc = 10, .d = 4, .clusters = 2, .seed = 5});
  MixtureModel model;
  Memberships l;
  UnitMatrix X;
  EmbeddingMemo memo{ProviderConfig{.kind = ProviderKind::DeterministicStub, .d = 4}};

  Fixture() {
    X = corpus_matrix(corpus);
    model = fit_em(X, {.family = Family::PKB, .K = 2, .eps = 1e-3, .max_iter = 50, .seed = 1}).model;
    l = assign(model, X);
  }
};

} // namespace

TEST_CASE("data risk") {
  const auto c = uniques_corpus(100, 20);
  const auto t = build_table(c);
  CHECK(data_risk(t, {}, 0.5) == 1.0);
  CHECK(data_risk(t, {"c3", "c7", "c105", "c110"}, 0.5) == 0.99);
  std::set<std::string> all;
  for (std::size_t i = 0; i < 100; ++i) all.insert(fmt::format("c{}", i));
  CHECK(data_risk(t, all, 1.0) == 0.0);
  CHECK(data_risk(t, all, 0.3) == Catch::Approx(0.7));
  CHECK_THROWS_AS(data_risk(t, {}, 1.5), DomainError);
  CHECK_THROWS_AS(data_risk(build_table(uniques_corpus(0, 5)), {}, 0.5), DomainError);
}

TEST_CASE("utility ratio") {
  CHECK(utility_ratio(50.0, 100.0) == 0.5);
  CHECK(utility_ratio(120.0, 100.0) == 1.0);
  CHECK(utility_ratio(-5.0, 100.0) == 0.0);
  CHECK_THROWS_AS(utility_ratio(1.0, 0.0), DomainError);
}

TEST_CASE("data utility") {
  Fixture f;
  CHECK(data_utility(f.model, f.l, f.X, f.X) == 1.0);

  std::mt19937_64 rng(2);
  UnitMatrix post = f.X;
  std::vector<Eigen::Index> changed{3, 17, 40};
  for (auto i : changed) post.row(i) = testing::uniform_on_sphere(4, rng).transpose();
  const double pre_cll = conditional_log_likelihood(f.model, f.X, f.l);
  REQUIRE(pre_cll > 0.0);

  // Difference over the changed rows only.
  double delta = 0.0;
  for (auto i : changed) {
    const auto& c = f.model.components[f.l[static_cast<std::size_t>(i)]];
    delta += log_density(f.model.family, post.row(i).transpose(), c, 4) -
             log_density(f.model.family, f.X.row(i).transpose(), c, 4);
  }
  const double expected = std::clamp(1.0 + delta / pre_cll, 0.0, 1.0);
  CHECK(std::abs(data_utility(f.model, f.l, f.X, post) - expected) <= 1e-12);

  // Moving one point to the antipode of its centre lowers utility.
  UnitMatrix far = f.X;
  far.row(0) = -f.model.components[f.l[0]].mu.transpose();
  CHECK(data_utility(f.model, f.l, f.X, far) < 1.0);
  CHECK_THROWS_AS(data_utility(f.model, f.l, f.X, f.X.topRows(5)), std::invalid_argument);
}

TEST_CASE("frontier examples") {
  const std::vector<RiskUtilityPoint> pts{pt(1, 1, 0, "a"), pt(0.95, 0.85, 0, "b"), pt(0.9, 0.8, 0, "c"),
                                          pt(0.9, 0.9, 0, "d")};
  const auto f = frontier(pts);
  REQUIRE(f.size() == 3);
  CHECK(f[0].release_id == "a");
  CHECK(f[1].release_id == "b");
  CHECK(f[2].release_id == "c");
  CHECK(frontier({pt(0.3, 0.4, 0, "x")}).size() == 1);
  CHECK(frontier({}).empty());
}

TEST_CASE("frontier equals the brute-force maximal set") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pts = random_points(200 + seed * 10, seed, seed % 2 == 1);
    const auto f = frontier(pts);
    CHECK(ids(f) == ids(testing::brute_force_frontier(pts)));
    for (std::size_t i = 1; i < f.size(); ++i) CHECK(f[i - 1].DU >= f[i].DU);
    for (const auto& p : f)
      for (const auto& q : pts) CHECK_FALSE(dominates(q, p));
    const auto keep = ids(f);
    for (const auto& p : pts) {
      if (keep.contains(p.release_id)) continue;
      CHECK(std::any_of(f.begin(), f.end(), [&](const auto& q) { return dominates(q, p); }));
    }
  }
}

TEST_CASE("optimal release") {
  const std::vector<RiskUtilityPoint> f{pt(1, 1, 0, "r0"), pt(0.95, 0.85, 5, "r5"), pt(0.7, 0.3, 20, "r20")};
  CHECK(optimal_release(f, {1e9, 0}).release_id == "r0");
  CHECK(optimal_release(f, {1e-9, 0}).release_id == "r20");
  // a = 1: DR - DU = 0, -0.1, -0.4. a = 2.5: -1.5, -1.525, -1.45.
  CHECK(optimal_release(f, {1.0, 0}).release_id == "r20");
  CHECK(optimal_release(f, {2.5, 0}).release_id == "r5");
  // Exact tie at a = 2 (both scores -1): higher DU wins, then fewer swaps.
  CHECK(optimal_release({pt(0.75, 0.5, 3, "low"), pt(1, 1, 0, "high")}, {2.0, 0}).release_id == "high");
  CHECK(optimal_release({pt(0.75, 0.5, 9, "late"), pt(0.75, 0.5, 3, "early")}, {2.0, 0}).release_id == "early");
  CHECK_THROWS_AS(optimal_release(f, {0.0, 0}), DomainError);
  CHECK_THROWS_AS(optimal_release({}, {1.0, 0}), std::invalid_argument);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto pts = random_points(100, seed, false);
    const auto front = frontier(pts);
    for (double a : {0.1, 0.5, 1.0, 2.0, 10.0}) {
      const auto best = optimal_release(front, {a, 0}).release_id;
      CHECK(optimal_release(pts, {a, 0}).release_id == best);
    }
  }
}

TEST_CASE("best utility under a risk bound") {
  const std::vector<RiskUtilityPoint> pts{pt(1, 1, 0, "r0"), pt(0.95, 0.85, 5, "r5"), pt(0.7, 0.3, 20, "r20")};
  CHECK(best_utility_under_risk(pts, 0.9)->release_id == "r5");
  CHECK(best_utility_under_risk(pts, 1.0)->release_id == "r0");
  CHECK_FALSE(best_utility_under_risk(pts, 0.1).has_value());
}

TEST_CASE("subsets in lexicographic order") {
  const auto s = subsets_of_size({"A", "B", "C", "D"}, 2);
  REQUIRE(s.size() == 6);
  CHECK(s.front() == std::vector<std::string>{"A", "B"});
  CHECK(s[2] == std::vector<std::string>{"A", "D"});
  CHECK(s.back() == std::vector<std::string>{"C", "D"});
  CHECK(subsets_of_size({"A"}, 2).empty());
}

TEST_CASE("Monte Carlo measures") {
  Fixture f;
  const auto table = build_table(f.corpus);
  const auto marginal = marginalize(table, {"Person"});
  MeasureContext ctx{f.corpus, table, marginal, f.model, f.l, f.X, 0.6, f.memo};
  Release rel;
  for (const auto& cat : f.corpus.categories) rel.roles[cat] = Role::U;
  rel.roles["Person"] = Role::S;
  rel.swap_count = 4;
  rel.seed = 10;

  const auto one = monte_carlo_measures(rel, 1, ctx);
  REQUIRE(one.draws.size() == 1);
  CHECK(one.mean_DU == one.draws[0].DU);
  CHECK(one.mean_DR == one.draws[0].DR);

  const auto a = monte_carlo_measures(rel, 3, ctx);
  const auto b = monte_carlo_measures(rel, 3, ctx);
  REQUIRE(a.draws.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(a.draws[m].DU == b.draws[m].DU);
    CHECK(a.draws[m].DR == b.draws[m].DR);
    CHECK(a.draws[m].DR >= 1.0 - 0.6);
  }
  CHECK(a.draws[0].DU == one.draws[0].DU);
  auto [lo, hi] = std::minmax({a.draws[0].DU, a.draws[1].DU, a.draws[2].DU});
  CHECK(a.mean_DU >= lo);
  CHECK(a.mean_DU <= hi);
  CHECK_THROWS_AS(monte_carlo_measures(rel, 0, ctx), std::invalid_argument);
}

TEST_CASE("sweep emits one point per prefix and population size") {
  Fixture f;
  SweepConfig cfg;
  cfg.s_eligible = {"Organization", "Person", "Product", "Location"};
  cfg.subset_size = 2;
  cfg.max_swaps = 6;
  cfg.N_grid = {1e6, 1e12};
  cfg.roles = {{"Event", Role::C}, {"Date", Role::F}};
  cfg.seed = 3;
  const auto res = sweep(f.corpus, f.model, f.l, cfg, f.memo);
  REQUIRE(res.reports.size() == 6);

  std::size_t expected = 0;
  for (const auto& r : res.reports) {
    if (!r.ok) continue;
    CHECK(r.swaps <= cfg.max_swaps);
    expected += (r.swaps + 1) * cfg.N_grid.size();
  }
  CHECK(res.points.size() == expected);
  CHECK(res.points.size() <= (6 * cfg.max_swaps + 6) * cfg.N_grid.size());

  std::map<std::pair<std::string, double>, std::vector<RiskUtilityPoint>> runs;
  for (const auto& p : res.points) {
    CHECK(p.DU >= 0.0);
    CHECK(p.DU <= 1.0);
    CHECK(p.DR >= 0.0);
    CHECK(p.DR <= 1.0);
    CHECK(p.r == Catch::Approx(2.0 * static_cast<double>(p.swap_count) / static_cast<double>(f.corpus.n())));
    CHECK(p.release_id == fmt::format("{}+{}:{}", p.J[0], p.J[1], p.swap_count));
    CHECK(p.family == "PKB");
    runs[{p.release_id.substr(0, p.release_id.find(':')), p.N}].push_back(p);
  }
  for (auto& [key, pts] : runs) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.swap_count < b.swap_count; });
    CHECK(pts.front().swap_count == 0);
    CHECK(pts.front().DU == 1.0);
    CHECK(pts.front().DR == 1.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].swap_count == i);
      CHECK(pts[i].DR <= pts[i - 1].DR);
      CHECK(pts[i].DU <= pts[i - 1].DU);
    }
  }

  SECTION("thread count does not change the output") {
    auto threaded = cfg;
    threaded.threads = 3;
    EmbeddingMemo memo{ProviderConfig{.kind = ProviderKind::DeterministicStub, .d = 4}};
    CHECK(sweep_csv(sweep(f.corpus, f.model, f.l, threaded, memo).points) == sweep_csv(res.points));
  }
  SECTION("CSV round trip") {
    const auto csv = sweep_csv(res.points);
    const auto back = sweep_from_csv(csv);
    REQUIRE(back.size() == res.points.size());
    CHECK(sweep_csv(back) == csv);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].release_id == res.points[i].release_id);
    CHECK_THROWS_AS(sweep_from_csv("J,DU\n"), ParseError);
  }
  SECTION("a short run is truncated") {
    auto greedy = cfg;
    greedy.max_swaps = 1000;
    EmbeddingMemo memo{ProviderConfig{.kind = ProviderKind::DeterministicStub, .d = 4}};
    const auto big = sweep(f.corpus, f.model, f.l, greedy, memo);
    for (const auto& r : big.reports)
      if (r.ok) CHECK(r.exhausted);
  }
}

TEST_CASE("sweep skips subsets without sample uniques") {
  Corpus c;
  c.categories = {"Person", "Product"};
  c.d = 2;
  for (int i = 0; i < 6; ++i)
    c.chunks.push_back({fmt::format("c{}", i), fmt::format("d{}", i), "Same text here.", {}, {1.0, 0.0}, {}});
  MixtureModel m{Family::PKB, 2, 0.0, {1.0}, {{Vector::Unit(2, 0), 0.5}}};
  SweepConfig cfg;
  cfg.s_eligible = {"Person", "Product"};
  cfg.N_grid = {1e6};
  EmbeddingMemo memo{ProviderConfig{.kind = ProviderKind::DeterministicStub, .d = 2}};
  const auto res = sweep(c, m, Memberships(6, 0), cfg, memo);
  REQUIRE(res.reports.size() == 1);
  CHECK_FALSE(res.reports[0].ok);
  CHECK(res.points.empty());
  CHECK(report_to_json(res.reports[0]).contains("reason"));
}
