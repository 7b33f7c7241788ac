#include "nes/risk_utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nes/error.hpp"
#include "nes/parallel.hpp"
#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

double data_risk(const ContingencyTable& pre_marginal, const std::set<std::string>& swapped_ids, double p_hat) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw DomainError(fmt::format("p_hat = {} is not a proportion", p_hat));
  std::size_t s1 = 0, hit = 0;
  for (const auto& [key, cell] : pre_marginal.cells) {
    if (cell.count != 1) continue;
    ++s1;
    if (swapped_ids.contains(cell.chunk_ids.front())) ++hit;
  }
  if (s1 == 0) throw DomainError("the marginal has no sample uniques; risk is undefined");
  const double s = static_cast<double>(s1);
  return (s - static_cast<double>(hit) * p_hat) / s;
}

double utility_ratio(double post_cll, double pre_cll) {
  if (pre_cll == 0.0) throw DomainError("pre-swap conditional log-likelihood is zero; utility is undefined");
  const double du = post_cll / pre_cll;
  if (du > 1.0 || du < 0.0) {
    spdlog::warn("utility ratio {:.6g} outside [0, 1]; clamped", du);
    return std::clamp(du, 0.0, 1.0);
  }
  return du;
}

double data_utility(const MixtureModel& model, const Memberships& l, const UnitMatrix& pre_X, const UnitMatrix& post_X) {
  if (pre_X.rows() != post_X.rows() || pre_X.cols() != post_X.cols())
    throw std::invalid_argument("pre- and post-swap embeddings differ in shape");
  return utility_ratio(conditional_log_likelihood(model, post_X, l), conditional_log_likelihood(model, pre_X, l));
}

std::vector<RiskUtilityPoint> frontier(const std::vector<RiskUtilityPoint>& points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].DU != points[b].DU) return points[a].DU > points[b].DU;
    return points[a].DR < points[b].DR;
  });
  std::vector<RiskUtilityPoint> out;
  double best_dr = std::numeric_limits<double>::infinity();  // over strictly higher DU
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    while (end < order.size() && points[order[end]].DU == points[order[g]].DU) ++end;
    const double group_min = points[order[g]].DR;
    if (group_min < best_dr)
      for (std::size_t i = g; i < end && points[order[i]].DR == group_min; ++i) out.push_back(points[order[i]]);
    best_dr = std::min(best_dr, group_min);
    g = end;
  }
  return out;
}

RiskUtilityPoint optimal_release(const std::vector<RiskUtilityPoint>& points, const TradeoffLine& line) {
  if (points.empty()) throw std::invalid_argument("optimal_release needs at least one point");
  if (!(line.a > 0.0)) throw DomainError("trade-off slope must be positive");
  const RiskUtilityPoint* best = &points.front();
  auto score = [&](const RiskUtilityPoint& p) { return p.DR - line.a * p.DU; };
  for (const auto& p : points) {
    const double sp = score(p), sb = score(*best);
    if (sp < sb || (sp == sb && (p.DU > best->DU || (p.DU == best->DU && p.swap_count < best->swap_count))))
      best = &p;
  }
  return *best;
}

std::optional<RiskUtilityPoint> best_utility_under_risk(const std::vector<RiskUtilityPoint>& points, double max_dr) {
  std::optional<RiskUtilityPoint> best;
  for (const auto& p : points)
    if (p.DR <= max_dr && (!best || p.DU > best->DU || (p.DU == best->DU && p.DR < best->DR))) best = p;
  return best;
}

UnitMatrix corpus_matrix(const Corpus& corpus) {
  UnitMatrix X(static_cast<Eigen::Index>(corpus.n()), static_cast<Eigen::Index>(corpus.d));
  for (std::size_t i = 0; i < corpus.n(); ++i) {
    const auto& e = corpus.chunks[i].embedding;
    if (e.size() != corpus.d)
      throw ValidationError(fmt::format("chunk '{}' has no current embedding", corpus.chunks[i].id));
    for (std::size_t j = 0; j < corpus.d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = e[j];
  }
  return X;
}

std::size_t reembed_stale(Corpus& corpus, EmbeddingMemo& memo) {
  std::vector<EmbeddingRequest> reqs;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < corpus.n(); ++i) {
    if (corpus.chunks[i].has_embedding()) continue;
    reqs.push_back({corpus.chunks[i].id, corpus.chunks[i].text});
    idx.push_back(i);
  }
  if (reqs.empty()) return 0;
  auto vecs = memo.embed(reqs);
  for (std::size_t k = 0; k < idx.size(); ++k) corpus.chunks[idx[k]].embedding = std::move(vecs[k]);
  return idx.size();
}

namespace {

// Post-swap embedding matrix: pre-swap rows, with swapped chunks re-embedded.
UnitMatrix post_matrix(const MeasureContext& ctx, const SwapState& state) {
  UnitMatrix X = ctx.pre_X;
  std::vector<EmbeddingRequest> reqs;
  std::vector<std::size_t> idx;
  for (const auto& id : state.swapped_chunk_ids) {
    const auto i = state.corpus.index_of(id);
    reqs.push_back({id, state.corpus.chunks[i].text});
    idx.push_back(i);
  }
  if (reqs.empty()) return X;
  const auto vecs = ctx.memo.embed(reqs);
  for (std::size_t k = 0; k < idx.size(); ++k)
    X.row(static_cast<Eigen::Index>(idx[k])) = Eigen::Map<const Vector>(vecs[k].data(), X.cols()).transpose();
  return X;
}

} // namespace

Measures measure_state(const MeasureContext& ctx, const SwapState& state) {
  Measures m;
  m.DR = data_risk(ctx.marginal, state.swapped_chunk_ids, ctx.p_hat);
  m.DU = data_utility(ctx.model, ctx.memberships, ctx.pre_X, post_matrix(ctx, state));
  return m;
}

MonteCarloResult monte_carlo_measures(const Release& release, std::size_t M, const MeasureContext& ctx) {
  if (M == 0) throw std::invalid_argument("monte_carlo_measures needs M >= 1");
  MonteCarloResult res;
  double du = 0.0, dr = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    Release draw = release;
    draw.seed = release.seed + m;
    const auto traj = sequential_swap(ctx.corpus, ctx.table, ctx.memberships, draw);
    res.draws.push_back(measure_state(ctx, traj.state));
    du += res.draws.back().DU;
    dr += res.draws.back().DR;
  }
  res.mean_DU = du / static_cast<double>(M);
  res.mean_DR = dr / static_cast<double>(M);
  return res;
}

std::vector<std::vector<std::string>> subsets_of_size(const std::vector<std::string>& items, std::size_t size) {
  std::vector<std::vector<std::string>> out;
  if (size == 0 || size > items.size()) return out;
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    std::vector<std::string> s;
    for (auto i : idx) s.push_back(items[i]);
    out.push_back(std::move(s));
    std::size_t pos = size;
    while (pos > 0 && idx[pos - 1] == items.size() - size + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t j = pos; j < size; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

Corpus prepare_for_release(const Corpus& corpus, const SweepConfig& config, EmbeddingMemo& memo) {
  Corpus out = corpus;
  for (const auto& [cat, role] : config.roles) {
    if (role != Role::C) continue;
    auto it = config.placeholders.find(cat);
    out = suppress_category(out, cat, it != config.placeholders.end() ? it->second : fmt::format("[{}]", cat));
  }
  const std::size_t refreshed = reembed_stale(out, memo);
  if (refreshed > 0) spdlog::warn("re-embedded {} chunks whose text changed before swapping", refreshed);
  return out;
}

namespace {

std::string subset_name(const std::vector<std::string>& J) { return text::join(J, "+"); }

struct SubsetOutput {
  SubsetReport report;
  std::vector<RiskUtilityPoint> points;
};

SubsetOutput run_subset(const Corpus& corpus, const ContingencyTable& table, const UnitMatrix& pre_X,
                        const MixtureModel& model, const Memberships& l, const SweepConfig& config,
                        const std::vector<std::string>& J, EmbeddingMemo& memo) {
  SubsetOutput out;
  auto& rep = out.report;
  rep.J = J;
  const auto name = subset_name(J);
  const auto marginal = marginalize(table, J);
  const auto counts = frequency_counts(marginal);
  rep.n = counts.n;
  rep.k = counts.k;
  rep.s1 = counts.s_of(1);
  if (rep.s1 == 0) {
    rep.reason = "marginal has no sample uniques";
    return out;
  }
  try {
    rep.fit = fit_mle(counts);
    for (double N : config.N_grid) rep.estimates.push_back(pop_unique_ratio(rep.fit->params, N, rep.n, rep.s1));
  } catch (const std::exception& e) {
    rep.reason = fmt::format("population model failed: {}", e.what());
    rep.fit.reset();
    rep.estimates.clear();
    return out;
  }

  Release release;
  release.swap_count = config.max_swaps;
  release.seed = config.seed;
  release.constraints.same_cluster = config.same_cluster;
  for (const auto& cat : corpus.categories) {
    auto it = config.roles.find(cat);
    Role role = it != config.roles.end() && it->second != Role::S ? it->second : Role::U;
    if (std::find(J.begin(), J.end(), cat) != J.end()) role = Role::S;
    release.roles[cat] = role;
  }
  const auto traj = sequential_swap(corpus, table, l, release);
  rep.swaps = traj.pairs.size();
  rep.exhausted = traj.exhausted;
  if (traj.exhausted)
    spdlog::warn("{}: ran out of valid pairs after {} of {} swaps", name, traj.pairs.size(), config.max_swaps);

  // A chunk swaps at most once per run, so its final text is its text at
  // every prefix that includes its swap.
  std::vector<EmbeddingRequest> reqs;
  for (const auto& [a, b] : traj.pairs) {
    reqs.push_back({a, traj.state.corpus.chunks[corpus.index_of(a)].text});
    reqs.push_back({b, traj.state.corpus.chunks[corpus.index_of(b)].text});
  }
  const auto vecs = memo.embed(reqs);

  const double pre_cll = conditional_log_likelihood(model, pre_X, l);
  UnitMatrix post_X = pre_X;
  std::set<std::string> swapped;
  auto emit = [&](std::size_t t, double du, const std::set<std::string>& ids) {
    for (std::size_t g = 0; g < config.N_grid.size(); ++g) {
      RiskUtilityPoint p;
      p.release_id = fmt::format("{}:{}", name, t);
      p.J = J;
      p.swap_count = t;
      p.r = 2.0 * static_cast<double>(t) / static_cast<double>(corpus.n());
      p.DU = du;
      p.DR = t == 0 ? 1.0 : data_risk(marginal, ids, rep.estimates[g].p_hat);
      p.seed = config.seed;
      p.N = config.N_grid[g];
      p.family = to_string(model.family);
      p.K = model.K();
      p.eps = model.eps;
      out.points.push_back(std::move(p));
    }
  };
  emit(0, 1.0, swapped);
  for (std::size_t t = 0; t < traj.pairs.size(); ++t) {
    for (std::size_t side = 0; side < 2; ++side) {
      const auto& id = side == 0 ? traj.pairs[t].first : traj.pairs[t].second;
      const auto& v = vecs[2 * t + side];
      post_X.row(static_cast<Eigen::Index>(corpus.index_of(id))) =
          Eigen::Map<const Vector>(v.data(), post_X.cols()).transpose();
      swapped.insert(id);
    }
    emit(t + 1, utility_ratio(conditional_log_likelihood(model, post_X, l), pre_cll), swapped);
  }
  rep.ok = true;
  return out;
}

} // namespace

SweepResult sweep(const Corpus& corpus, const MixtureModel& model, const Memberships& memberships,
                  const SweepConfig& config, EmbeddingMemo& memo) {
  if (config.N_grid.empty()) throw ValidationError("sweep needs at least one population size N");
  for (const auto& cat : config.s_eligible)
    if (!corpus.has_category(cat)) throw ValidationError(fmt::format("unknown category '{}'", cat));
  const Corpus prepared = prepare_for_release(corpus, config, memo);
  const auto table = build_table(prepared);
  const UnitMatrix pre_X = corpus_matrix(prepared);

  const auto subsets = subsets_of_size(config.s_eligible, config.subset_size);
  std::vector<SubsetOutput> outputs(subsets.size());
  parallel_for(subsets.size(), config.threads, [&](std::size_t s) {
    try {
      outputs[s] = run_subset(prepared, table, pre_X, model, memberships, config, subsets[s], memo);
    } catch (const std::exception& e) {
      outputs[s] = {};
      outputs[s].report.J = subsets[s];
      outputs[s].report.reason = e.what();
    }
  });

  SweepResult res;
  for (auto& o : outputs) {
    if (!o.report.ok) spdlog::warn("skipping {}: {}", subset_name(o.report.J), o.report.reason);
    res.points.insert(res.points.end(), o.points.begin(), o.points.end());
    res.reports.push_back(std::move(o.report));
  }
  return res;
}

std::string sweep_csv(const std::vector<RiskUtilityPoint>& points) {
  std::string out = "J,swap_count,r,DU,DR,seed,N,family,K,eps\n";
  for (const auto& p : points)
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{},{:.17g},{},{},{:.17g}\n", subset_name(p.J), p.swap_count, p.r,
                       p.DU, p.DR, p.seed, p.N, p.family, p.K, p.eps);
  return out;
}

std::vector<RiskUtilityPoint> sweep_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "J,swap_count,r,DU,DR,seed,N,family,K,eps")
    throw ParseError("sweep CSV header is missing or unexpected");
  std::vector<RiskUtilityPoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(text::trim(line));
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw ParseError(fmt::format("sweep CSV line {}: expected 10 fields", lineno));
    try {
      RiskUtilityPoint p;
      std::istringstream js(f[0]);
      for (std::string c; std::getline(js, c, '+');) p.J.push_back(c);
      p.swap_count = std::stoull(f[1]);
      p.r = std::stod(f[2]);
      p.DU = std::stod(f[3]);
      p.DR = std::stod(f[4]);
      p.seed = std::stoull(f[5]);
      p.N = std::stod(f[6]);
      p.family = f[7];
      p.K = std::stoull(f[8]);
      p.eps = std::stod(f[9]);
      p.release_id = fmt::format("{}:{}", f[0], p.swap_count);
      out.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw ParseError(fmt::format("sweep CSV line {}: malformed number", lineno));
    }
  }
  return out;
}

json point_to_json(const RiskUtilityPoint& p) {
  return {{"release_id", p.release_id}, {"J", p.J},           {"swap_count", p.swap_count}, {"r", p.r},
          {"DU", p.DU},                 {"DR", p.DR},         {"seed", p.seed},             {"N", p.N},
          {"family", p.family},         {"K", p.K},           {"eps", p.eps}};
}

json report_to_json(const SubsetReport& r) {
  json j{{"J", r.J}, {"ok", r.ok}, {"n", r.n}, {"k", r.k}, {"s1", r.s1}, {"swaps", r.swaps}, {"exhausted", r.exhausted}};
  if (!r.reason.empty()) j["reason"] = r.reason;
  if (r.fit) j["fit"] = fit_to_json(*r.fit);
  json est = json::array();
  for (const auto& e : r.estimates)
    est.push_back({{"N", e.N}, {"S1_hat", e.S1_hat}, {"p_hat", e.p_hat}, {"raw", e.raw}, {"clamped", e.clamped}});
  j["estimates"] = est;
  return j;
}

} // namespace nes
