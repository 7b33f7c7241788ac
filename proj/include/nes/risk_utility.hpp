#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nes/contingency.hpp"
#include "nes/corpus.hpp"
#include "nes/embedding.hpp"
#include "nes/ewens_pitman.hpp"
#include "nes/spherical_mixture.hpp"
#include "nes/swap_engine.hpp"

namespace nes {

struct RiskUtilityPoint {
  std::string release_id;
  std::vector<std::string> J;
  std::size_t swap_count = 0;
  double r = 0.0;  // share of chunks swapped
  double DU = 1.0;
  double DR = 1.0;
  std::uint64_t seed = 0;
  double N = 0.0;
  std::string family;
  std::size_t K = 0;
  double eps = 0.0;
};

/// The line DR = c + a * DU.
struct TradeoffLine {
  double a = 1.0;
  double c = 0.0;
};

/// Remaining risk after swapping `swapped_ids`, relative to the unswapped data.
double data_risk(const ContingencyTable& pre_marginal, const std::set<std::string>& swapped_ids, double p_hat);

/// Ratio of conditional log-likelihoods after and before swapping, both under
/// the pre-swap model and memberships; clamped to [0, 1].
double data_utility(const MixtureModel& model, const Memberships& l, const UnitMatrix& pre_X, const UnitMatrix& post_X);
/// Same ratio from precomputed conditional log-likelihoods.
double utility_ratio(double post_cll, double pre_cll);

/// Maximal points under "lower DR and higher DU", sorted by DU descending.
std::vector<RiskUtilityPoint> frontier(const std::vector<RiskUtilityPoint>& points);

/// Point minimising DR - a * DU; ties go to higher DU, then fewer swaps.
RiskUtilityPoint optimal_release(const std::vector<RiskUtilityPoint>& points, const TradeoffLine& line);

/// Highest-DU point with DR <= max_dr, if any.
std::optional<RiskUtilityPoint> best_utility_under_risk(const std::vector<RiskUtilityPoint>& points, double max_dr);

/// Stacks chunk embeddings; throws ValidationError if any is missing.
UnitMatrix corpus_matrix(const Corpus& corpus);

/// Embeds every chunk lacking an embedding; returns how many were filled.
std::size_t reembed_stale(Corpus& corpus, EmbeddingMemo& memo);

/// Everything fixed across swap runs of one category subset.
struct MeasureContext {
  const Corpus& corpus;            // pre-swap corpus, embeddings present
  const ContingencyTable& table;   // over all categories of `corpus`
  const ContingencyTable& marginal;
  const MixtureModel& model;
  const Memberships& memberships;
  const UnitMatrix& pre_X;
  double p_hat;
  EmbeddingMemo& memo;
};

struct Measures {
  double DU = 1.0;
  double DR = 1.0;
};

Measures measure_state(const MeasureContext& ctx, const SwapState& state);

struct MonteCarloResult {
  double mean_DU = 1.0;
  double mean_DR = 1.0;
  std::vector<Measures> draws;
};

/// Runs the release M times with seeds seed, seed+1, ..., seed+M-1.
MonteCarloResult monte_carlo_measures(const Release& release, std::size_t M, const MeasureContext& ctx);

struct SweepConfig {
  std::vector<std::string> s_eligible;
  std::size_t subset_size = 2;
  std::size_t max_swaps = 30;
  std::vector<double> N_grid;
  // Roles for categories outside the swapped subset; missing ones are U.
  std::map<std::string, Role> roles;
  // Placeholder per C category; "[Category]" when absent.
  std::map<std::string, std::string> placeholders;
  bool same_cluster = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct SubsetReport {
  std::vector<std::string> J;
  bool ok = false;
  std::string reason;
  std::size_t n = 0, k = 0, s1 = 0;
  std::optional<MleFit> fit;
  std::vector<PopulationEstimate> estimates;
  std::size_t swaps = 0;
  bool exhausted = false;
};

struct SweepResult {
  std::vector<RiskUtilityPoint> points;
  std::vector<SubsetReport> reports;
};

/// All subsets of `items` of the given size, in lexicographic index order.
std::vector<std::vector<std::string>> subsets_of_size(const std::vector<std::string>& items, std::size_t size);

/// Suppresses the C categories of `config` (placeholders from config) and
/// re-embeds the chunks whose text changed.
Corpus prepare_for_release(const Corpus& corpus, const SweepConfig& config, EmbeddingMemo& memo);

/// For each subset J, one sequential run of up to max_swaps swaps; emits a
/// point per prefix and per N, plus a zero-swap anchor per J and N.
SweepResult sweep(const Corpus& corpus, const MixtureModel& model, const Memberships& memberships,
                  const SweepConfig& config, EmbeddingMemo& memo);

std::string sweep_csv(const std::vector<RiskUtilityPoint>& points);
std::vector<RiskUtilityPoint> sweep_from_csv(const std::string& csv);
nlohmann::json point_to_json(const RiskUtilityPoint& p);
nlohmann::json report_to_json(const SubsetReport& r);

} // namespace nes
