// Seeded parallel Monte Carlo engine and the statistical estimators that
// confront the phase structure: speed, escape probability, crossing-time
// tails, leftover-cookie density, excursion census, lemma bounds.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "erw/env.hpp"
#include "erw/walk.hpp"

namespace erw {

struct ReplicaPlan {
  EnvSpecPtr env;
  StoppingCondition stop = StoppingCondition::time_horizon(1'000'000);
  int64_t budget = 1'000'000;  // hard per-replica step cap
  int replicas = 1;
  uint64_t base_seed = 1;
  RecordFlags flags;
  Site start = 0;
};

struct EstimateWithCI {
  double value = 0;
  double stderr_ = 0;
  int64_t n = 0;
  std::string method;             // "mean" | "wilson" | "hill" | "exact"
  double censored_fraction = 0;

  double lower(double z) const { return value - z * stderr_; }
  double upper(double z) const { return value + z * stderr_; }
};

// Wilson score interval bounds for k successes out of n at z sigmas.
double wilson_lower(int64_t k, int64_t n, double z);
double wilson_upper(int64_t k, int64_t n, double z);
EstimateWithCI proportion_estimate(int64_t k, int64_t n);
EstimateWithCI mean_estimate(const std::vector<double>& xs);

// Hill tail-index estimator on the top `top_frac` order statistics, at
// least k_min of them. Returns alpha_hat with stderr alpha/sqrt(k).
EstimateWithCI hill_estimator(std::vector<double> xs, double top_frac = 0.05, int k_min = 50);

struct PhasePoint {
  int M = 0;
  double p = 0;
  int64_t horizon = 0;
  EstimateWithCI speed, escape, leftover, tail_alpha;
  bool leftover_flagged = false;  // margin violated or regime recurrent
  bool tail_flagged = false;

  double delta() const { return M * (2 * p - 1); }
};

// Runs the plan's replicas (walk seed = derive(base_seed, "walk", i)) and
// hands each finished replica to `sink` while its environment state is
// still alive. Sinks run concurrently on distinct replica indices; output
// must depend only on the index. workers <= 0 means hardware concurrency.
void for_each_replica(const ReplicaPlan& plan, int workers,
                      const std::function<void(int, const TrajectoryRecord&, EnvironmentState&)>& sink);

// Convenience wrapper collecting one extracted value per replica, in
// replica order regardless of scheduling.
template <typename T>
std::vector<T> map_replicas(const ReplicaPlan& plan, int workers,
                            const std::function<T(const TrajectoryRecord&, EnvironmentState&)>& extract) {
  std::vector<T> out(static_cast<size_t>(plan.replicas));
  for_each_replica(plan, workers,
                   [&](int i, const TrajectoryRecord& rec, EnvironmentState& env) {
                     out[static_cast<size_t>(i)] = extract(rec, env);
                   });
  return out;
}

std::vector<TrajectoryRecord> run_replicas(const ReplicaPlan& plan, int workers = 0);

// Mean X_n/n with CI at each horizon (plan.stop/budget are overridden to the
// largest horizon; positions are snapshot at every requested horizon).
std::vector<EstimateWithCI> speed_estimate(const ReplicaPlan& plan,
                                           const std::vector<int64_t>& horizons, int workers = 0);

// Mean T_R/R (inverse level speed) for each level; censored replicas are
// excluded and reported in censored_fraction.
std::vector<EstimateWithCI> level_speed_estimate(const ReplicaPlan& plan,
                                                 const std::vector<Site>& levels, int workers = 0);

// E[(T_V / V) ^ m]: censored replicas contribute exactly m (the budget is
// raised to at least m*V so censoring implies T_V/V >= m).
EstimateWithCI truncated_crossing_mean(const ReplicaPlan& plan, Site V, double m, int workers = 0);

struct CrossingTail {
  std::vector<std::pair<int64_t, EstimateWithCI>> survival;  // P(T_{x+1}-T_x >= m)
  EstimateWithCI hill;
  int64_t crossings = 0;
  bool low_power = false;  // fewer than 100 pooled crossings
  bool vacuous = false;    // homogeneous plan with delta <= 1
};

CrossingTail crossing_tail(const ReplicaPlan& plan, Site x_lo, Site x_hi,
                           const std::vector<int64_t>& m_grid, int workers = 0);

// Mean leftover cookies per site over [s_lo, s_hi]; replicas stop at
// HitLevel(s_hi + margin) and censored ones are excluded (flagged).
EstimateWithCI leftover_density(const ReplicaPlan& plan, Site s_lo, Site s_hi,
                                Site margin = 500, int workers = 0);

struct ExcursionCensus {
  std::vector<double> c_l;        // c(l), l = 0..k0
  double frac_le_k0 = 0;          // density of sites making <= k0 excursions
  int64_t sites = 0;
  std::map<int, EstimateWithCI> g_density;  // R -> density of g_R(x) = 1
  double censored_fraction = 0;
};

ExcursionCensus excursion_census(const ReplicaPlan& plan, Site s_lo, Site s_hi, int k0,
                                 const std::vector<int>& g_exponents, Site margin = 500,
                                 int workers = 0);

enum class LemmaId { L1, L3, L4, L5, Cor1, Comp0, Comp2 };

std::optional<LemmaId> lemma_from_string(const std::string& name);
const char* lemma_name(LemmaId id);

struct LemmaReport {
  std::string lemma;
  std::map<std::string, double> params;  // resolved parameters
  EstimateWithCI empirical;
  double bound = 0;
  bool pass = false;
  std::string note;
};

// Builds the lemma's environment class instance, runs the Monte Carlo (or
// the exact oracle where the window is small) and compares against the
// stated bound; pass = the bound direction holds within 3 stderr.
LemmaReport verify_lemma_bound(LemmaId id, std::map<std::string, double> params,
                               uint64_t seed = 1, int workers = 0);

std::string lemma_report_to_json(const LemmaReport& report, int indent = -1);

// The fixed phase grid of the acceptance sweep plus arbitrary grids.
struct SweepRequest {
  std::vector<std::pair<int, double>> grid;  // (M, p)
  std::vector<int64_t> horizons = {10'000, 100'000};
  int replicas = 500;
  int escape_replicas = 500;
  int64_t budget = 1'000'000;
  uint64_t base_seed = 1;
  Site escape_level = 50;
};

std::vector<PhasePoint> phase_sweep(const SweepRequest& request, int workers = 0);
std::string sweep_to_csv(const std::vector<PhasePoint>& points);

// Escape proxy for one (env, seed): P(no return to 0 within budget after
// reaching `level`).
EstimateWithCI escape_probability(const ReplicaPlan& plan, Site level = 50, int workers = 0);

}  // namespace erw
