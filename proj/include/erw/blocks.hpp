// Block renormalization of the weakly biased walk: block intervals
// rL/eps + [-kappa/eps, kappa/eps], the events A1/A2, the extracted block
// process Z_n with stopping times tau_n, and the coupling against a coarse
// cookie walk.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "erw/env.hpp"
#include "erw/estimators.hpp"
#include "erw/walk.hpp"

namespace erw {

struct BlockConfig {
  double eps = 0.05;   // fine-walk bias: p = 1/2 + eps
  double kappa = 0.2;
  double L = 4;        // block pitch
  double v = 4;        // per-epoch visit threshold v/eps
  int M0 = 4;          // cookie count of the coarse comparison walk
  double c1 = 0.05;    // coarse-walk drift margin: p_coarse = 1/2 + c1*kappa

  // Integer scalings (rounded, >= 1).
  Site kappa_sites() const;
  Site pitch_sites() const;     // L/eps
  int64_t visit_threshold() const;  // v/eps
  int fine_cookies() const;     // M0 * v/eps cookies per site of the fine walk
  double fine_p() const { return 0.5 + eps; }
  double coarse_p() const { return 0.5 + c1 * kappa; }
  // Slack in block units for the domination inequality.
  double kappa1() const { return 1.0 + kappa / L; }

  void validate() const;
};

enum class TauRule { VisitThreshold, LeftEdge, RightNearEdge, RightFarEdge, None };

const char* tau_rule_name(TauRule r);

struct BlockStep {
  int64_t tau = 0;   // fine-walk time of this stopping point
  int64_t z = 0;     // block index Z_n
  TauRule rule = TauRule::None;
  int64_t l = 0;     // coarse clock l(n) (filled by coupled_run)
};

struct BlockTrace {
  std::vector<BlockStep> steps;  // steps[0] = (tau_0 = 0, Z_0 = 0)
  bool censored = false;         // fine trajectory ended mid-epoch

  // Conditional advance tallies keyed by the current block's visit tally
  // (including the current visit): <= M0 vs > M0.
  int64_t adv_under = 0, tot_under = 0;
  int64_t adv_over = 0, tot_over = 0;

  double max_tau_over_n() const;
};

std::string block_trace_to_csv(const BlockTrace& trace);

struct EventProbabilities {
  double p_a1_min = 0;           // exact, min over integer starts in the region
  Site argmin_start = 0;
  std::vector<double> p_a1_by_start;
  EstimateWithCI p_a2;           // max-over-starts Monte Carlo estimate
  double p_a2_upper = 1;         // max-over-starts Wilson upper bound (3 sigma)
  double p_a_lower = 0;          // min P_A1 - upper P_A2
};

// P_A1 exactly via the birth-death formula for every integer start in the
// biased region; P_A2 (some site visited more than v/eps times before the
// right target, within the A1 race window) by Monte Carlo.
EventProbabilities event_probabilities(const BlockConfig& config, int replicas = 30'000,
                                       uint64_t seed = 1, int workers = 0);

// One Monte Carlo pass reporting the A2 probability for every v in
// [1, v_max] at once (per start, max over starts).
struct A2Sweep {
  std::vector<double> p_by_v;        // index v-1
  std::vector<double> upper_by_v;    // Wilson 3-sigma upper, max over starts
  int64_t replicas_per_start = 0;
};
A2Sweep a2_sweep(const BlockConfig& config, int v_max, int replicas = 30'000, uint64_t seed = 1,
                 int workers = 0);

// Replays a fine-walk position path, computing the stopping times tau_n by
// the visit-threshold / edge-touch case split, and returns the block trace.
BlockTrace extract_blocks(const std::vector<Site>& path, const BlockConfig& config);

struct CoupledRun {
  BlockTrace fine;
  std::vector<int64_t> coarse_positions;  // coarse walk at its own clock
  bool domination_ok = true;   // eps*X^eps_{tau_n}/L - X_{l(n)} >= -kappa1 throughout
  bool meeting_resolved = true;
  int precondition_violations = 0;  // coarse step prob above regime bound
  double max_tau_over_n = 0;
  double min_domination_gap = 0;
};

// Runs the fine walk to `horizon`, extracts blocks on the fly, and couples
// the coarse M0-cookie walk so that a coarse right-step implies a block
// advance; l(n) increments on match, else runs the coarse walk to the first
// later meeting time.
CoupledRun coupled_run(const BlockConfig& config, int64_t horizon, uint64_t seed);

struct CalibrationResult {
  bool ok = false;
  double L = 0, kappa = 0, eps_max = 0, v = 0;
  int M0 = 0;
  double c0 = 0, c1 = 0;
  double p_a1_min = 0, p_a2_max = 0, margin = 0;
  std::string note;
};

struct CalibrationSearch {
  std::vector<double> Ls = {4, 2, 8};
  std::vector<double> kappas = {0.2, 0.1};
  std::vector<double> epss = {0.05, 0.02, 0.01};
  // Per-site visit counts in the race scale like L/eps, so the sufficient
  // v is of order several times L; the sweep is one sample pass whatever
  // the cap.
  int v_max = 64;
  int replicas = 30'000;
  double margin_coeff = 0.05;  // require min P_A1 - upper P_A2 >= 1/2 + coeff*kappa
};

// Finds a validated (L, kappa, eps, v) tuple: exact A1 margin plus the A2
// sweep below e^{-1/kappa}, and derives c0, c1 and M0 from it.
CalibrationResult calibrate(const CalibrationSearch& search = {}, uint64_t seed = 1,
                            int workers = 0);

std::string calibration_to_json(const CalibrationResult& result, int indent = -1);
CalibrationResult calibration_from_json(const std::string& text);

}  // namespace erw
