// The excited random walk itself: transition rule, stopping conditions,
// trajectory recording (hit times, visits, excursions, martingale parts).
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "erw/env.hpp"
#include "erw/rng.hpp"
#include "erw/site_array.hpp"

namespace erw {

struct StoppingCondition {
  enum class Kind { HitLevel, TimeHorizon, VisitCount, CookiesEaten, SecondPassage, FirstOf };

  Kind kind = Kind::TimeHorizon;
  Site level = 0;        // HitLevel
  int64_t n_max = 0;     // TimeHorizon
  Site site = 0;         // VisitCount
  int64_t threshold = 0; // VisitCount / CookiesEaten
  Site from_level = 0;   // SecondPassage: stop at T_to^from
  Site to_level = 0;
  std::vector<StoppingCondition> children;  // FirstOf, non-empty

  static StoppingCondition hit_level(Site level);
  static StoppingCondition time_horizon(int64_t n_max);
  static StoppingCondition visit_count(Site site, int64_t threshold);
  static StoppingCondition cookies_eaten(int64_t threshold);
  static StoppingCondition second_passage(Site from, Site to);
  static StoppingCondition first_of(std::vector<StoppingCondition> conditions);

  std::string describe() const;
};

struct RecordFlags {
  bool track_excursions = false;
  int excursion_cap = 64;            // k0 used by the g-flag tracker
  std::vector<int> g_exponents;      // track hits of x - 2^R within first k0 excursions
  bool samples_geometric = true;     // record (n, X_n, D_n) at n in {1,2,4,...}
  std::vector<int64_t> sample_points;               // extra explicit sample times
  std::vector<std::pair<Site, Site>> second_passages;  // (R, S) pairs to time
  bool track_path = false;           // full position sequence (memory heavy)
  bool leftover_snapshot = false;    // per-site leftover cookies at termination
  Site leftover_lo = 0, leftover_hi = -1;  // snapshot range; lo > hi = visited range
};

struct PositionSample {
  int64_t n = 0;
  Site x = 0;
  double drift = 0;
};

enum class Termination { HitLevel, TimeHorizon, VisitCount, CookiesEaten, SecondPassage, Censored };

const char* termination_name(Termination t);

struct TrajectoryRecord {
  Termination termination = Termination::Censored;
  int fired_index = -1;  // index of the FirstOf child that triggered, else 0

  Site final_x = 0;
  int64_t final_n = 0;
  double final_drift = 0;
  int64_t cookies_eaten = 0;
  Site min_x = 0, max_x = 0;

  SiteArray<int64_t> first_hit{-1};  // T_R, first n >= 1 with X_n = R
  SiteArray<uint32_t> visits;        // N_x, occupation counts incl. time 0
  SiteArray<uint32_t> excursions;    // left-jump counts from x (if tracked)
  SiteArray<uint32_t> leftover;      // cookies left per site at termination (if snapshot)
  bool has_leftover = false;
  std::map<std::pair<Site, Site>, int64_t> second_passage;  // -1 = unresolved
  std::vector<SiteArray<uint8_t>> g_hit;  // parallel to flags.g_exponents
  std::vector<int> g_exponents;
  std::vector<PositionSample> samples;
  std::vector<Site> path;  // only when track_path

  bool censored() const { return termination == Termination::Censored; }
  std::optional<int64_t> hit_time(Site level) const {
    int64_t t = first_hit.get(level);
    if (t < 0) return std::nullopt;
    return t;
  }
  std::optional<int64_t> second_passage_time(Site from, Site to) const {
    auto it = second_passage.find({from, to});
    if (it == second_passage.end() || it->second < 0) return std::nullopt;
    return it->second;
  }
};

struct WalkState {
  Site x = 0;
  int64_t n = 0;
  double drift_total = 0;   // D_n = sum of (2 q - 1) along the path
  int64_t cookies_eaten = 0;
  EnvironmentState env;
  Xoshiro256pp rng;

  WalkState(EnvSpecPtr spec, uint64_t walk_seed, Site start = 0)
      : x(start), env(std::move(spec)), rng(walk_seed) {}

  // V_n = X_n - D_n, the martingale part.
  double martingale_part() const { return static_cast<double>(x) - drift_total; }
};

// One transition: reads q at the current site, consumes its top cookie, and
// jumps right with probability q. Returns the new position.
Site step(WalkState& state);

// Advances until `stop` triggers or `budget` steps elapse (censored).
TrajectoryRecord run_until(WalkState& state, const StoppingCondition& stop, int64_t budget,
                           const RecordFlags& flags = {});

enum class TriState { False, True, Indeterminate };

// Gamma(e, n) shifted by x_shift, evaluated from a finished run that stopped
// at T_{x_shift+4n} (so env_final reflects that moment) and tracked the
// second passage (x_shift+2n -> x_shift+n):
//   (a) after T_{x_shift+2n} the walk reached x_shift+4n before x_shift+n;
//   (b) at that moment, at least e*n sites in (x_shift+n, x_shift+2n) still
//       hold >= M1 cookies.
TriState gamma_event(const TrajectoryRecord& record, EnvironmentState& env_final, double e,
                     int64_t n, int M1, Site x_shift);

// Per-step martingale identity: the expected V-increment over the two
// outcomes, q(1-(2q-1)) + (1-q)(-1-(2q-1)). Identically zero.
double martingale_step_residual(double q);

// Couples the ERW with the symmetric simple walk driven by the same
// uniforms (the ERW moves right iff U < q, the symmetric walk iff U < 1/2;
// q >= 1/2 makes X_n >= Y_n pathwise). Returns min_n (X_n - Y_n).
int64_t domination_min_gap(const EnvSpecPtr& spec, uint64_t seed, int64_t steps);

// JSON / CSV serialization of a finished trajectory.
std::string trajectory_to_json(const TrajectoryRecord& record, const std::string& config_json,
                               int indent = -1);
std::string samples_to_csv(const TrajectoryRecord& record);

}  // namespace erw
