#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "erw/blocks.hpp"
#include "erw/oracle.hpp"

using namespace erw;

namespace {

BlockConfig standard_config() {
  BlockConfig cfg;
  cfg.eps = 0.05;
  cfg.kappa = 0.2;
  cfg.L = 4;
  cfg.v = 3;
  cfg.M0 = 4;
  cfg.c1 = 1.0;
  return cfg;
}

}  // namespace

TEST_CASE("block config validation") {
  auto cfg = standard_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.kappa_sites() == 4);
  CHECK(cfg.pitch_sites() == 80);
  CHECK(cfg.visit_threshold() == 60);
  CHECK(cfg.fine_cookies() == 240);

  auto bad = cfg;
  bad.kappa = 3.0;  // kappa >= L/2
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eps = 0.45;
  bad.kappa = 0.2;  // region rounds to < 1 site
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ballistic path extracts one advance per block at the near edges") {
  auto cfg = standard_config();
  std::vector<Site> path;
  for (Site x = 0; x <= 400; ++x) path.push_back(x);
  auto trace = extract_blocks(path, cfg);
  REQUIRE(trace.steps.size() >= 5);
  for (size_t n = 1; n < trace.steps.size(); ++n) {
    CHECK(trace.steps[n].z == static_cast<int64_t>(n));
    CHECK(trace.steps[n].rule == TauRule::RightNearEdge);
    CHECK(trace.steps[n].tau ==
          static_cast<int64_t>(n) * cfg.pitch_sites() - cfg.kappa_sites());
  }
  CHECK(trace.adv_under == static_cast<int64_t>(trace.steps.size()) - 1);
  CHECK(trace.tot_over == 0);
}

TEST_CASE("every stopping point lies in exactly one block interval") {
  auto cfg = standard_config();
  auto env = make_spec(EnvironmentSpec::homogeneous(cfg.fine_cookies(), cfg.fine_p()));
  WalkState w(env, derive_seed(77, "walk", 0));
  RecordFlags flags;
  flags.track_path = true;
  auto rec = run_until(w, StoppingCondition::time_horizon(40'000), 40'000, flags);
  auto trace = extract_blocks(rec.path, cfg);
  REQUIRE(trace.steps.size() > 3);
  for (size_t n = 0; n < trace.steps.size(); ++n) {
    const auto& s = trace.steps[n];
    Site x = rec.path[static_cast<size_t>(s.tau)];
    CHECK(std::llabs(x - s.z * cfg.pitch_sites()) <= cfg.kappa_sites());
    if (n > 0) {
      CHECK(s.tau > trace.steps[n - 1].tau);
      CHECK(std::llabs(s.z - trace.steps[n - 1].z) <= 1);
      // A stay is only produced by the visit-threshold rule.
      if (s.z == trace.steps[n - 1].z) CHECK(s.rule == TauRule::VisitThreshold);
    }
  }
}

TEST_CASE("zero-bias surrogate with symmetric targets is exactly 1/2") {
  auto cfg = standard_config();
  const Site target = cfg.pitch_sites() + cfg.kappa_sites();
  auto bd = BirthDeathSpec::uniform(-target, target, 0, 0.5);
  CHECK(birth_death_hit(bd) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("A1 exactness: zero-bias surrogate equals the oracle's symmetric window") {
  // The A1 race window with q = 1/2 everywhere is the plain asymmetric ruin.
  auto cfg = standard_config();
  const Site lo = cfg.kappa_sites() - cfg.pitch_sites();
  const Site hi = cfg.pitch_sites() + cfg.kappa_sites();
  auto bd = BirthDeathSpec::uniform(lo, hi, 0, 0.5);
  OracleProblem problem;
  problem.a = lo;
  problem.b = hi;
  problem.start = 0;
  problem.env = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  CHECK(std::abs(birth_death_hit(bd) - solve(problem).value) <= 1e-10);
  CHECK(birth_death_hit(bd) ==
        doctest::Approx(static_cast<double>(-lo) / static_cast<double>(hi - lo)).epsilon(1e-12));
}

TEST_CASE("event probabilities: exact A1 margin and monotonicity in eps") {
  auto cfg = standard_config();
  auto ev = event_probabilities(cfg, 4000, 42, 0);
  CHECK(ev.p_a1_min > 0.5 + 0.05 * cfg.kappa);
  CHECK(ev.p_a1_by_start.size() == static_cast<size_t>(2 * cfg.kappa_sites() + 1));
  CHECK(ev.p_a_lower <= ev.p_a1_min);

  auto smaller = cfg;
  smaller.eps = 0.02;
  double min_small = 1.0;
  for (Site s = -smaller.kappa_sites(); s <= smaller.kappa_sites(); ++s)
    min_small = std::min(min_small,
                         birth_death_hit(BirthDeathSpec::biased_region(smaller.eps, smaller.kappa,
                                                                       smaller.L, s)));
  CHECK(ev.p_a1_min >= min_small - 1e-12);  // P_A1 non-decreasing in eps
}

TEST_CASE("A2 sweep is non-increasing in v") {
  auto cfg = standard_config();
  auto sweep = a2_sweep(cfg, 6, 6000, 9, 0);
  for (size_t i = 1; i < sweep.p_by_v.size(); ++i) {
    CHECK(sweep.p_by_v[i] <= sweep.p_by_v[i - 1] + 1e-12);
    CHECK(sweep.upper_by_v[i] <= sweep.upper_by_v[i - 1] + 1e-12);
  }
}

TEST_CASE("coupled run invariants on a short horizon") {
  auto cfg = standard_config();
  cfg.c1 = 1.0;  // coarse bias 0.7
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    auto run = coupled_run(cfg, 30'000, seed);
    CHECK(run.meeting_resolved);
    CHECK(run.domination_ok);
    CHECK(run.precondition_violations == 0);
    CHECK(run.min_domination_gap >= -cfg.kappa1() - 1e-9);
    // l(n) strictly increasing with increments >= 1 and X_{l(n)} = Z_n.
    int64_t prev_l = 0;
    for (size_t n = 1; n < run.fine.steps.size(); ++n) {
      const auto& s = run.fine.steps[n];
      CHECK(s.l >= prev_l + 1);
      CHECK(run.coarse_positions[static_cast<size_t>(s.l)] == s.z);
      prev_l = s.l;
    }
    // Coarse visit counts dominate block visit counts up to l(n).
    std::map<int64_t, int64_t> coarse_visits, block_visits;
    const int64_t last_l = run.fine.steps.back().l;
    for (int64_t i = 0; i <= last_l; ++i) ++coarse_visits[run.coarse_positions[static_cast<size_t>(i)]];
    for (const auto& s : run.fine.steps) ++block_visits[s.z];
    for (const auto& [r, count] : block_visits) CHECK(coarse_visits[r] >= count);
  }
}

TEST_CASE("coupled run with horizon 0 is trivially dominated") {
  auto cfg = standard_config();
  auto run = coupled_run(cfg, 0, 5);
  CHECK(run.domination_ok);
  CHECK(run.fine.steps.size() == 1);
}

TEST_CASE("calibration finds a validated tuple and serializes round-trip") {
  CalibrationSearch search;
  search.Ls = {4};
  search.kappas = {0.2};
  search.epss = {0.05};
  search.replicas = 20'000;
  auto result = calibrate(search, 2025, 0);
  REQUIRE(result.ok);
  CHECK(result.p_a1_min - result.p_a2_max >= 0.5 + 0.05 * result.kappa);
  CHECK(result.p_a2_max < std::exp(-1.0 / result.kappa));
  CHECK(result.c1 > 0);
  CHECK(result.M0 >= 4);

  auto text = calibration_to_json(result);
  auto parsed = calibration_from_json(text);
  CHECK(parsed.v == result.v);
  CHECK(parsed.M0 == result.M0);
  CHECK(parsed.c1 == doctest::Approx(result.c1));
}
