#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "erw/estimators.hpp"
#include "erw/walk.hpp"

using namespace erw;

namespace {

WalkState fresh_walk(EnvSpecPtr spec, uint64_t seed, Site start = 0) {
  return WalkState(std::move(spec), derive_seed(seed, "walk", 0), start);
}

// Runs one Gamma(e, n) experiment: stop at T_{x+4n} with the second passage
// (x+2n -> x+n) tracked, then evaluate the event on the final environment.
TriState run_gamma(EnvSpecPtr spec, uint64_t seed, double e, int64_t n, int M1, Site x_shift,
                   int64_t budget) {
  WalkState w(spec, seed);
  RecordFlags flags;
  flags.second_passages = {{x_shift + 2 * n, x_shift + n}};
  auto rec = run_until(w, StoppingCondition::hit_level(x_shift + 4 * n), budget, flags);
  return gamma_event(rec, w.env, e, n, M1, x_shift);
}

}  // namespace

TEST_CASE("deterministic push: p = 1 with cookies always steps right") {
  auto w = fresh_walk(make_spec(EnvironmentSpec::homogeneous(5, 1.0)), 11);
  for (int i = 1; i <= 5; ++i) CHECK(step(w) == i);
}

TEST_CASE("exhausted sites are symmetric and add no drift") {
  auto w = fresh_walk(make_spec(EnvironmentSpec::homogeneous(0, 0.6)), 5);
  for (int i = 0; i < 1000; ++i) {
    Site before = w.x;
    Site after = step(w);
    CHECK(std::llabs(after - before) == 1);
  }
  CHECK(w.drift_total == 0.0);
  CHECK(w.cookies_eaten == 0);
}

TEST_CASE("martingale increments at a fresh site are 2(1-p) or -2p") {
  const double p = 0.7;
  for (uint64_t seed = 1; seed <= 40; ++seed) {
    auto w = fresh_walk(make_spec(EnvironmentSpec::homogeneous(3, p)), seed);
    double v_before = w.martingale_part();
    step(w);
    double dv = w.martingale_part() - v_before;
    bool up = std::abs(dv - 2 * (1 - p)) < 1e-12;
    bool down = std::abs(dv + 2 * p) < 1e-12;
    CHECK((up || down));
  }
}

TEST_CASE("per-step martingale identity vanishes algebraically") {
  for (double q : {0.5, 0.7, 1.0}) CHECK(std::abs(martingale_step_residual(q)) <= 1e-15);
}

TEST_CASE("ballistic hitting time: T_R = R when p = 1") {
  auto w = fresh_walk(make_spec(EnvironmentSpec::homogeneous(1000, 1.0)), 3);
  auto rec = run_until(w, StoppingCondition::hit_level(120), 10'000);
  CHECK(rec.termination == Termination::HitLevel);
  CHECK(rec.final_n == 120);
  CHECK(rec.hit_time(120).value() == 120);
  CHECK(rec.hit_time(60).value() == 60);
}

TEST_CASE("symmetric walk exits a centered window on either side equally often") {
  const int replicas = 4000;
  const Site N = 30;
  ReplicaPlan plan;
  plan.env = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  plan.stop = StoppingCondition::first_of(
      {StoppingCondition::hit_level(N), StoppingCondition::hit_level(-N)});
  plan.budget = 1'000'000;
  plan.replicas = replicas;
  plan.base_seed = 99;
  int64_t right = 0;
  for_each_replica(plan, 0, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
    if (rec.final_x == N) ++right;
  });
  auto est = proportion_estimate(right, replicas);
  CHECK(std::abs(est.value - 0.5) <= 3 * est.stderr_);
}

TEST_CASE("window race matches the exact enumeration value 25/32") {
  std::map<Site, CookieStack> stacks;
  for (Site s : {Site(-1), Site(0), Site(1)}) stacks[s] = CookieStack({0.75});
  ReplicaPlan plan;
  plan.env = make_spec(EnvironmentSpec::explicit_env(stacks));
  plan.stop = StoppingCondition::first_of(
      {StoppingCondition::hit_level(2), StoppingCondition::hit_level(-2)});
  plan.budget = 100'000;
  plan.replicas = 40'000;
  plan.base_seed = 12345;
  int64_t right = 0;
  for_each_replica(plan, 0, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
    if (rec.final_x == 2) ++right;
  });
  auto est = proportion_estimate(right, plan.replicas);
  CHECK(std::abs(est.value - 25.0 / 32.0) <= 3 * est.stderr_);
}

TEST_CASE("cookie accounting: homogeneous drift equals (2p-1) * cookies eaten") {
  for (auto [M, p] : std::vector<std::pair<int, double>>{{3, 0.7}, {2, 0.9}, {10, 0.9}}) {
    auto w = fresh_walk(make_spec(EnvironmentSpec::homogeneous(M, p)), 7);
    run_until(w, StoppingCondition::time_horizon(50'000), 50'000);
    CHECK(w.drift_total ==
          doctest::Approx((2 * p - 1) * static_cast<double>(w.cookies_eaten)).epsilon(1e-9));
  }
}

TEST_CASE("identical plans give bit-identical records") {
  auto spec = make_spec(EnvironmentSpec::homogeneous(3, 0.7));
  RecordFlags flags;
  flags.track_excursions = true;
  flags.second_passages = {{10, 0}};
  auto run = [&]() {
    WalkState w(spec, derive_seed(42, "walk", 0));
    auto rec = run_until(w, StoppingCondition::time_horizon(20'000), 20'000, flags);
    return trajectory_to_json(rec, "");
  };
  CHECK(run() == run());
}

TEST_CASE("stopping conditions: visit count, cookies, second passage") {
  // Recurrent walk so returns and revisits actually happen.
  auto sym = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  auto cookie = make_spec(EnvironmentSpec::homogeneous(2, 0.8));

  WalkState w1(sym, derive_seed(1, "walk", 0));
  auto r1 = run_until(w1, StoppingCondition::visit_count(0, 3), 1'000'000);
  CHECK(r1.termination == Termination::VisitCount);
  CHECK(r1.visits.get(0) == 3);

  WalkState w2(cookie, derive_seed(2, "walk", 0));
  auto r2 = run_until(w2, StoppingCondition::cookies_eaten(40), 1'000'000);
  CHECK(r2.termination == Termination::CookiesEaten);
  CHECK(r2.cookies_eaten == 40);

  WalkState w3(sym, derive_seed(3, "walk", 0));
  auto r3 = run_until(w3, StoppingCondition::second_passage(5, 2), 1'000'000);
  CHECK(r3.termination == Termination::SecondPassage);
  CHECK(r3.final_x == 2);
  CHECK(r3.hit_time(5).value() < r3.final_n);

  // FirstOf reports which child fired.
  WalkState w4(cookie, derive_seed(4, "walk", 0));
  auto r4 = run_until(w4,
                      StoppingCondition::first_of({StoppingCondition::hit_level(-100),
                                                   StoppingCondition::hit_level(25)}),
                      1'000'000);
  CHECK(r4.termination == Termination::HitLevel);
  CHECK(r4.fired_index == 1);
  CHECK(r4.final_x == 25);
}

TEST_CASE("position samples cover the geometric grid plus explicit marks") {
  auto spec = make_spec(EnvironmentSpec::homogeneous(1, 0.8));
  WalkState w(spec, derive_seed(5, "walk", 0));
  RecordFlags flags;
  flags.sample_points = {100, 1000};
  auto rec = run_until(w, StoppingCondition::time_horizon(1000), 1000, flags);
  std::vector<int64_t> ns;
  for (const auto& s : rec.samples) ns.push_back(s.n);
  for (int64_t expected : {1, 2, 4, 8, 16, 32, 64, 100, 128, 256, 512, 1000})
    CHECK(std::count(ns.begin(), ns.end(), expected) == 1);
}

TEST_CASE("the ERW dominates the symmetric walk driven by the same uniforms") {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    auto min_gap = domination_min_gap(make_spec(EnvironmentSpec::homogeneous(3, 0.7)),
                                      derive_seed(2024, "dom", seed), 5'000);
    CHECK(min_gap >= 0);
  }
}

TEST_CASE("gamma event: ballistic true, cookie-free false, censored indeterminate") {
  // Ballistic: one cookie is eaten at every crossed site, so interior sites
  // keep M - 1 cookies; the event holds with M1 = M - 1 and any e < 1
  // ((n, 2n) is an open interval of n - 1 sites).
  CHECK(run_gamma(make_spec(EnvironmentSpec::homogeneous(3, 1.0)), 1, 0.75, 16, 2, 0, 100'000) ==
        TriState::True);
  // No cookies anywhere: condition (b) cannot hold.
  CHECK(run_gamma(make_spec(EnvironmentSpec::homogeneous(0, 0.6)), 2, 0.5, 8, 1, 0, 4'000'000) ==
        TriState::False);
  // Tiny budget: the walk cannot reach 2n, the event is indeterminate.
  CHECK(run_gamma(make_spec(EnvironmentSpec::homogeneous(0, 0.6)), 3, 0.5, 64, 1, 0, 10) ==
        TriState::Indeterminate);
}

TEST_CASE("gamma event probability is high in the strong-drift regime") {
  // Homogeneous(M=6, p=0.9), e = 3/4, n = 32, M1 = 2.
  const int replicas = 10'000;
  int64_t truths = 0, determined = 0;
  auto spec = make_spec(EnvironmentSpec::homogeneous(6, 0.9));
  for (int i = 0; i < replicas; ++i) {
    TriState g = run_gamma(spec, derive_seed(31337, "gamma", static_cast<uint64_t>(i)), 0.75, 32,
                           2, 0, 200'000);
    if (g != TriState::Indeterminate) ++determined;
    if (g == TriState::True) ++truths;
  }
  CHECK(determined == replicas);
  CHECK(static_cast<double>(truths) / static_cast<double>(replicas) >= 0.9);
}

TEST_CASE("leftover snapshot records the final per-site cookie counts") {
  // Ballistic single-cookie walk: every visited site ends empty, the site
  // just left of the start keeps its cookie.
  auto spec = make_spec(EnvironmentSpec::homogeneous(1, 1.0));
  WalkState w(spec, derive_seed(21, "walk", 0));
  RecordFlags flags;
  flags.leftover_snapshot = true;
  flags.leftover_lo = -1;
  flags.leftover_hi = 10;
  auto rec = run_until(w, StoppingCondition::hit_level(10), 1000, flags);
  REQUIRE(rec.has_leftover);
  CHECK(rec.leftover.get(-1) == 1);
  for (Site s = 0; s < 10; ++s) CHECK(rec.leftover.get(s) == 0);
}

TEST_CASE("excursion counts and g-flags track left departures") {
  // Deterministic check on an explicit trajectory is impractical; use a
  // seeded run and verify bookkeeping invariants instead.
  auto spec = make_spec(EnvironmentSpec::homogeneous(2, 0.75));
  WalkState w(spec, derive_seed(8, "walk", 0));
  RecordFlags flags;
  flags.track_excursions = true;
  flags.excursion_cap = 4;
  flags.g_exponents = {1, 2};
  auto rec = run_until(w, StoppingCondition::hit_level(200), 2'000'000, flags);
  REQUIRE(rec.termination == Termination::HitLevel);
  for (Site s = rec.min_x; s <= rec.max_x; ++s) {
    CHECK(rec.excursions.get(s) <= rec.visits.get(s));
    // g_R(x) requires the walk to have reached x - 2^R at all.
    for (size_t i = 0; i < rec.g_exponents.size(); ++i)
      if (rec.g_hit[i].get(s))
        CHECK(rec.visits.get(s - (Site(1) << rec.g_exponents[i])) > 0);
  }
}
