#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "brute_force.hpp"
#include "doctest.h"
#include "erw/oracle.hpp"
#include "erw/rng.hpp"

using namespace erw;

namespace {

EnvSpecPtr explicit_window(const std::map<Site, CookieStack>& stacks) {
  return make_spec(EnvironmentSpec::explicit_env(stacks));
}

OracleProblem hit_problem(Site a, Site b, Site start, EnvSpecPtr env) {
  OracleProblem p;
  p.a = a;
  p.b = b;
  p.start = start;
  p.env = std::move(env);
  p.query = OracleQuery::HitRightProb;
  return p;
}

// Independent first-step linear solve for an inhomogeneous birth-death
// chain, used to cross-check the product formula.
double birth_death_linear_solve(const BirthDeathSpec& spec) {
  const size_t m = spec.q.size();
  std::vector<double> diag(m), upper(m), lower(m), rhs(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    diag[i] = 1.0;
    upper[i] = -spec.q[i];
    lower[i] = -(1 - spec.q[i]);
  }
  rhs[m - 1] += spec.q[m - 1];  // absorption value 1 at hi
  for (size_t i = 1; i < m; ++i) {
    double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> h(m);
  h[m - 1] = rhs[m - 1] / diag[m - 1];
  for (size_t i = m - 1; i-- > 0;) h[i] = (rhs[i] - upper[i] * h[i + 1]) / diag[i];
  return h[static_cast<size_t>(spec.start - spec.lo - 1)];
}

}  // namespace

TEST_CASE("symmetric window hit probability is the classical linear ruin") {
  auto env = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  for (Site N : {2, 10, 1000}) {
    for (Site k : {Site(0), Site(1), -N / 2, N - 1}) {
      if (!(k > -N && k < N)) continue;
      auto sol = solve(hit_problem(-N, N, k, env));
      CHECK(sol.residual <= 1e-12);
      CHECK(sol.value == doctest::Approx((double)(k + N) / (2.0 * N)).epsilon(1e-12));
    }
  }
}

TEST_CASE("single-cookie 0.75 window matches the frozen enumeration value") {
  // One cookie of 0.75 at each of -1, 0, 1; start 0; window [-2, 2].
  // Exact value by hand enumeration of the consumption chain: 25/32.
  std::map<Site, CookieStack> stacks;
  for (Site s : {Site(-1), Site(0), Site(1)}) stacks[s] = CookieStack({0.75});
  auto problem = hit_problem(-2, 2, 0, explicit_window(stacks));
  auto sol = solve(problem);
  CHECK(sol.value == doctest::Approx(25.0 / 32.0).epsilon(1e-10));
  CHECK(sol.residual <= 1e-12);

  auto brute = testing::brute_force_hit_right(problem);
  CHECK(std::abs(brute.hit_right - sol.value) <= 1e-10 + brute.unabsorbed);
}

TEST_CASE("brute-force path summation agrees with the layered solve on small windows") {
  Xoshiro256pp rng(20250810);
  for (int trial = 0; trial < 12; ++trial) {
    Site half = 2 + static_cast<Site>(rng.next() % 1);  // windows of size <= 5
    std::map<Site, CookieStack> stacks;
    for (Site s = -half + 1; s <= half - 1; ++s) {
      int m = static_cast<int>(rng.next() % 3);  // M <= 2
      if (m == 0) continue;
      std::vector<double> levels;
      for (int c = 0; c < m; ++c) levels.push_back(0.55 + 0.4 * rng.next_double());
      stacks[s] = CookieStack(levels);
    }
    Site start = static_cast<Site>(rng.next() % (2 * half - 1)) - half + 1;
    auto problem = hit_problem(-half, half, start, explicit_window(stacks));
    auto sol = solve(problem);
    auto brute = testing::brute_force_hit_right(problem);
    CHECK(std::abs(brute.hit_right - sol.value) <= 1e-10 + brute.unabsorbed);
  }
}

TEST_CASE("mean absorption time and expected visits reproduce SRW closed forms") {
  auto env = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  for (Site N : {Site(1), Site(5), Site(50)}) {
    OracleProblem p = hit_problem(-N, N, 0, env);
    p.query = OracleQuery::MeanAbsorptionTime;
    auto time_sol = solve(p);
    CHECK(time_sol.value == doctest::Approx((double)(N * N)).epsilon(1e-10));

    p.query = OracleQuery::ExpectedVisits;
    p.query_site = 0;
    auto visit_sol = solve(p);
    CHECK(visit_sol.value == doctest::Approx((double)N).epsilon(1e-10));
  }
}

TEST_CASE("birth-death product formula: symmetric and frozen asymmetric cases") {
  auto sym = BirthDeathSpec::uniform(-7, 5, 1, 0.5);
  CHECK(birth_death_hit(sym) == doctest::Approx(8.0 / 12.0).epsilon(1e-12));

  // q = 0.75 on 1..4 starting at 2: P(hit 4 before 1) = 9/13 by the closed
  // form (1 - (1/3)) / (1 - (1/3)^3), so the lo-side probability is 4/13.
  auto asym = BirthDeathSpec::uniform(1, 4, 2, 0.75);
  const double hit_hi = birth_death_hit(asym);
  CHECK(hit_hi == doctest::Approx(9.0 / 13.0).epsilon(1e-12));
  CHECK(1 - hit_hi == doctest::Approx(4.0 / 13.0).epsilon(1e-12));
  CHECK(hit_hi == doctest::Approx(birth_death_linear_solve(asym)).epsilon(1e-10));
}

TEST_CASE("birth-death equals the oracle on zero-cookie problems") {
  auto env = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  for (Site N : {Site(3), Site(9), Site(40)}) {
    for (Site start : {Site(0), Site(1), -N / 2}) {
      if (!(start > -N && start < N)) continue;
      auto bd = BirthDeathSpec::uniform(-N, N, start, 0.5);
      auto sol = solve(hit_problem(-N, N, start, env));
      CHECK(std::abs(birth_death_hit(bd) - sol.value) <= 1e-10);
    }
  }
}

TEST_CASE("biased-region race beats 1/2 by a kappa margin and matches a linear solve") {
  double min_p = 1.0;
  for (Site start = -4; start <= 4; ++start) {
    auto spec = BirthDeathSpec::biased_region(0.05, 0.2, 4.0, start);
    const double h = birth_death_hit(spec);
    CHECK(h == doctest::Approx(birth_death_linear_solve(spec)).epsilon(1e-10));
    min_p = std::min(min_p, h);
  }
  CHECK(min_p > 0.5 + 0.05 * 0.2);
}

TEST_CASE("log-space product formula survives long windows") {
  // Strong uniform bias over a long interval: naive products would
  // underflow; the answer must stay within [0, 1] and match the recursion.
  auto spec = BirthDeathSpec::uniform(0, 4000, 2000, 0.75);
  double h = birth_death_hit(spec);
  CHECK(h > 0.0);
  CHECK(h <= 1.0);
  CHECK(h == doctest::Approx(1.0).epsilon(1e-9));  // start deep in the biased half
}

TEST_CASE("expected leftover: trivial cases and deterministic path") {
  auto env0 = make_spec(EnvironmentSpec::homogeneous(0, 0.6));
  auto lz = expected_leftover(hit_problem(-3, 3, 0, env0));
  for (const auto& [site, value] : lz) {
    (void)site;
    CHECK(value == doctest::Approx(0.0));
  }

  auto env1 = make_spec(EnvironmentSpec::homogeneous(1, 1.0));
  auto l1 = expected_leftover(hit_problem(-2, 2, 0, env1));
  CHECK(l1.at(-1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(l1.at(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(l1.at(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("adding a cookie anywhere weakly increases the hit-right probability") {
  Xoshiro256pp rng(777);
  for (int trial = 0; trial < 6; ++trial) {
    Site half = 2 + static_cast<Site>(rng.next() % 2);  // windows of size <= 7
    std::map<Site, CookieStack> base;
    for (Site s = -half + 1; s <= half - 1; ++s) {
      int m = static_cast<int>(rng.next() % 2);  // base M <= 1
      if (m == 0) continue;
      base[s] = CookieStack({0.55 + 0.4 * rng.next_double()});
    }
    Site start = 0;
    double base_value = solve(hit_problem(-half, half, start, explicit_window(base))).value;
    for (Site s = -half + 1; s <= half - 1; ++s) {
      auto boosted = base;
      boosted[s].intensities.push_back(0.8);  // append one cookie (M <= 2)
      double new_value = solve(hit_problem(-half, half, start, explicit_window(boosted))).value;
      CHECK(new_value >= base_value - 1e-12);
    }
  }
}

TEST_CASE("state cap raises a size error") {
  OracleProblem p = hit_problem(-6, 6, 0, make_spec(EnvironmentSpec::homogeneous(3, 0.7)));
  p.state_cap = 100;
  CHECK_THROWS_AS(solve(p), SizeError);
}
