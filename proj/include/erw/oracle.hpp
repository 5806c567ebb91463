// Exact (non-Monte-Carlo) answers on bounded windows: the absorbing chain
// over (position, consumption-profile) states, and closed-form hitting
// probabilities for inhomogeneous birth-death chains.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include "erw/env.hpp"

namespace erw {

struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class OracleQuery { HitRightProb, ExpectedVisits, MeanAbsorptionTime };

struct OracleProblem {
  Site a = 0, b = 0;     // absorbing window boundaries, a < start < b
  Site start = 0;
  EnvSpecPtr env;        // restricted to (a, b); cookies at a, b are ignored
  OracleQuery query = OracleQuery::HitRightProb;
  Site query_site = 0;   // for ExpectedVisits
  uint64_t state_cap = 10'000'000;
};

struct OracleSolution {
  double value = 0;
  double residual = 0;   // max first-step-equation defect over reachable states
  uint64_t states = 0;   // forward closure size
};

// Direct layered elimination over the forward closure from the start state.
// Exact at machine precision; throws SizeError past the cap.
OracleSolution solve(const OracleProblem& problem);

// Exact expected leftover cookies per interior site at absorption.
std::map<Site, double> expected_leftover(const OracleProblem& problem);

// Inhomogeneous birth-death chain on [lo, hi] absorbed at both ends;
// q[i] is the right-jump probability of interior site lo+1+i.
struct BirthDeathSpec {
  Site lo = 0, hi = 0, start = 0;
  std::vector<double> q;

  static BirthDeathSpec uniform(Site lo, Site hi, Site start, double q);
  // The biased-region walker of the A1 race: bias 1/2+eps on
  // [-kappa/eps, kappa/eps] (rounded to sites), symmetric elsewhere, racing
  // to (L+kappa)/eps on the right against (-L+kappa)/eps on the left.
  static BirthDeathSpec biased_region(double eps, double kappa, double L, Site start);

  void validate() const;
};

// P(hit hi before lo), evaluated via the product formula in log space with
// compensated summation.
double birth_death_hit(const BirthDeathSpec& spec);

}  // namespace erw
