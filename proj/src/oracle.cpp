#include "erw/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_map>

namespace erw {

namespace {

// The absorbing chain over (interior position, consumption profile) states.
// Profiles are mixed-radix integers over the interior cookie sites. States
// are restricted to the forward closure from the start; the layered
// structure (total consumption only grows) reduces every query to direct
// per-layer elimination: a step from a site with cookies left moves one
// layer up, a step from an exhausted site is a symmetric move within the
// layer, so within a layer the unknowns form runs of consecutive exhausted
// positions solved by one tridiagonal pass each.
class AbsorbingChain {
 public:
  explicit AbsorbingChain(const OracleProblem& problem)
      : a_(problem.a), b_(problem.b), start_(problem.start), env_(problem.env) {
    if (!(a_ < start_ && start_ < b_)) throw ConfigError("oracle window requires a < start < b");
    n_pos_ = static_cast<size_t>(b_ - a_ - 1);

    stack_len_.resize(n_pos_);
    levels_.resize(n_pos_);
    strides_.assign(n_pos_, 0);
    uint64_t profiles = 1;
    for (size_t i = 0; i < n_pos_; ++i) {
      Site x = a_ + 1 + static_cast<Site>(i);
      uint32_t len = env_.stack_len(x);
      stack_len_[i] = len;
      levels_[i].resize(len);
      for (uint32_t c = 0; c < len; ++c) levels_[i][c] = env_.intensity_with_consumed(x, c);
      if (len > 0) {
        strides_[i] = profiles;
        if (profiles > problem.state_cap / (len + 1))
          throw SizeError("oracle state count exceeds the configured cap");
        profiles *= len + 1;
      }
    }
    if (profiles > problem.state_cap / n_pos_)
      throw SizeError("oracle state count exceeds the configured cap");

    closure();
  }

  size_t positions() const { return n_pos_; }
  uint64_t reachable_states() const { return reachable_; }

  // Solves v = reward + sum p * v(next) over the closure with v = terminal
  // on absorption; returns v(start) and the max first-step defect relative
  // to max(1, sup |v|).
  std::pair<double, double> solve_reward(
      const std::function<double(size_t, uint64_t)>& reward, double terminal_right,
      double terminal_left) {
    for (auto& [profile, block] : blocks_) {
      (void)profile;
      block.v.assign(n_pos_, 0.0);
    }
    for (auto layer_it = layers_.rbegin(); layer_it != layers_.rend(); ++layer_it) {
      for (uint64_t profile : layer_it->second) {
        Block& block = blocks_.at(profile);
        // Cookie-bearing states first: their successors live one layer up.
        for (size_t i = 0; i < n_pos_; ++i) {
          if (!block.reach[i]) continue;
          uint32_t c = digit(profile, i);
          if (c >= stack_len_[i]) continue;
          const double q = levels_[i][c];
          uint64_t up = profile + strides_[i];
          // Zero-probability branches may point at unexplored profiles.
          const double right_v =
              q > 0 ? value_at(up, static_cast<long long>(i) + 1, terminal_right, terminal_left) : 0;
          const double left_v =
              q < 1 ? value_at(up, static_cast<long long>(i) - 1, terminal_right, terminal_left) : 0;
          block.v[i] = reward(i, profile) + q * right_v + (1 - q) * left_v;
        }
        // Runs of exhausted states: tridiagonal within the layer.
        size_t i = 0;
        while (i < n_pos_) {
          if (!block.reach[i] || digit(profile, i) < stack_len_[i]) {
            ++i;
            continue;
          }
          size_t run_begin = i;
          while (i < n_pos_ && block.reach[i] && digit(profile, i) >= stack_len_[i]) ++i;
          size_t run_end = i;  // [run_begin, run_end)
          double left_val = run_begin == 0 ? terminal_left : block.v[run_begin - 1];
          double right_val = run_end == n_pos_ ? terminal_right : block.v[run_end];
          solve_run(block, profile, run_begin, run_end, left_val, right_val, reward);
        }
      }
    }
    double defect = 0, vmax = 0;
    for (auto& [profile, block] : blocks_) {
      for (size_t i = 0; i < n_pos_; ++i) {
        if (!block.reach[i]) continue;
        uint32_t c = digit(profile, i);
        const bool has_cookie = c < stack_len_[i];
        const double q = has_cookie ? levels_[i][c] : 0.5;
        const uint64_t next = has_cookie ? profile + strides_[i] : profile;
        const double right_v =
            q > 0 ? value_at(next, static_cast<long long>(i) + 1, terminal_right, terminal_left) : 0;
        const double left_v =
            q < 1 ? value_at(next, static_cast<long long>(i) - 1, terminal_right, terminal_left) : 0;
        double rhs = reward(i, profile) + q * right_v + (1 - q) * left_v;
        defect = std::max(defect, std::abs(block.v[i] - rhs));
        vmax = std::max(vmax, std::abs(block.v[i]));
      }
    }
    size_t start_idx = static_cast<size_t>(start_ - a_ - 1);
    return {blocks_.at(0).v[start_idx], defect / std::max(1.0, vmax)};
  }

  uint32_t digit(uint64_t profile, size_t i) const {
    if (stack_len_[i] == 0) return 0;
    return static_cast<uint32_t>(profile / strides_[i] % (stack_len_[i] + 1));
  }

  uint32_t stack_len(size_t i) const { return stack_len_[i]; }

 private:
  struct Block {
    std::vector<uint8_t> reach;
    std::vector<double> v;
    int layer = 0;
  };

  void closure() {
    std::deque<std::pair<uint64_t, size_t>> queue;
    auto mark = [this](uint64_t profile, size_t i) -> bool {
      auto [it, inserted] = blocks_.try_emplace(profile);
      Block& block = it->second;
      if (inserted) {
        block.reach.assign(n_pos_, 0);
        int layer = 0;
        for (size_t k = 0; k < n_pos_; ++k) layer += static_cast<int>(digit(profile, k));
        block.layer = layer;
        layers_[layer].push_back(profile);
      }
      if (block.reach[i]) return false;
      block.reach[i] = 1;
      ++reachable_;
      return true;
    };
    size_t start_idx = static_cast<size_t>(start_ - a_ - 1);
    mark(0, start_idx);
    queue.emplace_back(0, start_idx);
    while (!queue.empty()) {
      auto [profile, i] = queue.front();
      queue.pop_front();
      uint32_t c = digit(profile, i);
      const bool has_cookie = c < stack_len_[i];
      const double q = has_cookie ? levels_[i][c] : 0.5;
      const uint64_t next = has_cookie ? profile + strides_[i] : profile;
      if (q > 0 && i + 1 < n_pos_ && mark(next, i + 1)) queue.emplace_back(next, i + 1);
      if (q < 1 && i >= 1 && mark(next, i - 1)) queue.emplace_back(next, i - 1);
    }
  }

  // Value of the state at interior index i (in [-1, n_pos], where -1 and
  // n_pos are the absorbing boundaries) under the given profile.
  double value_at(uint64_t profile, long long i, double terminal_right, double terminal_left) {
    if (i < 0) return terminal_left;
    if (i >= static_cast<long long>(n_pos_)) return terminal_right;
    return blocks_.at(profile).v[static_cast<size_t>(i)];
  }

  void solve_run(Block& block, uint64_t profile, size_t run_begin, size_t run_end,
                 double left_val, double right_val,
                 const std::function<double(size_t, uint64_t)>& reward) {
    // v_i = r_i + (v_{i-1} + v_{i+1})/2  =>  -v_{i-1} + 2 v_i - v_{i+1} = 2 r_i.
    const size_t m = run_end - run_begin;
    if (m == 0) return;
    std::vector<double> diag(m, 2.0), rhs(m);
    for (size_t k = 0; k < m; ++k) rhs[k] = 2 * reward(run_begin + k, profile);
    rhs[0] += left_val;
    rhs[m - 1] += right_val;
    // Thomas algorithm with sub/super diagonals = -1.
    for (size_t k = 1; k < m; ++k) {
      const double f = 1.0 / diag[k - 1];
      diag[k] -= f;
      rhs[k] += f * rhs[k - 1];
    }
    block.v[run_begin + m - 1] = rhs[m - 1] / diag[m - 1];
    for (size_t k = m - 1; k-- > 0;)
      block.v[run_begin + k] = (rhs[k] + block.v[run_begin + k + 1]) / diag[k];
  }

  Site a_, b_, start_;
  EnvironmentState env_;
  size_t n_pos_ = 0;
  std::vector<uint32_t> stack_len_;
  std::vector<std::vector<double>> levels_;
  std::vector<uint64_t> strides_;
  std::unordered_map<uint64_t, Block> blocks_;
  std::map<int, std::vector<uint64_t>> layers_;
  uint64_t reachable_ = 0;
};

}  // namespace

OracleSolution solve(const OracleProblem& problem) {
  if (!problem.env) throw ConfigError("oracle problem requires an environment");
  AbsorbingChain chain(problem);
  std::function<double(size_t, uint64_t)> reward;
  switch (problem.query) {
    case OracleQuery::HitRightProb:
      reward = [](size_t, uint64_t) { return 0.0; };
      break;
    case OracleQuery::ExpectedVisits: {
      if (!(problem.query_site > problem.a && problem.query_site < problem.b))
        throw ConfigError("ExpectedVisits query site must be interior");
      size_t target = static_cast<size_t>(problem.query_site - problem.a - 1);
      reward = [target](size_t i, uint64_t) { return i == target ? 1.0 : 0.0; };
      break;
    }
    case OracleQuery::MeanAbsorptionTime:
      reward = [](size_t, uint64_t) { return 1.0; };
      break;
  }
  const double terminal_right = problem.query == OracleQuery::HitRightProb ? 1.0 : 0.0;
  auto [value, residual] = chain.solve_reward(reward, terminal_right, 0.0);
  if (!(residual <= 1e-12))
    throw NumericError("oracle solve residual " + std::to_string(residual) + " above 1e-12");
  return OracleSolution{value, residual, chain.reachable_states()};
}

std::map<Site, double> expected_leftover(const OracleProblem& problem) {
  if (!problem.env) throw ConfigError("oracle problem requires an environment");
  AbsorbingChain chain(problem);
  std::map<Site, double> out;
  for (size_t i = 0; i < chain.positions(); ++i) {
    Site x = problem.a + 1 + static_cast<Site>(i);
    uint32_t len = chain.stack_len(i);
    if (len == 0) {
      out[x] = 0.0;
      continue;
    }
    // E[consumed at x] = expected number of steps taken from x while a
    // cookie is still present there.
    auto reward = [&chain, i, len](size_t j, uint64_t profile) {
      return (j == i && chain.digit(profile, i) < len) ? 1.0 : 0.0;
    };
    auto [eaten, residual] = chain.solve_reward(reward, 0.0, 0.0);
    if (!(residual <= 1e-12)) throw NumericError("expected_leftover residual above 1e-12");
    out[x] = static_cast<double>(len) - eaten;
  }
  return out;
}

BirthDeathSpec BirthDeathSpec::uniform(Site lo, Site hi, Site start, double q) {
  BirthDeathSpec s;
  s.lo = lo;
  s.hi = hi;
  s.start = start;
  s.q.assign(static_cast<size_t>(hi - lo - 1), q);
  s.validate();
  return s;
}

BirthDeathSpec BirthDeathSpec::biased_region(double eps, double kappa, double L, Site start) {
  if (!(eps > 0) || !(eps < 0.5)) throw ConfigError("eps must lie in (0, 1/2)");
  const Site region = std::llround(kappa / eps);
  if (region < 1) throw ConfigError("biased region narrower than one site (kappa/eps < 1)");
  const Site pitch = std::llround(L / eps);
  if (pitch <= 2 * region) throw ConfigError("blocks overlap: require kappa < L/2");
  BirthDeathSpec s;
  s.lo = region - pitch;      // (-L+kappa)/eps
  s.hi = pitch + region;      // (L+kappa)/eps
  s.start = start;
  s.q.resize(static_cast<size_t>(s.hi - s.lo - 1));
  for (Site x = s.lo + 1; x <= s.hi - 1; ++x)
    s.q[static_cast<size_t>(x - s.lo - 1)] = (x >= -region && x <= region) ? 0.5 + eps : 0.5;
  s.validate();
  return s;
}

void BirthDeathSpec::validate() const {
  if (!(lo < start && start < hi)) throw ConfigError("birth-death requires lo < start < hi");
  if (q.size() != static_cast<size_t>(hi - lo - 1))
    throw ConfigError("birth-death q vector must cover the interior sites");
  for (double qi : q)
    if (!(qi > 0.0) || !(qi <= 1.0))
      throw ConfigError("birth-death right probabilities must lie in (0, 1]");
}

double birth_death_hit(const BirthDeathSpec& spec) {
  spec.validate();
  // h(start) = sum_{j=lo}^{start-1} pi_j / sum_{j=lo}^{hi-1} pi_j with
  // pi_lo = 1 and pi_j = prod_{k=lo+1}^{j} (1-q_k)/q_k, in log space.
  const size_t terms = static_cast<size_t>(spec.hi - spec.lo);
  std::vector<double> log_pi(terms);
  log_pi[0] = 0.0;
  for (size_t j = 1; j < terms; ++j) {
    const double qk = spec.q[j - 1];
    log_pi[j] = (qk >= 1.0) ? -std::numeric_limits<double>::infinity()
                            : log_pi[j - 1] + std::log1p(-qk) - std::log(qk);
  }
  const size_t prefix = static_cast<size_t>(spec.start - spec.lo);
  double peak = -std::numeric_limits<double>::infinity();
  for (double lp : log_pi) peak = std::max(peak, lp);
  // Kahan-compensated sums of exp(log_pi - peak).
  auto compensated_sum = [&](size_t count) {
    double sum = 0, comp = 0;
    for (size_t j = 0; j < count; ++j) {
      if (std::isinf(log_pi[j])) continue;
      double term = std::exp(log_pi[j] - peak);
      double y = term - comp;
      double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    return sum;
  };
  const double num = compensated_sum(prefix);
  const double den = compensated_sum(terms);
  return num / den;
}

}  // namespace erw
