// Cookie environments: declarative specs, lazy materialization and the
// consumed-cookie state mutated by the walk. A site's intensity sequence is
// its cookie stack; once the stack is exhausted the site is symmetric (1/2).
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "erw/rng.hpp"
#include "erw/site_array.hpp"

namespace erw {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// One site's ordered cookie intensities, each in (1/2, 1]. The implicit
// intensity after exhaustion is exactly 1/2.
struct CookieStack {
  std::vector<double> intensities;

  CookieStack() = default;
  explicit CookieStack(std::vector<double> v) : intensities(std::move(v)) {}
  static CookieStack uniform(int count, double p) {
    return CookieStack(std::vector<double>(static_cast<size_t>(count), p));
  }

  size_t size() const { return intensities.size(); }
  bool empty() const { return intensities.empty(); }

  // Sum of 2*intensity - 1 over the stack; equals M*(2p-1) for a uniform stack.
  double total_drift() const {
    double d = 0;
    for (double q : intensities) d += 2 * q - 1;
    return d;
  }

  void validate() const {
    for (double q : intensities)
      if (!(q > 0.5) || !(q <= 1.0))
        throw ConfigError("cookie intensity must lie in (1/2, 1], got " + std::to_string(q));
  }
};

enum class EnvKind { Homogeneous, OneSidedHomogeneous, ErgodicRenewal, Explicit, Patched };

// Half-open interval [lo, hi) of sites sharing one stack template.
struct PatchOverride {
  Site lo = 0;
  Site hi = 0;
  CookieStack stack;
};

struct EnvironmentSpec {
  EnvKind kind = EnvKind::Homogeneous;

  // Homogeneous / OneSidedHomogeneous
  int M = 0;
  double p = 0.6;
  Site boundary = 0;  // OneSided: cookies only at sites >= boundary

  // ErgodicRenewal: i.i.d. gaps valued in {0} u {2^n : 2 <= n <= n_max},
  // P(gap = 0) = sigma, P(gap = 2^n) = gamma / 4^(eps_tail * n) with gamma
  // normalizing. Sites carry multiplicity-many cookies of the fixed strength.
  double sigma = 0.0;
  double eps_tail = 0.6;
  double strength = 0.75;
  int n_max = 20;
  uint64_t env_seed = 0;

  // Explicit
  std::map<Site, CookieStack> stacks;

  // Patched
  std::shared_ptr<const EnvironmentSpec> base;
  std::vector<PatchOverride> overrides;

  static EnvironmentSpec homogeneous(int M, double p);
  static EnvironmentSpec one_sided(int M, double p, Site boundary);
  static EnvironmentSpec ergodic_renewal(double sigma, double eps_tail, int n_max,
                                         uint64_t env_seed, double strength = 0.75);
  static EnvironmentSpec explicit_env(std::map<Site, CookieStack> stacks);
  static EnvironmentSpec patched(EnvironmentSpec base_spec, std::vector<PatchOverride> overrides);

  // delta = M(2p-1), the phase parameter of the homogeneous environment.
  double delta() const { return M * (2 * p - 1); }

  void validate() const;
  std::string describe() const;
};

using EnvSpecPtr = std::shared_ptr<const EnvironmentSpec>;

inline EnvSpecPtr make_spec(EnvironmentSpec s) {
  s.validate();
  return std::make_shared<const EnvironmentSpec>(std::move(s));
}

// Gap-law summary used by the renewal variant and its tests.
struct RenewalGapLaw {
  double sigma = 0;
  double gamma = 0;                 // normalization of the 2^n branch
  std::vector<double> probs;        // P(gap = 2^n) for n = 2..n_max
  double mean_gap = 0;              // E[gap]
  double mean_cookies_per_site = 0; // 1 / E[gap]
};

RenewalGapLaw renewal_gap_law(double sigma, double eps_tail, int n_max);

// Chooses sigma so that the mean number of cookies per site equals
// target_mean. The gap distribution is read as one i.i.d. law on
// {0} u {2^n : 2 <= n <= n_max}. Also checks the coarser sufficient
// condition sum_{n>=2} sigma^n >= target_mean and throws if it fails.
double renewal_sigma_for_mean(double target_mean, double eps_tail, int n_max);

// Mutable per-walker environment state. Single-owner; replicas each own an
// independent state. Materialization is deterministic in (spec, env_seed).
class EnvironmentState {
 public:
  explicit EnvironmentState(EnvSpecPtr spec);

  // Intensity offered by site x on its next visit (1/2 once exhausted).
  double intensity_at(Site x);
  // Realizes the theta_x shift: advances site x's stack by one, no-op past
  // exhaustion. Returns true iff a cookie was actually consumed.
  bool consume(Site x);

  uint32_t consumed(Site x) const { return consumed_.get(x); }
  uint32_t stack_len(Site x);
  uint32_t leftover(Site x) { return stack_len(x) - consumed(x); }
  // Intensity site x would offer after c cookies were consumed there;
  // ignores the state's own consumed counter.
  double intensity_with_consumed(Site x, uint32_t c);

  // Hot-path access for the walk's step loop: a mutable reference to the
  // consumed counter, and the spec kind for dispatch.
  uint16_t& consumed_slot(Site x) { return consumed_.ref(x); }
  EnvKind kind() const { return spec_->kind; }

  const EnvironmentSpec& spec() const { return *spec_; }
  EnvSpecPtr spec_ptr() const { return spec_; }

 private:
  struct StackView {
    uint32_t len = 0;
    double uniform_p = 0.5;               // used when levels == nullptr
    const std::vector<double>* levels = nullptr;
  };

  StackView resolve(Site x);
  uint32_t renewal_pile(Site x);
  void extend_renewal(Site x);

  EnvSpecPtr spec_;
  SiteArray<uint16_t> consumed_;

  // Explicit/Patched resolution memo: -1 unknown, -2 empty, >= 0 table index.
  SiteArray<int32_t> memo_{-1};
  std::vector<StackView> table_;

  // Renewal materialization: pile sizes (cookie counts) per site, extended
  // lazily and deterministically from the seed stream in both directions.
  SiteArray<int32_t> piles_{-1};
  Site renewal_hi_ = 0;   // sites in [0, renewal_hi_) materialized
  Site renewal_lo_ = 0;   // sites in [renewal_lo_, 0) materialized
  uint64_t right_pos_ = 0, left_pos_ = 0;
  Xoshiro256pp right_rng_, left_rng_;
  std::vector<double> gap_cdf_;  // cdf over {0, 2^2, ..., 2^n_max}
  std::vector<int64_t> gap_val_;
};

// Materializes per-site stacks of an ErgodicRenewal spec over [x_lo, x_hi]
// (inclusive). Deterministic in env_seed and consistent across overlapping
// window calls. Sites with zero cookies are omitted from the map.
std::map<Site, CookieStack> materialize_renewal(const EnvironmentSpec& spec, Site x_lo, Site x_hi);

// --- JSON serialization (External Interfaces) ---
std::string env_to_json(const EnvironmentSpec& spec, int indent = -1);
// Accepts either the JSON document or the CLI shorthands
// "homogeneous:M,p" / "onesided:M,p,boundary". Throws ConfigError naming the
// offending field on malformed input.
EnvironmentSpec env_from_string(const std::string& text);

}  // namespace erw
