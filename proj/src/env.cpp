#include "erw/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace erw {

using nlohmann::json;

EnvironmentSpec EnvironmentSpec::homogeneous(int M, double p) {
  EnvironmentSpec s;
  s.kind = EnvKind::Homogeneous;
  s.M = M;
  s.p = p;
  return s;
}

EnvironmentSpec EnvironmentSpec::one_sided(int M, double p, Site boundary) {
  EnvironmentSpec s;
  s.kind = EnvKind::OneSidedHomogeneous;
  s.M = M;
  s.p = p;
  s.boundary = boundary;
  return s;
}

EnvironmentSpec EnvironmentSpec::ergodic_renewal(double sigma, double eps_tail, int n_max,
                                                 uint64_t env_seed, double strength) {
  EnvironmentSpec s;
  s.kind = EnvKind::ErgodicRenewal;
  s.sigma = sigma;
  s.eps_tail = eps_tail;
  s.n_max = n_max;
  s.env_seed = env_seed;
  s.strength = strength;
  return s;
}

EnvironmentSpec EnvironmentSpec::explicit_env(std::map<Site, CookieStack> stacks) {
  EnvironmentSpec s;
  s.kind = EnvKind::Explicit;
  s.stacks = std::move(stacks);
  return s;
}

EnvironmentSpec EnvironmentSpec::patched(EnvironmentSpec base_spec,
                                         std::vector<PatchOverride> overrides) {
  EnvironmentSpec s;
  s.kind = EnvKind::Patched;
  s.base = std::make_shared<const EnvironmentSpec>(std::move(base_spec));
  s.overrides = std::move(overrides);
  std::sort(s.overrides.begin(), s.overrides.end(),
            [](const PatchOverride& a, const PatchOverride& b) { return a.lo < b.lo; });
  return s;
}

void EnvironmentSpec::validate() const {
  switch (kind) {
    case EnvKind::Homogeneous:
    case EnvKind::OneSidedHomogeneous:
      if (M < 0) throw ConfigError("M must be >= 0");
      if (M > 0 && (!(p > 0.5) || !(p <= 1.0)))
        throw ConfigError("p must lie in (1/2, 1], got " + std::to_string(p));
      if (M > 65000) throw ConfigError("stack length cap exceeded");
      break;
    case EnvKind::ErgodicRenewal: {
      if (!(sigma > 0) || !(sigma < 1)) throw ConfigError("sigma must lie in (0, 1)");
      if (!(eps_tail > 0.5) || !(eps_tail < 1)) throw ConfigError("eps_tail must lie in (1/2, 1)");
      if (!(strength > 0.5) || !(strength <= 1)) throw ConfigError("strength must lie in (1/2, 1]");
      if (n_max < 2) throw ConfigError("n_max must be >= 2");
      renewal_gap_law(sigma, eps_tail, n_max);  // throws if normalization impossible
      break;
    }
    case EnvKind::Explicit:
      for (const auto& [site, stack] : stacks) {
        (void)site;
        stack.validate();
        if (stack.size() > 65000) throw ConfigError("stack length cap exceeded");
      }
      break;
    case EnvKind::Patched: {
      if (!base) throw ConfigError("patched environment requires a base");
      base->validate();
      Site prev_hi = INT64_MIN;
      for (const auto& ov : overrides) {  // sorted by lo at construction
        if (ov.lo >= ov.hi) throw ConfigError("override interval must be non-empty [lo, hi)");
        if (ov.lo < prev_hi) throw ConfigError("override intervals must be pairwise disjoint");
        prev_hi = ov.hi;
        ov.stack.validate();
      }
      break;
    }
  }
}

std::string EnvironmentSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case EnvKind::Homogeneous:
      os << "homogeneous(M=" << M << ", p=" << p << ")";
      break;
    case EnvKind::OneSidedHomogeneous:
      os << "onesided(M=" << M << ", p=" << p << ", boundary=" << boundary << ")";
      break;
    case EnvKind::ErgodicRenewal:
      os << "renewal(sigma=" << sigma << ", eps_tail=" << eps_tail << ", strength=" << strength
         << ", n_max=" << n_max << ", env_seed=" << env_seed << ")";
      break;
    case EnvKind::Explicit:
      os << "explicit(" << stacks.size() << " sites)";
      break;
    case EnvKind::Patched:
      os << "patched(base=" << base->describe() << ", " << overrides.size() << " overrides)";
      break;
  }
  return os.str();
}

RenewalGapLaw renewal_gap_law(double sigma, double eps_tail, int n_max) {
  RenewalGapLaw law;
  law.sigma = sigma;
  double tail_mass = 0;
  for (int n = 2; n <= n_max; ++n) tail_mass += std::pow(4.0, -eps_tail * n);
  if (tail_mass <= 0) throw ConfigError("renewal gap law: normalization impossible");
  law.gamma = (1.0 - sigma) / tail_mass;
  law.probs.resize(static_cast<size_t>(n_max - 1));
  double mean = 0;
  for (int n = 2; n <= n_max; ++n) {
    double pn = law.gamma * std::pow(4.0, -eps_tail * n);
    law.probs[static_cast<size_t>(n - 2)] = pn;
    mean += std::ldexp(1.0, n) * pn;
  }
  law.mean_gap = mean;
  law.mean_cookies_per_site = 1.0 / mean;
  return law;
}

double renewal_sigma_for_mean(double target_mean, double eps_tail, int n_max) {
  if (target_mean <= 0) throw ConfigError("target mean must be positive");
  // mean cookies/site = 1/E[gap] and E[gap] is linear in (1 - sigma).
  double tail_mass = 0, weighted = 0;
  for (int n = 2; n <= n_max; ++n) {
    double w = std::pow(4.0, -eps_tail * n);
    tail_mass += w;
    weighted += std::ldexp(1.0, n) * w;
  }
  double one_minus_sigma = tail_mass / (target_mean * weighted);
  double sigma = 1.0 - one_minus_sigma;
  if (!(sigma > 0) || !(sigma < 1))
    throw ConfigError("no sigma in (0,1) achieves mean " + std::to_string(target_mean));
  // Coarser sufficient condition: sum_{n>=2} sigma^n >= target mean.
  double geo = sigma * sigma / (1.0 - sigma);
  if (geo < target_mean)
    throw ConfigError("sigma fails the condition sum sigma^n >= M for the requested mean");
  return sigma;
}

// --- EnvironmentState ---

EnvironmentState::EnvironmentState(EnvSpecPtr spec) : spec_(std::move(spec)) {
  if (!spec_) throw ConfigError("null environment spec");
  if (spec_->kind == EnvKind::ErgodicRenewal) {
    right_rng_ = Xoshiro256pp(derive_seed(spec_->env_seed, "env.renewal.right", 0));
    left_rng_ = Xoshiro256pp(derive_seed(spec_->env_seed, "env.renewal.left", 0));
    auto law = renewal_gap_law(spec_->sigma, spec_->eps_tail, spec_->n_max);
    gap_cdf_.push_back(law.sigma);
    gap_val_.push_back(0);
    for (int n = 2; n <= spec_->n_max; ++n) {
      gap_cdf_.push_back(gap_cdf_.back() + law.probs[static_cast<size_t>(n - 2)]);
      gap_val_.push_back(int64_t{1} << n);
    }
    gap_cdf_.back() = 1.0;  // absorb rounding into the last atom
  }
}

void EnvironmentState::extend_renewal(Site x) {
  auto draw_gap = [this](Xoshiro256pp& rng) {
    double u = rng.next_double();
    size_t i = 0;
    while (i + 1 < gap_cdf_.size() && u >= gap_cdf_[i]) ++i;
    return gap_val_[i];
  };
  // Right half: renewal points at partial sums S_k > 0; site s gets the
  // multiplicity of point s+1.
  while (x >= renewal_hi_) {
    Site chunk_hi = std::max<Site>(renewal_hi_ + 64, x + 1);
    while (static_cast<Site>(right_pos_) <= chunk_hi + 1) {
      int64_t g = draw_gap(right_rng_);
      right_pos_ += static_cast<uint64_t>(g);
      Site point = static_cast<Site>(right_pos_);
      if (point - 1 >= 0) {
        int32_t& c = piles_.ref(point - 1);
        if (c < 0) c = 0;
        ++c;
      }
    }
    for (Site s = renewal_hi_; s <= chunk_hi; ++s) {
      int32_t& c = piles_.ref(s);
      if (c < 0) c = 0;
    }
    renewal_hi_ = chunk_hi + 1;
  }
  // Left half: an independent mirrored draw from the same seed stream; site
  // -s (s >= 1) gets the multiplicity of mirrored point s.
  while (x < renewal_lo_) {
    Site chunk_lo = std::min<Site>(renewal_lo_ - 64, x);
    while (static_cast<Site>(left_pos_) <= -chunk_lo + 1) {
      int64_t g = draw_gap(left_rng_);
      left_pos_ += static_cast<uint64_t>(g);
      Site point = static_cast<Site>(left_pos_);
      if (point >= 1) {
        int32_t& c = piles_.ref(-point);
        if (c < 0) c = 0;
        ++c;
      }
    }
    for (Site s = chunk_lo; s < renewal_lo_; ++s) {
      int32_t& c = piles_.ref(s);
      if (c < 0) c = 0;
    }
    renewal_lo_ = chunk_lo;
  }
}

uint32_t EnvironmentState::renewal_pile(Site x) {
  int32_t c = piles_.get(x);
  if (c >= 0 && x >= renewal_lo_ && x < renewal_hi_) return static_cast<uint32_t>(c);
  extend_renewal(x);
  c = piles_.get(x);
  return c < 0 ? 0u : static_cast<uint32_t>(c);
}

EnvironmentState::StackView EnvironmentState::resolve(Site x) {
  int32_t h = memo_.get(x);
  if (h == -2) return StackView{};
  if (h >= 0) return table_[static_cast<size_t>(h)];

  StackView view;
  const EnvironmentSpec* s = spec_.get();
  while (s->kind == EnvKind::Patched) {
    const PatchOverride* found = nullptr;
    for (const auto& ov : s->overrides) {
      if (x >= ov.lo && x < ov.hi) {
        found = &ov;
        break;
      }
      if (ov.lo > x) break;  // sorted
    }
    if (found) {
      view.len = static_cast<uint32_t>(found->stack.size());
      view.levels = &found->stack.intensities;
      if (view.len == 0) {
        memo_.set(x, -2);
        return StackView{};
      }
      memo_.set(x, static_cast<int32_t>(table_.size()));
      table_.push_back(view);
      return view;
    }
    s = s->base.get();
  }
  switch (s->kind) {
    case EnvKind::Homogeneous:
      view.len = static_cast<uint32_t>(s->M);
      view.uniform_p = s->p;
      break;
    case EnvKind::OneSidedHomogeneous:
      if (x >= s->boundary) {
        view.len = static_cast<uint32_t>(s->M);
        view.uniform_p = s->p;
      }
      break;
    case EnvKind::ErgodicRenewal:
      view.len = renewal_pile(x);
      view.uniform_p = s->strength;
      break;
    case EnvKind::Explicit: {
      auto it = s->stacks.find(x);
      if (it != s->stacks.end()) {
        view.len = static_cast<uint32_t>(it->second.size());
        view.levels = &it->second.intensities;
      }
      break;
    }
    case EnvKind::Patched:
      break;  // unreachable
  }
  if (view.len == 0) {
    memo_.set(x, -2);
    return StackView{};
  }
  memo_.set(x, static_cast<int32_t>(table_.size()));
  table_.push_back(view);
  return view;
}

double EnvironmentState::intensity_at(Site x) {
  // Fast paths for the hot homogeneous kinds.
  const EnvironmentSpec& s = *spec_;
  if (s.kind == EnvKind::Homogeneous)
    return consumed_.get(x) < static_cast<uint32_t>(s.M) ? s.p : 0.5;
  if (s.kind == EnvKind::OneSidedHomogeneous)
    return (x >= s.boundary && consumed_.get(x) < static_cast<uint32_t>(s.M)) ? s.p : 0.5;
  StackView view = resolve(x);
  uint32_t c = consumed_.get(x);
  if (c >= view.len) return 0.5;
  return view.levels ? (*view.levels)[c] : view.uniform_p;
}

double EnvironmentState::intensity_with_consumed(Site x, uint32_t c) {
  StackView view = resolve(x);
  if (c >= view.len) return 0.5;
  return view.levels ? (*view.levels)[c] : view.uniform_p;
}

bool EnvironmentState::consume(Site x) {
  uint32_t len = stack_len(x);
  uint32_t c = consumed_.get(x);
  if (c >= len) return false;
  consumed_.set(x, static_cast<uint16_t>(c + 1));
  return true;
}

uint32_t EnvironmentState::stack_len(Site x) {
  const EnvironmentSpec& s = *spec_;
  if (s.kind == EnvKind::Homogeneous) return static_cast<uint32_t>(s.M);
  if (s.kind == EnvKind::OneSidedHomogeneous)
    return x >= s.boundary ? static_cast<uint32_t>(s.M) : 0u;
  return resolve(x).len;
}

std::map<Site, CookieStack> materialize_renewal(const EnvironmentSpec& spec, Site x_lo, Site x_hi) {
  if (spec.kind != EnvKind::ErgodicRenewal)
    throw ConfigError("materialize_renewal requires an ErgodicRenewal spec");
  if (x_lo > x_hi) throw ConfigError("materialize_renewal: x_lo must be <= x_hi");
  spec.validate();
  EnvironmentState state(std::make_shared<const EnvironmentSpec>(spec));
  std::map<Site, CookieStack> out;
  for (Site x = x_lo; x <= x_hi; ++x) {
    uint32_t len = state.stack_len(x);
    if (len > 0) out[x] = CookieStack::uniform(static_cast<int>(len), spec.strength);
  }
  return out;
}

// --- JSON serialization ---

static json stack_to_json(const CookieStack& stack) { return json(stack.intensities); }

static json spec_to_json_obj(const EnvironmentSpec& spec) {
  json j;
  switch (spec.kind) {
    case EnvKind::Homogeneous:
      j["variant"] = "homogeneous";
      j["M"] = spec.M;
      j["p"] = spec.p;
      break;
    case EnvKind::OneSidedHomogeneous:
      j["variant"] = "onesided";
      j["M"] = spec.M;
      j["p"] = spec.p;
      j["boundary"] = spec.boundary;
      break;
    case EnvKind::ErgodicRenewal:
      j["variant"] = "renewal";
      j["sigma"] = spec.sigma;
      j["eps_tail"] = spec.eps_tail;
      j["strength"] = spec.strength;
      j["n_max"] = spec.n_max;
      j["env_seed"] = spec.env_seed;
      break;
    case EnvKind::Explicit: {
      j["variant"] = "explicit";
      json st = json::object();
      for (const auto& [site, stack] : spec.stacks) st[std::to_string(site)] = stack_to_json(stack);
      j["stacks"] = st;
      break;
    }
    case EnvKind::Patched: {
      j["variant"] = "patched";
      j["base"] = spec_to_json_obj(*spec.base);
      json ovs = json::array();
      for (const auto& ov : spec.overrides)
        ovs.push_back({{"lo", ov.lo}, {"hi", ov.hi}, {"stack", stack_to_json(ov.stack)}});
      j["overrides"] = ovs;
      break;
    }
  }
  return j;
}

std::string env_to_json(const EnvironmentSpec& spec, int indent) {
  return spec_to_json_obj(spec).dump(indent);
}

template <typename T>
static T require_field(const json& j, const char* field) {
  if (!j.contains(field)) throw ConfigError(std::string("missing environment field '") + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("malformed environment field '") + field + "'");
  }
}

static EnvironmentSpec spec_from_json_obj(const json& j) {
  auto variant = require_field<std::string>(j, "variant");
  if (variant == "homogeneous")
    return EnvironmentSpec::homogeneous(require_field<int>(j, "M"), require_field<double>(j, "p"));
  if (variant == "onesided")
    return EnvironmentSpec::one_sided(require_field<int>(j, "M"), require_field<double>(j, "p"),
                                      require_field<Site>(j, "boundary"));
  if (variant == "renewal") {
    double strength = j.contains("strength") ? require_field<double>(j, "strength") : 0.75;
    int n_max = j.contains("n_max") ? require_field<int>(j, "n_max") : 20;
    return EnvironmentSpec::ergodic_renewal(require_field<double>(j, "sigma"),
                                            require_field<double>(j, "eps_tail"), n_max,
                                            require_field<uint64_t>(j, "env_seed"), strength);
  }
  if (variant == "explicit") {
    if (!j.contains("stacks")) throw ConfigError("missing environment field 'stacks'");
    std::map<Site, CookieStack> stacks;
    for (const auto& [key, val] : j.at("stacks").items()) {
      Site site;
      try {
        site = std::stoll(key);
      } catch (...) {
        throw ConfigError("malformed site key '" + key + "' in field 'stacks'");
      }
      try {
        stacks[site] = CookieStack(val.get<std::vector<double>>());
      } catch (const json::exception&) {
        throw ConfigError("malformed stack for site '" + key + "' in field 'stacks'");
      }
    }
    return EnvironmentSpec::explicit_env(std::move(stacks));
  }
  if (variant == "patched") {
    if (!j.contains("base")) throw ConfigError("missing environment field 'base'");
    EnvironmentSpec base_spec = spec_from_json_obj(j.at("base"));
    std::vector<PatchOverride> overrides;
    if (j.contains("overrides")) {
      for (const auto& ov : j.at("overrides")) {
        PatchOverride po;
        po.lo = require_field<Site>(ov, "lo");
        po.hi = require_field<Site>(ov, "hi");
        try {
          po.stack = CookieStack(ov.at("stack").get<std::vector<double>>());
        } catch (const json::exception&) {
          throw ConfigError("malformed environment field 'stack' in overrides");
        }
        overrides.push_back(std::move(po));
      }
    }
    return EnvironmentSpec::patched(std::move(base_spec), std::move(overrides));
  }
  throw ConfigError("unknown environment variant '" + variant + "'");
}

EnvironmentSpec env_from_string(const std::string& text) {
  // Shorthands: homogeneous:M,p and onesided:M,p,boundary
  auto parse_csv = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
  };
  auto starts_with = [&](const char* prefix) { return text.rfind(prefix, 0) == 0; };
  try {
    if (starts_with("homogeneous:")) {
      auto parts = parse_csv(text.substr(12));
      if (parts.size() != 2) throw ConfigError("shorthand homogeneous:M,p expects two values");
      auto s = EnvironmentSpec::homogeneous(std::stoi(parts[0]), std::stod(parts[1]));
      s.validate();
      return s;
    }
    if (starts_with("onesided:")) {
      auto parts = parse_csv(text.substr(9));
      if (parts.size() != 3) throw ConfigError("shorthand onesided:M,p,boundary expects three values");
      auto s = EnvironmentSpec::one_sided(std::stoi(parts[0]), std::stod(parts[1]),
                                          std::stoll(parts[2]));
      s.validate();
      return s;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError("malformed environment shorthand '" + text + "'");
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("environment JSON parse error: ") + e.what());
  }
  EnvironmentSpec spec = spec_from_json_obj(j);
  spec.validate();
  return spec;
}

}  // namespace erw
