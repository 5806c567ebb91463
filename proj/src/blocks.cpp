#include "erw/blocks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "erw/oracle.hpp"
#include "json.hpp"

namespace erw {

using nlohmann::json;

Site BlockConfig::kappa_sites() const { return std::llround(kappa / eps); }
Site BlockConfig::pitch_sites() const { return std::llround(L / eps); }
int64_t BlockConfig::visit_threshold() const { return std::max<int64_t>(1, std::llround(v / eps)); }
int BlockConfig::fine_cookies() const {
  return static_cast<int>(static_cast<int64_t>(M0) * visit_threshold());
}

void BlockConfig::validate() const {
  if (!(eps > 0) || !(eps < 0.5)) throw ConfigError("block config: eps must lie in (0, 1/2)");
  if (!(kappa > 0)) throw ConfigError("block config: kappa must be positive");
  if (!(L > 0)) throw ConfigError("block config: L must be positive");
  if (!(kappa < L / 2)) throw ConfigError("block config: requires kappa < L/2");
  if (kappa_sites() < 1) throw ConfigError("block config: region narrower than one site");
  if (pitch_sites() <= 2 * kappa_sites()) throw ConfigError("block config: blocks overlap");
  if (visit_threshold() < 1) throw ConfigError("block config: v/eps must be >= 1");
  if (M0 < 1) throw ConfigError("block config: M0 must be >= 1");
  if (!(c1 >= 0) || !(coarse_p() <= 1.0)) throw ConfigError("block config: invalid c1");
  if (fine_cookies() > 60000) throw ConfigError("block config: fine cookie stack too deep");
}

const char* tau_rule_name(TauRule r) {
  switch (r) {
    case TauRule::VisitThreshold: return "visit_threshold";
    case TauRule::LeftEdge: return "left_edge";
    case TauRule::RightNearEdge: return "right_near_edge";
    case TauRule::RightFarEdge: return "right_far_edge";
    case TauRule::None: return "none";
  }
  return "?";
}

double BlockTrace::max_tau_over_n() const {
  double best = 0;
  for (size_t i = 1; i < steps.size(); ++i)
    best = std::max(best, static_cast<double>(steps[i].tau) / static_cast<double>(i));
  return best;
}

std::string block_trace_to_csv(const BlockTrace& trace) {
  std::ostringstream os;
  os << "n,tau,Z,rule_fired,l_of_n\n";
  for (size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    os << i << "," << s.tau << "," << s.z << "," << tau_rule_name(s.rule) << "," << s.l << "\n";
  }
  return os.str();
}

namespace {

void parallel_for(int64_t count, int workers, const std::function<void(int64_t)>& fn) {
  if (workers <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    workers = hw == 0 ? 1 : static_cast<int>(hw);
  }
  workers = static_cast<int>(std::min<int64_t>(workers, count));
  if (workers <= 1) {
    for (int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto work = [&]() {
    for (;;) {
      int64_t i = next.fetch_add(1);
      if (i >= count) break;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
}

// Streaming tau/Z extraction fed one fine-walk position per step. The case
// split follows the visit tally of the current block (including the current
// visit): under M0 the epoch also stops on a per-epoch visit threshold
// inside the block, which keeps Z in place; edge touches move Z by one.
class BlockExtractor {
 public:
  BlockExtractor(const BlockConfig& config, BlockTrace* trace)
      : cfg_(config),
        kappa_s_(config.kappa_sites()),
        pitch_(config.pitch_sites()),
        vis_thr_(config.visit_threshold()),
        trace_(trace) {
    trace_->steps.push_back(BlockStep{0, 0, TauRule::None, 0});
    tally_[0] = 1;
    begin_epoch(0, 0);
  }

  // Feeds X_n; returns true when a block transition fired at this step.
  bool feed(Site x, int64_t n) {
    if (x >= win_lo_ && x <= win_hi_) {
      int64_t& c = window_[static_cast<size_t>(x - win_lo_)];
      ++c;
      if (visit_rule_armed_ && c > vis_thr_) {
        fire(z_, TauRule::VisitThreshold, x, n);
        return true;
      }
    }
    if (x == left_target_) {
      fire(z_ - 1, TauRule::LeftEdge, x, n);
      return true;
    }
    if (right_near_armed_ && x == right_near_) {
      fire(z_ + 1, TauRule::RightNearEdge, x, n);
      return true;
    }
    if (!right_near_armed_ && x == right_far_) {
      fire(z_ + 1, TauRule::RightFarEdge, x, n);
      return true;
    }
    return false;
  }

  int64_t current_block() const { return z_; }
  bool last_advance() const { return last_advance_; }
  bool last_under() const { return last_under_; }

 private:
  void fire(int64_t new_z, TauRule rule, Site x, int64_t n) {
    const bool under = tally_[z_] <= cfg_.M0;  // regime split for the advance tallies
    const bool advance = new_z == z_ + 1;
    if (under) {
      ++trace_->tot_under;
      if (advance) ++trace_->adv_under;
    } else {
      ++trace_->tot_over;
      if (advance) ++trace_->adv_over;
    }
    last_advance_ = advance;
    last_under_ = under;
    z_ = new_z;
    ++tally_[z_];
    trace_->steps.push_back(BlockStep{n, z_, rule, 0});
    begin_epoch(x, n);
  }

  void begin_epoch(Site x, int64_t) {
    win_lo_ = z_ * pitch_ - kappa_s_;
    win_hi_ = z_ * pitch_ + kappa_s_;
    window_.assign(static_cast<size_t>(win_hi_ - win_lo_ + 1), 0);
    if (x >= win_lo_ && x <= win_hi_) window_[static_cast<size_t>(x - win_lo_)] = 1;
    const bool under = tally_[z_] <= cfg_.M0 - 1;
    visit_rule_armed_ = under;
    left_target_ = (z_ - 1) * pitch_ + kappa_s_;
    right_near_ = (z_ + 1) * pitch_ - kappa_s_;
    right_far_ = (z_ + 1) * pitch_ + kappa_s_;
    right_near_armed_ = tally_[z_ + 1] <= cfg_.M0 - 1;
  }

  const BlockConfig& cfg_;
  const Site kappa_s_, pitch_;
  const int64_t vis_thr_;
  BlockTrace* trace_;

  int64_t z_ = 0;
  std::unordered_map<int64_t, int64_t> tally_;
  std::vector<int64_t> window_;
  Site win_lo_ = 0, win_hi_ = 0;
  Site left_target_ = 0, right_near_ = 0, right_far_ = 0;
  bool visit_rule_armed_ = true;
  bool right_near_armed_ = true;
  bool last_advance_ = false;
  bool last_under_ = true;
};

// One A1/A2 race of the zero-memory biased walker W. Returns the maximal
// per-site visit count inside the biased region over the whole race.
int64_t w_race_max_visits(const BlockConfig& cfg, Site start, uint64_t seed) {
  const Site kappa_s = cfg.kappa_sites();
  const Site pitch = cfg.pitch_sites();
  const Site right_target = pitch + kappa_s;
  const Site left_target = kappa_s - pitch;
  std::vector<int64_t> visits(static_cast<size_t>(2 * kappa_s + 1), 0);
  Xoshiro256pp rng(seed);
  Site x = start;
  int64_t max_visits = 0;
  if (x >= -kappa_s && x <= kappa_s) {
    visits[static_cast<size_t>(x + kappa_s)] = 1;
    max_visits = 1;
  }
  const double biased_q = 0.5 + cfg.eps;
  while (x != right_target && x != left_target) {
    const bool in_region = x >= -kappa_s && x <= kappa_s;
    const double q = in_region ? biased_q : 0.5;
    x += (rng.next_double() < q) ? 1 : -1;
    if (x >= -kappa_s && x <= kappa_s) {
      int64_t& c = visits[static_cast<size_t>(x + kappa_s)];
      ++c;
      if (c > max_visits) max_visits = c;
    }
  }
  return max_visits;
}

// Per-start samples of the race's maximal visit count.
std::vector<std::vector<int64_t>> a2_samples(const BlockConfig& cfg, int total_replicas,
                                             uint64_t seed, int workers) {
  const Site kappa_s = cfg.kappa_sites();
  const int64_t starts = 2 * kappa_s + 1;
  // The zero-hit Wilson 3-sigma upper bound is ~9/n; e^{-1/kappa} targets
  // need four figures of resolution per start.
  const int64_t per_start = std::max<int64_t>(1500, total_replicas / starts);
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(starts));
  for (auto& v : out) v.resize(static_cast<size_t>(per_start));
  parallel_for(starts * per_start, workers, [&](int64_t idx) {
    const int64_t s = idx / per_start;
    const int64_t r = idx % per_start;
    const Site start = -kappa_s + s;
    out[static_cast<size_t>(s)][static_cast<size_t>(r)] =
        w_race_max_visits(cfg, start, derive_seed(seed, "blocks.a2", static_cast<uint64_t>(idx)));
  });
  return out;
}

}  // namespace

EventProbabilities event_probabilities(const BlockConfig& config, int replicas, uint64_t seed,
                                       int workers) {
  config.validate();
  EventProbabilities out;
  const Site kappa_s = config.kappa_sites();
  out.p_a1_min = 1.0;
  for (Site start = -kappa_s; start <= kappa_s; ++start) {
    double h = birth_death_hit(BirthDeathSpec::biased_region(config.eps, config.kappa, config.L, start));
    out.p_a1_by_start.push_back(h);
    if (h < out.p_a1_min) {
      out.p_a1_min = h;
      out.argmin_start = start;
    }
  }
  auto samples = a2_samples(config, replicas, seed, workers);
  const int64_t thr = config.visit_threshold();
  double worst_p = -1;
  double worst_upper = 0;
  EstimateWithCI worst;
  for (const auto& per_start : samples) {
    int64_t hits = 0;
    for (int64_t m : per_start)
      if (m > thr) ++hits;
    EstimateWithCI e = proportion_estimate(hits, static_cast<int64_t>(per_start.size()));
    double up = wilson_upper(hits, static_cast<int64_t>(per_start.size()), 3.0);
    if (e.value > worst_p) {
      worst_p = e.value;
      worst = e;
    }
    worst_upper = std::max(worst_upper, up);
  }
  out.p_a2 = worst;
  out.p_a2_upper = worst_upper;
  out.p_a_lower = out.p_a1_min - out.p_a2_upper;
  return out;
}

A2Sweep a2_sweep(const BlockConfig& config, int v_max, int replicas, uint64_t seed, int workers) {
  config.validate();
  if (v_max < 1) throw ConfigError("a2_sweep requires v_max >= 1");
  auto samples = a2_samples(config, replicas, seed, workers);
  A2Sweep sweep;
  sweep.replicas_per_start = static_cast<int64_t>(samples.front().size());
  for (int v = 1; v <= v_max; ++v) {
    const int64_t thr = std::max<int64_t>(1, std::llround(static_cast<double>(v) / config.eps));
    double worst_p = 0, worst_up = 0;
    for (const auto& per_start : samples) {
      int64_t hits = 0;
      for (int64_t m : per_start)
        if (m > thr) ++hits;
      worst_p = std::max(worst_p,
                         static_cast<double>(hits) / static_cast<double>(per_start.size()));
      worst_up = std::max(worst_up, wilson_upper(hits, static_cast<int64_t>(per_start.size()), 3.0));
    }
    sweep.p_by_v.push_back(worst_p);
    sweep.upper_by_v.push_back(worst_up);
  }
  return sweep;
}

BlockTrace extract_blocks(const std::vector<Site>& path, const BlockConfig& config) {
  config.validate();
  if (!path.empty() && path.front() != 0)
    throw ConfigError("extract_blocks expects a path started at the origin");
  BlockTrace trace;
  BlockExtractor extractor(config, &trace);
  for (size_t n = 1; n < path.size(); ++n)
    extractor.feed(path[n], static_cast<int64_t>(n));
  trace.censored = true;  // a finite path always ends mid-epoch
  return trace;
}

CoupledRun coupled_run(const BlockConfig& config, int64_t horizon, uint64_t seed) {
  config.validate();
  CoupledRun run;

  auto fine_env = make_spec(EnvironmentSpec::homogeneous(config.fine_cookies(), config.fine_p()));
  WalkState fine(fine_env, derive_seed(seed, "blocks.fine", 0));

  auto coarse_env = make_spec(EnvironmentSpec::homogeneous(config.M0, config.coarse_p()));
  EnvironmentState coarse(coarse_env);
  Xoshiro256pp coarse_rng(derive_seed(seed, "blocks.coarse", 0));
  int64_t coarse_x = 0;
  int64_t coarse_steps = 0;
  const int64_t coarse_budget = 20 * horizon + 1'000'000;
  run.coarse_positions.push_back(0);

  BlockExtractor extractor(config, &run.fine);
  run.min_domination_gap = 0;
  const double kappa1 = config.kappa1();

  auto coarse_step_free = [&]() {
    const double q = coarse.intensity_at(coarse_x);
    coarse.consume(coarse_x);
    coarse_x += (coarse_rng.next_double() < q) ? 1 : -1;
    ++coarse_steps;
    run.coarse_positions.push_back(coarse_x);
  };

  while (fine.n < horizon) {
    const Site x = step(fine);
    if (!extractor.feed(x, fine.n)) continue;

    // A block transition fired: advance the coarse walk by one coupled step.
    const bool advance = extractor.last_advance();
    const bool under = extractor.last_under();
    const double q_hat = under ? 0.5 + config.c1 * config.kappa : 0.5;
    const double q_c = coarse.intensity_at(coarse_x);
    double ratio = q_c / q_hat;
    if (ratio > 1.0 + 1e-12) {
      // Possible only if the coarse walk still holds a cookie at an
      // over-visited block, which the visit-count invariant excludes.
      ++run.precondition_violations;
      ratio = 1.0;
    }
    coarse.consume(coarse_x);
    const bool coarse_right = advance && coarse_rng.next_double() < ratio;
    coarse_x += coarse_right ? 1 : -1;
    ++coarse_steps;
    run.coarse_positions.push_back(coarse_x);

    const int64_t z_new = extractor.current_block();
    while (coarse_x != z_new && coarse_steps < coarse_budget) coarse_step_free();
    if (coarse_x != z_new) {
      run.meeting_resolved = false;
      run.fine.censored = true;
      break;
    }
    run.fine.steps.back().l = coarse_steps;
    const double gap =
        config.eps * static_cast<double>(fine.x) / config.L - static_cast<double>(coarse_x);
    run.min_domination_gap = std::min(run.min_domination_gap, gap);
    if (gap < -kappa1 - 1e-9) run.domination_ok = false;
  }
  if (!run.meeting_resolved) run.domination_ok = false;
  run.max_tau_over_n = run.fine.max_tau_over_n();
  return run;
}

CalibrationResult calibrate(const CalibrationSearch& search, uint64_t seed, int workers) {
  CalibrationResult best;
  for (double eps : search.epss) {
    for (double kappa : search.kappas) {
      for (double L : search.Ls) {
        BlockConfig cfg;
        cfg.eps = eps;
        cfg.kappa = kappa;
        cfg.L = L;
        cfg.v = 1;
        cfg.M0 = 4;
        try {
          cfg.validate();
        } catch (const ConfigError&) {
          continue;
        }
        const Site kappa_s = cfg.kappa_sites();
        double p_a1_min = 1.0;
        for (Site start = -kappa_s; start <= kappa_s; ++start)
          p_a1_min = std::min(p_a1_min,
                              birth_death_hit(BirthDeathSpec::biased_region(eps, kappa, L, start)));
        const double needed = 0.5 + search.margin_coeff * kappa;
        const double a2_budget = std::min(p_a1_min - needed, std::exp(-1.0 / kappa));
        if (a2_budget <= 0) continue;

        A2Sweep sweep = a2_sweep(cfg, search.v_max, search.replicas,
                                 derive_seed(seed, "calibrate", 0), workers);
        int chosen_v = 0;
        for (int v = 1; v <= search.v_max; ++v) {
          if (sweep.upper_by_v[static_cast<size_t>(v - 1)] < a2_budget) {
            chosen_v = v;
            break;
          }
        }
        if (chosen_v == 0) continue;

        CalibrationResult result;
        result.ok = true;
        result.L = L;
        result.kappa = kappa;
        result.eps_max = eps;
        result.v = chosen_v;
        result.p_a1_min = p_a1_min;
        result.p_a2_max = sweep.upper_by_v[static_cast<size_t>(chosen_v - 1)];
        result.margin = p_a1_min - result.p_a2_max - 0.5;
        result.c0 = (p_a1_min - 0.5) / kappa;
        result.c1 = result.margin / kappa;
        const double coarse_delta_target = 2.4;
        result.M0 = std::max(4, static_cast<int>(std::ceil(
                                    coarse_delta_target / (2 * result.c1 * kappa))));
        result.note = "exact A1 minimum over starts; A2 upper bound is Wilson 3-sigma, "
                      "worst start, within the A1 race window";
        return result;
      }
    }
  }
  best.note = "no tuple in the search box satisfied the margin and the A2 target";
  return best;
}

std::string calibration_to_json(const CalibrationResult& result, int indent) {
  json j;
  j["ok"] = result.ok;
  j["L"] = result.L;
  j["kappa"] = result.kappa;
  j["eps_max"] = result.eps_max;
  j["v"] = result.v;
  j["M0"] = result.M0;
  j["c0"] = result.c0;
  j["c1"] = result.c1;
  j["P_A1_min"] = result.p_a1_min;
  j["P_A2_max"] = result.p_a2_max;
  j["margin"] = result.margin;
  j["note"] = result.note;
  return j.dump(indent);
}

CalibrationResult calibration_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("calibration JSON parse error: ") + e.what());
  }
  CalibrationResult r;
  try {
    r.ok = j.value("ok", true);
    r.L = j.at("L").get<double>();
    r.kappa = j.at("kappa").get<double>();
    r.eps_max = j.at("eps_max").get<double>();
    r.v = j.at("v").get<double>();
    r.M0 = j.at("M0").get<int>();
    r.c0 = j.value("c0", 0.0);
    r.c1 = j.at("c1").get<double>();
    r.p_a1_min = j.value("P_A1_min", 0.0);
    r.p_a2_max = j.value("P_A2_max", 0.0);
    r.margin = j.value("margin", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("calibration JSON missing field: ") + e.what());
  }
  return r;
}

}  // namespace erw
