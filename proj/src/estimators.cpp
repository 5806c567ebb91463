#include "erw/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace erw {

using nlohmann::json;

static int resolve_workers(int workers) {
  if (workers > 0) return workers;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void for_each_replica(const ReplicaPlan& plan, int workers,
                      const std::function<void(int, const TrajectoryRecord&, EnvironmentState&)>& sink) {
  if (!plan.env) throw ConfigError("replica plan requires an environment");
  if (plan.replicas < 1) throw ConfigError("replicas must be >= 1");
  const int nthreads = std::min(resolve_workers(workers), plan.replicas);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= plan.replicas || failed.load()) break;
      try {
        WalkState w(plan.env, derive_seed(plan.base_seed, "walk", static_cast<uint64_t>(i)),
                    plan.start);
        TrajectoryRecord rec = run_until(w, plan.stop, plan.budget, plan.flags);
        sink(i, rec, w.env);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        break;
      }
    }
  };
  if (nthreads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

std::vector<TrajectoryRecord> run_replicas(const ReplicaPlan& plan, int workers) {
  std::vector<TrajectoryRecord> out(static_cast<size_t>(plan.replicas));
  for_each_replica(plan, workers, [&](int i, const TrajectoryRecord& rec, EnvironmentState&) {
    out[static_cast<size_t>(i)] = rec;
  });
  return out;
}

double wilson_lower(int64_t k, int64_t n, double z) {
  if (n <= 0) return 0;
  const double p = static_cast<double>(k) / static_cast<double>(n);
  const double z2n = z * z / static_cast<double>(n);
  const double center = p + z2n / 2;
  const double rad = z * std::sqrt(p * (1 - p) / static_cast<double>(n) + z2n / (4.0 * n));
  return std::max(0.0, (center - rad) / (1 + z2n));
}

double wilson_upper(int64_t k, int64_t n, double z) {
  if (n <= 0) return 1;
  const double p = static_cast<double>(k) / static_cast<double>(n);
  const double z2n = z * z / static_cast<double>(n);
  const double center = p + z2n / 2;
  const double rad = z * std::sqrt(p * (1 - p) / static_cast<double>(n) + z2n / (4.0 * n));
  return std::min(1.0, (center + rad) / (1 + z2n));
}

EstimateWithCI proportion_estimate(int64_t k, int64_t n) {
  EstimateWithCI e;
  e.method = "wilson";
  e.n = n;
  if (n > 0) {
    e.value = static_cast<double>(k) / static_cast<double>(n);
    e.stderr_ = std::sqrt(e.value * (1 - e.value) / static_cast<double>(n));
  }
  return e;
}

EstimateWithCI mean_estimate(const std::vector<double>& xs) {
  EstimateWithCI e;
  e.method = "mean";
  e.n = static_cast<int64_t>(xs.size());
  if (xs.empty()) return e;
  double sum = 0;
  for (double x : xs) sum += x;
  e.value = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - e.value) * (x - e.value);
    e.stderr_ = std::sqrt(ss / (static_cast<double>(xs.size()) - 1) / static_cast<double>(xs.size()));
  }
  return e;
}

EstimateWithCI hill_estimator(std::vector<double> xs, double top_frac, int k_min) {
  EstimateWithCI e;
  e.method = "hill";
  e.n = static_cast<int64_t>(xs.size());
  if (xs.size() < 2) {
    e.value = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  std::sort(xs.begin(), xs.end(), std::greater<double>());
  size_t k = std::max<size_t>(static_cast<size_t>(k_min),
                              static_cast<size_t>(top_frac * static_cast<double>(xs.size())));
  if (k >= xs.size()) k = xs.size() - 1;
  double sum = 0;
  const double ref = std::log(xs[k]);
  for (size_t i = 0; i < k; ++i) sum += std::log(xs[i]) - ref;
  if (sum <= 0) {
    e.value = std::numeric_limits<double>::infinity();
    e.stderr_ = std::numeric_limits<double>::infinity();
    return e;
  }
  e.value = static_cast<double>(k) / sum;
  e.stderr_ = e.value / std::sqrt(static_cast<double>(k));
  return e;
}

std::vector<EstimateWithCI> speed_estimate(const ReplicaPlan& plan,
                                           const std::vector<int64_t>& horizons, int workers) {
  if (horizons.empty()) throw ConfigError("speed_estimate requires at least one horizon");
  for (size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1]) throw ConfigError("horizons must be ascending");
  if (horizons.front() < 1) throw ConfigError("horizons must be >= 1");
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::time_horizon(horizons.back());
  run.budget = std::max(run.budget, horizons.back());
  run.flags.sample_points = horizons;
  auto per_replica = map_replicas<std::vector<double>>(
      run, workers, [&](const TrajectoryRecord& rec, EnvironmentState&) {
        std::vector<double> xs(horizons.size(), std::numeric_limits<double>::quiet_NaN());
        for (const auto& s : rec.samples) {
          auto it = std::lower_bound(horizons.begin(), horizons.end(), s.n);
          if (it != horizons.end() && *it == s.n)
            xs[static_cast<size_t>(it - horizons.begin())] = static_cast<double>(s.x);
        }
        return xs;
      });
  std::vector<EstimateWithCI> out;
  for (size_t h = 0; h < horizons.size(); ++h) {
    std::vector<double> speeds;
    speeds.reserve(per_replica.size());
    for (const auto& xs : per_replica)
      if (!std::isnan(xs[h])) speeds.push_back(xs[h] / static_cast<double>(horizons[h]));
    EstimateWithCI e = mean_estimate(speeds);
    e.censored_fraction = 1.0 - static_cast<double>(speeds.size()) /
                                    static_cast<double>(per_replica.size());
    out.push_back(e);
  }
  return out;
}

std::vector<EstimateWithCI> level_speed_estimate(const ReplicaPlan& plan,
                                                 const std::vector<Site>& levels, int workers) {
  if (levels.empty()) throw ConfigError("level_speed_estimate requires at least one level");
  for (Site l : levels)
    if (l == 0) throw ConfigError("levels must be nonzero");
  Site far = *std::max_element(levels.begin(), levels.end(),
                               [](Site a, Site b) { return std::llabs(a) < std::llabs(b); });
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::hit_level(far);
  auto per_replica = map_replicas<std::vector<double>>(
      run, workers, [&](const TrajectoryRecord& rec, EnvironmentState&) {
        std::vector<double> ts(levels.size(), std::numeric_limits<double>::quiet_NaN());
        for (size_t i = 0; i < levels.size(); ++i)
          if (auto t = rec.hit_time(levels[i]))
            ts[i] = static_cast<double>(*t) / static_cast<double>(std::llabs(levels[i]));
        return ts;
      });
  std::vector<EstimateWithCI> out;
  for (size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> vals;
    for (const auto& ts : per_replica)
      if (!std::isnan(ts[i])) vals.push_back(ts[i]);
    EstimateWithCI e = mean_estimate(vals);
    e.censored_fraction =
        1.0 - static_cast<double>(vals.size()) / static_cast<double>(per_replica.size());
    out.push_back(e);
  }
  return out;
}

EstimateWithCI truncated_crossing_mean(const ReplicaPlan& plan, Site V, double m, int workers) {
  if (V < 1) throw ConfigError("truncated_crossing_mean requires V >= 1");
  if (m < 1) throw ConfigError("truncated_crossing_mean requires m >= 1");
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::hit_level(V);
  // Censoring must imply T_V/V >= m so censored replicas contribute exactly m.
  run.budget = std::max(run.budget, static_cast<int64_t>(std::ceil(m * static_cast<double>(V))) + 1);
  auto values = map_replicas<double>(run, workers,
                                     [&](const TrajectoryRecord& rec, EnvironmentState&) {
                                       if (auto t = rec.hit_time(V))
                                         return std::min(m, static_cast<double>(*t) /
                                                                static_cast<double>(V));
                                       return m;
                                     });
  return mean_estimate(values);
}

CrossingTail crossing_tail(const ReplicaPlan& plan, Site x_lo, Site x_hi,
                           const std::vector<int64_t>& m_grid, int workers) {
  if (x_lo > x_hi) throw ConfigError("crossing_tail requires x_lo <= x_hi");
  CrossingTail out;
  if (plan.env->kind == EnvKind::Homogeneous && plan.env->delta() <= 1.0) out.vacuous = true;
  auto per_replica = map_replicas<std::vector<double>>(
      plan, workers, [&](const TrajectoryRecord& rec, EnvironmentState&) {
        std::vector<double> deltas;
        Site hi = std::min(x_hi, rec.max_x - 1);
        for (Site x = x_lo; x <= hi; ++x) {
          int64_t t0 = rec.first_hit.get(x);
          int64_t t1 = rec.first_hit.get(x + 1);
          if (t0 >= 0 && t1 >= 0 && t1 > t0) deltas.push_back(static_cast<double>(t1 - t0));
        }
        return deltas;
      });
  std::vector<double> pooled;
  for (const auto& d : per_replica) pooled.insert(pooled.end(), d.begin(), d.end());
  out.crossings = static_cast<int64_t>(pooled.size());
  out.low_power = pooled.size() < 100;
  for (int64_t m : m_grid) {
    int64_t k = 0;
    for (double d : pooled)
      if (d >= static_cast<double>(m)) ++k;
    out.survival.emplace_back(m, proportion_estimate(k, out.crossings));
  }
  out.hill = hill_estimator(pooled);
  return out;
}

EstimateWithCI leftover_density(const ReplicaPlan& plan, Site s_lo, Site s_hi, Site margin,
                                int workers) {
  if (s_lo > s_hi) throw ConfigError("leftover_density requires s_lo <= s_hi");
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::hit_level(s_hi + margin);
  struct Row {
    double mean = 0;
    bool ok = false;
  };
  auto rows = map_replicas<Row>(run, workers, [&](const TrajectoryRecord& rec,
                                                  EnvironmentState& env) {
    Row row;
    if (rec.censored() || rec.final_x < s_hi + margin) return row;  // margin violated
    double total = 0;
    for (Site s = s_lo; s <= s_hi; ++s) total += static_cast<double>(env.leftover(s));
    row.mean = total / static_cast<double>(s_hi - s_lo + 1);
    row.ok = true;
    return row;
  });
  std::vector<double> vals;
  for (const auto& row : rows)
    if (row.ok) vals.push_back(row.mean);
  EstimateWithCI e = mean_estimate(vals);
  e.censored_fraction =
      1.0 - static_cast<double>(vals.size()) / static_cast<double>(rows.size());
  return e;
}

ExcursionCensus excursion_census(const ReplicaPlan& plan, Site s_lo, Site s_hi, int k0,
                                 const std::vector<int>& g_exponents, Site margin, int workers) {
  if (s_lo > s_hi) throw ConfigError("excursion_census requires s_lo <= s_hi");
  if (k0 < 0) throw ConfigError("excursion_census requires k0 >= 0");
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::hit_level(s_hi + margin);
  run.flags.track_excursions = true;
  run.flags.excursion_cap = k0;
  run.flags.g_exponents = g_exponents;
  struct Tally {
    std::vector<int64_t> hist;  // excursion counts 0..k0, then ">k0" bucket
    std::vector<int64_t> g_counts;
    int64_t sites = 0;
    bool ok = false;
  };
  auto tallies = map_replicas<Tally>(run, workers, [&](const TrajectoryRecord& rec,
                                                       EnvironmentState&) {
    Tally t;
    t.hist.assign(static_cast<size_t>(k0) + 2, 0);
    t.g_counts.assign(g_exponents.size(), 0);
    if (rec.censored() || rec.final_x < s_hi + margin) return t;
    for (Site s = s_lo; s <= s_hi; ++s) {
      int64_t c = rec.excursions.get(s);
      t.hist[static_cast<size_t>(std::min<int64_t>(c, k0 + 1))]++;
      ++t.sites;
      for (size_t i = 0; i < g_exponents.size(); ++i)
        if (rec.g_hit[i].get(s)) ++t.g_counts[i];
    }
    t.ok = true;
    return t;
  });
  ExcursionCensus census;
  std::vector<int64_t> hist(static_cast<size_t>(k0) + 2, 0);
  std::vector<int64_t> g_counts(g_exponents.size(), 0);
  int64_t used = 0;
  for (const auto& t : tallies) {
    if (!t.ok) continue;
    ++used;
    census.sites += t.sites;
    for (size_t i = 0; i < hist.size(); ++i) hist[i] += t.hist[i];
    for (size_t i = 0; i < g_counts.size(); ++i) g_counts[i] += t.g_counts[i];
  }
  census.censored_fraction =
      1.0 - static_cast<double>(used) / static_cast<double>(tallies.size());
  census.c_l.assign(static_cast<size_t>(k0) + 1, 0.0);
  int64_t le_k0 = 0;
  for (int l = 0; l <= k0; ++l) {
    census.c_l[static_cast<size_t>(l)] =
        census.sites > 0 ? static_cast<double>(hist[static_cast<size_t>(l)]) /
                               static_cast<double>(census.sites)
                         : 0.0;
    le_k0 += hist[static_cast<size_t>(l)];
  }
  census.frac_le_k0 =
      census.sites > 0 ? static_cast<double>(le_k0) / static_cast<double>(census.sites) : 0.0;
  for (size_t i = 0; i < g_exponents.size(); ++i)
    census.g_density[g_exponents[i]] = proportion_estimate(g_counts[i], census.sites);
  return census;
}

EstimateWithCI escape_probability(const ReplicaPlan& plan, Site level, int workers) {
  ReplicaPlan run = plan;
  run.stop = StoppingCondition::second_passage(level, plan.start);
  struct Flags {
    bool reached = false;
    bool returned = false;
  };
  auto rows = map_replicas<Flags>(run, workers,
                                  [&](const TrajectoryRecord& rec, EnvironmentState&) {
                                    Flags f;
                                    f.reached = rec.hit_time(level).has_value();
                                    f.returned = rec.termination == Termination::SecondPassage;
                                    return f;
                                  });
  int64_t escaped = 0;
  for (const auto& f : rows)
    if (f.reached && !f.returned) ++escaped;
  EstimateWithCI e = proportion_estimate(escaped, static_cast<int64_t>(rows.size()));
  e.censored_fraction = e.value;  // escapes are exactly the budget-censored runs
  return e;
}

// --- lemma verification ---

std::optional<LemmaId> lemma_from_string(const std::string& name) {
  if (name == "1" || name == "l1") return LemmaId::L1;
  if (name == "3" || name == "l3") return LemmaId::L3;
  if (name == "4" || name == "l4") return LemmaId::L4;
  if (name == "5" || name == "l5") return LemmaId::L5;
  if (name == "cor1") return LemmaId::Cor1;
  if (name == "comp0") return LemmaId::Comp0;
  if (name == "comp2") return LemmaId::Comp2;
  return std::nullopt;
}

const char* lemma_name(LemmaId id) {
  switch (id) {
    case LemmaId::L1: return "1";
    case LemmaId::L3: return "3";
    case LemmaId::L4: return "4";
    case LemmaId::L5: return "5";
    case LemmaId::Cor1: return "cor1";
    case LemmaId::Comp0: return "comp0";
    case LemmaId::Comp2: return "comp2";
  }
  return "?";
}

namespace {

double param_or(const std::map<std::string, double>& params, const std::string& key,
                double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

// Spreads `total` cookies of intensity p over the W sites of [lo, hi),
// deterministically and as evenly as possible, stacking at most `cap` per
// site. Returns per-site overrides.
std::vector<PatchOverride> distribute_cookies(Site lo, Site hi, int64_t total, int cap, double p) {
  const int64_t width = hi - lo;
  if (width <= 0) throw ConfigError("cookie interval must be non-empty");
  if (total > width * static_cast<int64_t>(cap))
    throw ConfigError("interval too small for the requested cookies at this per-site cap");
  std::vector<int> depth(static_cast<size_t>(width), static_cast<int>(total / width));
  int64_t rem = total % width;
  for (int64_t k = 0; k < rem; ++k) {
    // Even spacing of the remainder.
    size_t idx = static_cast<size_t>((k * width + width / 2) / rem);
    if (idx >= depth.size()) idx = depth.size() - 1;
    while (depth[idx] >= cap) idx = (idx + 1) % depth.size();
    ++depth[idx];
  }
  std::vector<PatchOverride> overrides;
  for (int64_t i = 0; i < width; ++i) {
    if (depth[static_cast<size_t>(i)] == 0) continue;
    PatchOverride ov;
    ov.lo = lo + i;
    ov.hi = lo + i + 1;
    ov.stack = CookieStack::uniform(depth[static_cast<size_t>(i)], p);
    overrides.push_back(std::move(ov));
  }
  return overrides;
}

EnvSpecPtr sparse_env(Site lo, Site hi, int64_t total, int cap, double p) {
  return make_spec(EnvironmentSpec::patched(EnvironmentSpec::homogeneous(0, 0.6),
                                            distribute_cookies(lo, hi, total, cap, p)));
}

}  // namespace

LemmaReport verify_lemma_bound(LemmaId id, std::map<std::string, double> params, uint64_t seed,
                               int workers) {
  LemmaReport report;
  report.lemma = lemma_name(id);
  switch (id) {
    case LemmaId::L1: {
      const int64_t N = static_cast<int64_t>(param_or(params, "N", 200));
      const double alpha = param_or(params, "alpha", 1.0);
      const int M = static_cast<int>(param_or(params, "M", 3));
      const double p = param_or(params, "p", 0.7);
      const int replicas = static_cast<int>(param_or(params, "replicas", 20000));
      const int64_t budget = static_cast<int64_t>(param_or(params, "budget", 2e6));
      const Site K = static_cast<Site>(std::ceil(alpha * static_cast<double>(N)));
      if (K < 1 || K > N) throw ConfigError("lemma 1 requires 0 < alpha <= 1");
      const int64_t cookie_target =
          static_cast<int64_t>(std::ceil(M * alpha * static_cast<double>(N) / 4.0));
      ReplicaPlan plan;
      plan.env = make_spec(EnvironmentSpec::patched(
          EnvironmentSpec::homogeneous(0, 0.6),
          {PatchOverride{-K + 1, 1, CookieStack::uniform(M, p)}}));
      plan.stop = StoppingCondition::first_of({StoppingCondition::hit_level(-N),
                                               StoppingCondition::cookies_eaten(cookie_target)});
      plan.budget = budget;
      plan.replicas = replicas;
      plan.base_seed = seed;
      int64_t hits = 0, censored = 0;
      for_each_replica(plan, workers, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
        if (rec.termination == Termination::HitLevel)
          ++hits;
        else if (rec.censored())
          ++censored;
      });
      // Censored races count as hits: conservative against passing.
      report.empirical = proportion_estimate(hits + censored, replicas);
      report.empirical.censored_fraction =
          static_cast<double>(censored) / static_cast<double>(replicas);
      report.bound = 2.0 * M / (alpha * static_cast<double>(N));
      report.pass = report.empirical.value <= report.bound + 3 * report.empirical.stderr_;
      report.note = "P(reach -N before eating M*alpha*N/4 cookies) <= 2M/(alpha N)";
      params["N"] = static_cast<double>(N);
      params["alpha"] = alpha;
      params["M"] = M;
      params["p"] = p;
      params["replicas"] = replicas;
      break;
    }
    case LemmaId::L3: {
      const int64_t N = static_cast<int64_t>(param_or(params, "N", 50));
      const double c = param_or(params, "c", 1.0);
      const double gamma = param_or(params, "gamma", 0.5);
      const double p = param_or(params, "p", 0.7);
      const int M_cap = static_cast<int>(param_or(params, "M", 3));
      const int replicas = static_cast<int>(param_or(params, "replicas", 20000));
      const Site left = -static_cast<Site>(std::llround(c * static_cast<double>(N)));
      int64_t total = static_cast<int64_t>(std::floor(gamma * static_cast<double>(N)));
      if (static_cast<double>(total) >= gamma * static_cast<double>(N) && total > 0) --total;
      ReplicaPlan plan;
      plan.env = total > 0 ? sparse_env(left + 1, N, total, M_cap, p)
                           : make_spec(EnvironmentSpec::homogeneous(0, 0.6));
      plan.stop = StoppingCondition::first_of(
          {StoppingCondition::hit_level(left), StoppingCondition::hit_level(N)});
      plan.budget = static_cast<int64_t>(param_or(params, "budget", 200.0 * N * N));
      plan.replicas = replicas;
      plan.base_seed = seed;
      int64_t left_exits = 0, censored = 0;
      for_each_replica(plan, workers, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
        if (rec.censored())
          ++censored;
        else if (rec.final_x == left)
          ++left_exits;
      });
      report.empirical = proportion_estimate(left_exits, replicas);
      report.empirical.censored_fraction =
          static_cast<double>(censored) / static_cast<double>(replicas);
      report.bound = (1.0 - gamma * (2 * p - 1)) / (1.0 + c + 2.0 / static_cast<double>(N));
      report.pass = report.empirical.value >= report.bound - 3 * report.empirical.stderr_;
      report.note = "P(hit -cN before N) >= (1 - gamma(2p-1)) / (1 + c + 2/N)";
      params["N"] = static_cast<double>(N);
      params["c"] = c;
      params["gamma"] = gamma;
      params["p"] = p;
      params["cookies"] = static_cast<double>(total);
      params["replicas"] = replicas;
      break;
    }
    case LemmaId::L4: {
      const int64_t N = static_cast<int64_t>(param_or(params, "N", 64));
      const double gamma = param_or(params, "gamma", 1.25);
      const double p = param_or(params, "p", 0.7);
      const int M_cap = static_cast<int>(param_or(params, "M", 3));
      const int replicas = static_cast<int>(param_or(params, "replicas", 4000));
      if (!(gamma * (2 * p - 1) < 1)) throw ConfigError("lemma 4 requires gamma(2p-1) < 1");
      int64_t total = static_cast<int64_t>(std::floor(gamma * static_cast<double>(N)));
      if (static_cast<double>(total) >= gamma * static_cast<double>(N) && total > 0) --total;
      ReplicaPlan plan;
      plan.env = total > 0 ? sparse_env(-N + 1, N, total, M_cap, p)
                           : make_spec(EnvironmentSpec::homogeneous(0, 0.6));
      plan.stop = StoppingCondition::first_of(
          {StoppingCondition::hit_level(-N), StoppingCondition::hit_level(N + 1)});
      plan.budget = static_cast<int64_t>(param_or(params, "budget", 50.0 * N * N));
      plan.replicas = replicas;
      plan.base_seed = seed;
      const int64_t threshold = N * N / 2;
      int64_t slow = 0;
      for_each_replica(plan, workers, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
        // Censored runs are still inside the interval, so their exit time
        // certainly exceeds N^2/2.
        if (rec.censored() || rec.final_n > threshold) ++slow;
      });
      report.empirical = proportion_estimate(slow, replicas);
      report.bound = 0.0;  // c0 > 0 exists; we report the empirical constant
      report.pass = report.empirical.value - 3 * report.empirical.stderr_ > 0;
      report.note = "P(exit (-N, N] after N^2/2) bounded away from 0; empirical value reported";
      params["N"] = static_cast<double>(N);
      params["gamma"] = gamma;
      params["p"] = p;
      params["cookies"] = static_cast<double>(total);
      params["replicas"] = replicas;
      break;
    }
    case LemmaId::L5: {
      const int k = static_cast<int>(param_or(params, "k", 9));
      const double eps = param_or(params, "eps", 0.02);
      const int64_t Nsub = static_cast<int64_t>(param_or(params, "Nsub", 8));
      const double b = param_or(params, "b", 1.0);
      const int M_cap = static_cast<int>(param_or(params, "M", 3));
      const double p = param_or(params, "p", 0.7);
      const int replicas = static_cast<int>(param_or(params, "replicas", 1000));
      const Site R = Site{1} << k;
      if (!(eps * (2 * p - 1) <= 1.0 / static_cast<double>(Nsub * Nsub)))
        throw ConfigError("lemma 5 requires eps(2p-1) <= N^-2");
      // (i) each of the Nsub left subintervals holds at most b*2^k/N cookies;
      // (ii) [0, 2^k) holds at most eps*2^k cookies.
      std::vector<PatchOverride> overrides;
      const int64_t per_block =
          static_cast<int64_t>(std::floor(b * static_cast<double>(R) / static_cast<double>(Nsub)));
      for (int64_t i = 0; i < Nsub; ++i) {
        Site blk_lo = -((i + 1) * R) / Nsub + 1;
        Site blk_hi = -(i * R) / Nsub + 1;  // (-(i+1)R/N, -iR/N] as [lo, hi)
        auto ovs = distribute_cookies(blk_lo, blk_hi, per_block, M_cap, p);
        overrides.insert(overrides.end(), ovs.begin(), ovs.end());
      }
      const int64_t right_total = static_cast<int64_t>(std::floor(eps * static_cast<double>(R)));
      if (right_total > 0) {
        auto ovs = distribute_cookies(1, R, right_total, M_cap, p);
        overrides.insert(overrides.end(), ovs.begin(), ovs.end());
      }
      ReplicaPlan plan;
      plan.env = make_spec(
          EnvironmentSpec::patched(EnvironmentSpec::homogeneous(0, 0.6), std::move(overrides)));
      plan.stop = StoppingCondition::first_of(
          {StoppingCondition::hit_level(-R), StoppingCondition::hit_level(R)});
      plan.budget = static_cast<int64_t>(param_or(params, "budget", 80.0 * R * R));
      plan.replicas = replicas;
      plan.base_seed = seed;
      const double leftover_cap = eps * static_cast<double>(2 * R);
      int64_t events = 0, censored = 0;
      for_each_replica(plan, workers, [&](int, const TrajectoryRecord& rec, EnvironmentState& env) {
        if (rec.censored()) {
          ++censored;
          return;
        }
        if (rec.final_x != -R) return;
        double leftover = 0;
        for (Site s = -R; s < R; ++s) leftover += static_cast<double>(env.leftover(s));
        if (leftover < leftover_cap) ++events;
      });
      report.empirical = proportion_estimate(events, replicas);
      report.empirical.censored_fraction =
          static_cast<double>(censored) / static_cast<double>(replicas);
      report.bound = std::pow(2.0, -(1.0 + b * (2 * p - 1)));
      report.pass = report.empirical.value >= report.bound - 3 * report.empirical.stderr_;
      report.note = "finite-k check of the asymptotic lower bound 2^{-(1+b(2p-1))}";
      params["k"] = k;
      params["eps"] = eps;
      params["Nsub"] = static_cast<double>(Nsub);
      params["b"] = b;
      params["p"] = p;
      params["replicas"] = replicas;
      break;
    }
    case LemmaId::Cor1: {
      const int64_t N = static_cast<int64_t>(param_or(params, "N", 256));
      const int M1 = static_cast<int>(param_or(params, "M1", 40));
      const double p = param_or(params, "p", 0.75);
      const double eps = param_or(params, "eps", 0.1);
      const int replicas = static_cast<int>(param_or(params, "replicas", 2000));
      const int64_t quarter = (N - 1 + 3) / 4;  // ceil((N-1)/4) sites in (-N, 0)
      std::vector<PatchOverride> overrides;
      for (int64_t i = 0; i < quarter; ++i) {
        Site s = -1 - (i * (N - 1)) / quarter;
        overrides.push_back(PatchOverride{s, s + 1, CookieStack::uniform(M1, p)});
      }
      ReplicaPlan plan;
      plan.env = make_spec(
          EnvironmentSpec::patched(EnvironmentSpec::homogeneous(0, 0.6), std::move(overrides)));
      plan.stop = StoppingCondition::first_of(
          {StoppingCondition::hit_level(N), StoppingCondition::hit_level(-N)});
      plan.budget = static_cast<int64_t>(param_or(params, "budget", 100.0 * N * N));
      plan.replicas = replicas;
      plan.base_seed = seed;
      int64_t right_exits = 0;
      for_each_replica(plan, workers, [&](int, const TrajectoryRecord& rec, EnvironmentState&) {
        if (!rec.censored() && rec.final_x == N) ++right_exits;
      });
      report.empirical = proportion_estimate(right_exits, replicas);
      report.bound = 1.0 - eps;
      report.pass = report.empirical.value >= report.bound - 3 * report.empirical.stderr_;
      report.note = "P(T_N < T_{-N}) >= 1 - eps with M1-cookie sites on 1/4 of (-N, 0)";
      params["N"] = static_cast<double>(N);
      params["M1"] = M1;
      params["p"] = p;
      params["eps"] = eps;
      params["replicas"] = replicas;
      break;
    }
    case LemmaId::Comp0:
    case LemmaId::Comp2:
      throw ConfigError("comp0/comp2 are dispatched through the blocks module");
  }
  report.params = std::move(params);
  return report;
}

std::string lemma_report_to_json(const LemmaReport& report, int indent) {
  json j;
  j["lemma"] = report.lemma;
  j["params"] = report.params;
  j["empirical"] = report.empirical.value;
  j["stderr"] = report.empirical.stderr_;
  j["n"] = report.empirical.n;
  j["censored_fraction"] = report.empirical.censored_fraction;
  j["bound"] = report.bound;
  j["pass"] = report.pass;
  j["note"] = report.note;
  return j.dump(indent);
}

// --- phase sweep ---

std::vector<PhasePoint> phase_sweep(const SweepRequest& request, int workers) {
  if (request.grid.empty()) throw ConfigError("sweep grid is empty");
  if (request.horizons.empty()) throw ConfigError("sweep horizons are empty");
  std::vector<PhasePoint> out;
  for (const auto& [M, p] : request.grid) {
    auto env = make_spec(EnvironmentSpec::homogeneous(M, p));
    const double delta = env->delta();

    // One replica pass shared by speed, crossings and leftover.
    std::vector<int64_t> horizons = request.horizons;
    std::sort(horizons.begin(), horizons.end());
    horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
    ReplicaPlan plan;
    plan.env = env;
    plan.replicas = request.replicas;
    plan.base_seed = derive_seed(request.base_seed, "sweep",
                                 static_cast<uint64_t>(M) * 100000 +
                                     static_cast<uint64_t>(std::llround(p * 1000)));
    plan.stop = StoppingCondition::time_horizon(horizons.back());
    plan.budget = std::max(request.budget, horizons.back());
    plan.flags.sample_points = horizons;
    const Site lo_site = 100, hi_site = 500;
    struct Row {
      std::vector<double> x_at;
      std::vector<double> deltas;
      double leftover_mean = 0;
      bool leftover_ok = false;
    };
    auto rows = map_replicas<Row>(plan, workers, [&](const TrajectoryRecord& rec,
                                                     EnvironmentState& envst) {
      Row row;
      row.x_at.assign(horizons.size(), std::numeric_limits<double>::quiet_NaN());
      for (const auto& s : rec.samples) {
        auto it = std::lower_bound(horizons.begin(), horizons.end(), s.n);
        if (it != horizons.end() && *it == s.n)
          row.x_at[static_cast<size_t>(it - horizons.begin())] = static_cast<double>(s.x);
      }
      Site hi = std::min<Site>(hi_site + 200, rec.max_x - 1);
      for (Site x = lo_site; x <= hi; ++x) {
        int64_t t0 = rec.first_hit.get(x), t1 = rec.first_hit.get(x + 1);
        if (t0 >= 0 && t1 >= 0 && t1 > t0) row.deltas.push_back(static_cast<double>(t1 - t0));
      }
      if (delta > 1.0 && rec.final_x >= hi_site + 250) {
        double total = 0;
        for (Site s = lo_site; s <= hi_site; ++s)
          total += static_cast<double>(envst.leftover(s));
        row.leftover_mean = total / static_cast<double>(hi_site - lo_site + 1);
        row.leftover_ok = true;
      }
      return row;
    });

    ReplicaPlan escape_plan;
    escape_plan.env = env;
    escape_plan.replicas = request.escape_replicas;
    escape_plan.base_seed = derive_seed(plan.base_seed, "escape", 0);
    escape_plan.budget = request.budget;
    EstimateWithCI escape = escape_probability(escape_plan, request.escape_level, workers);

    std::vector<double> pooled;
    for (const auto& row : rows) pooled.insert(pooled.end(), row.deltas.begin(), row.deltas.end());
    EstimateWithCI hill = hill_estimator(pooled);
    std::vector<double> leftovers;
    for (const auto& row : rows)
      if (row.leftover_ok) leftovers.push_back(row.leftover_mean);
    EstimateWithCI leftover = mean_estimate(leftovers);

    for (size_t h = 0; h < horizons.size(); ++h) {
      PhasePoint point;
      point.M = M;
      point.p = p;
      point.horizon = horizons[h];
      std::vector<double> speeds;
      for (const auto& row : rows)
        if (!std::isnan(row.x_at[h]))
          speeds.push_back(row.x_at[h] / static_cast<double>(horizons[h]));
      point.speed = mean_estimate(speeds);
      point.escape = escape;
      point.leftover = leftover;
      point.leftover_flagged = delta <= 1.0 || leftovers.empty();
      point.tail_alpha = hill;
      point.tail_flagged = delta <= 1.0 || pooled.size() < 100;
      out.push_back(point);
    }
  }
  return out;
}

std::string sweep_to_csv(const std::vector<PhasePoint>& points) {
  std::ostringstream os;
  os.precision(10);
  os << "M,p,delta,horizon,speed,speed_se,escape,escape_se,leftover,leftover_se,"
        "tail_alpha,tail_alpha_se,censored_frac\n";
  for (const auto& pt : points) {
    auto field = [&](double v, bool flagged) {
      if (flagged || std::isnan(v))
        os << "nan";
      else
        os << v;
    };
    os << pt.M << "," << pt.p << "," << pt.delta() << "," << pt.horizon << ",";
    field(pt.speed.value, false);
    os << ",";
    field(pt.speed.stderr_, false);
    os << ",";
    field(pt.escape.value, false);
    os << ",";
    field(pt.escape.stderr_, false);
    os << ",";
    field(pt.leftover.value, pt.leftover_flagged);
    os << ",";
    field(pt.leftover.stderr_, pt.leftover_flagged);
    os << ",";
    field(pt.tail_alpha.value, pt.tail_flagged);
    os << ",";
    field(pt.tail_alpha.stderr_, pt.tail_flagged);
    os << "," << pt.escape.censored_fraction << "\n";
  }
  return os.str();
}

}  // namespace erw
