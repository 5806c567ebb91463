#include "erw/walk.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace erw {

using nlohmann::json;

StoppingCondition StoppingCondition::hit_level(Site level) {
  StoppingCondition c;
  c.kind = Kind::HitLevel;
  c.level = level;
  return c;
}

StoppingCondition StoppingCondition::time_horizon(int64_t n_max) {
  StoppingCondition c;
  c.kind = Kind::TimeHorizon;
  c.n_max = n_max;
  return c;
}

StoppingCondition StoppingCondition::visit_count(Site site, int64_t threshold) {
  StoppingCondition c;
  c.kind = Kind::VisitCount;
  c.site = site;
  c.threshold = threshold;
  return c;
}

StoppingCondition StoppingCondition::cookies_eaten(int64_t threshold) {
  StoppingCondition c;
  c.kind = Kind::CookiesEaten;
  c.threshold = threshold;
  return c;
}

StoppingCondition StoppingCondition::second_passage(Site from, Site to) {
  StoppingCondition c;
  c.kind = Kind::SecondPassage;
  c.from_level = from;
  c.to_level = to;
  return c;
}

StoppingCondition StoppingCondition::first_of(std::vector<StoppingCondition> conditions) {
  if (conditions.empty()) throw ConfigError("FirstOf requires a non-empty condition list");
  StoppingCondition c;
  c.kind = Kind::FirstOf;
  // Flatten nested FirstOf for a single dispatch level.
  for (auto& child : conditions) {
    if (child.kind == Kind::FirstOf)
      for (auto& gc : child.children) c.children.push_back(std::move(gc));
    else
      c.children.push_back(std::move(child));
  }
  return c;
}

std::string StoppingCondition::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::HitLevel: os << "hit:" << level; break;
    case Kind::TimeHorizon: os << "horizon:" << n_max; break;
    case Kind::VisitCount: os << "visits:" << site << "," << threshold; break;
    case Kind::CookiesEaten: os << "cookies:" << threshold; break;
    case Kind::SecondPassage: os << "second:" << from_level << "," << to_level; break;
    case Kind::FirstOf: {
      os << "first(";
      for (size_t i = 0; i < children.size(); ++i) {
        if (i) os << ";";
        os << children[i].describe();
      }
      os << ")";
      break;
    }
  }
  return os.str();
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::HitLevel: return "hit_level";
    case Termination::TimeHorizon: return "time_horizon";
    case Termination::VisitCount: return "visit_count";
    case Termination::CookiesEaten: return "cookies_eaten";
    case Termination::SecondPassage: return "second_passage";
    case Termination::Censored: return "censored";
  }
  return "unknown";
}

Site step(WalkState& state) {
  double q = 0.5;
  const EnvironmentSpec& spec = state.env.spec();
  // Single consumed-counter access for the homogeneous kinds; the general
  // kinds go through the resolver.
  if (spec.kind == EnvKind::Homogeneous ||
      (spec.kind == EnvKind::OneSidedHomogeneous && state.x >= spec.boundary)) {
    uint16_t& c = state.env.consumed_slot(state.x);
    if (c < spec.M) {
      q = spec.p;
      ++c;
      ++state.cookies_eaten;
      state.drift_total += 2 * q - 1;
    }
  } else if (spec.kind != EnvKind::OneSidedHomogeneous) {
    q = state.env.intensity_at(state.x);
    if (state.env.consume(state.x)) {
      ++state.cookies_eaten;
      state.drift_total += 2 * q - 1;
    }
  }
  const double u = state.rng.next_double();
  state.x += (u < q) ? 1 : -1;
  ++state.n;
  return state.x;
}

namespace {

struct PassageTracker {
  Site from, to;
  bool armed = false;  // T_from reached
  int64_t time = -1;
};

// All per-run recording state lives here; the step loop calls on_step once
// per transition.
struct Recorder {
  const RecordFlags& flags;
  TrajectoryRecord rec;
  std::vector<PassageTracker> passages;
  std::vector<int64_t> marks;  // merged, sorted sample times
  size_t next_mark = 0;
  int64_t next_geometric = 1;

  explicit Recorder(const RecordFlags& f, const WalkState& w) : flags(f) {
    rec.visits.set(w.x, 1);  // the origin at time 0 counts as a visit
    rec.min_x = rec.max_x = w.x;
    rec.g_exponents = f.g_exponents;
    rec.g_hit.resize(f.g_exponents.size());
    marks = f.sample_points;
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
    if (f.track_path) rec.path.push_back(w.x);
  }

  void arm_passages(const StoppingCondition& stop) {
    auto add = [this](Site from, Site to) {
      for (const auto& p : passages)
        if (p.from == from && p.to == to) return;
      passages.push_back(PassageTracker{from, to});
      rec.second_passage[{from, to}] = -1;
    };
    for (const auto& pr : flags.second_passages) add(pr.first, pr.second);
    if (stop.kind == StoppingCondition::Kind::SecondPassage) add(stop.from_level, stop.to_level);
    for (const auto& child : stop.children)
      if (child.kind == StoppingCondition::Kind::SecondPassage)
        add(child.from_level, child.to_level);
  }

  void on_step(Site prev, const WalkState& w) {
    const Site x = w.x;
    uint32_t& vx = rec.visits.ref(x);
    ++vx;
    if (x < rec.min_x) rec.min_x = x;
    if (x > rec.max_x) rec.max_x = x;
    int64_t& fh = rec.first_hit.ref(x);
    if (fh < 0) fh = w.n;
    if (x < prev && flags.track_excursions) ++rec.excursions.ref(prev);
    for (auto& p : passages) {
      if (p.time >= 0) continue;
      if (!p.armed && rec.first_hit.get(p.from) >= 0) p.armed = true;
      if (p.armed && x == p.to) p.time = w.n;
    }
    if (flags.track_excursions && !rec.g_exponents.empty()) {
      for (size_t i = 0; i < rec.g_exponents.size(); ++i) {
        const Site y = x + (Site{1} << rec.g_exponents[i]);
        if (y > rec.max_x) continue;
        if (rec.visits.get(y) == 0) continue;
        if (rec.excursions.get(y) > static_cast<uint32_t>(flags.excursion_cap)) continue;
        rec.g_hit[i].set(y, 1);
      }
    }
    if (flags.track_path) rec.path.push_back(x);
    bool sample = false;
    if (flags.samples_geometric && w.n == next_geometric) {
      sample = true;
      next_geometric *= 2;
    }
    while (next_mark < marks.size() && marks[next_mark] < w.n) ++next_mark;  // skip stale
    if (next_mark < marks.size() && marks[next_mark] == w.n) {
      sample = true;
      ++next_mark;
    }
    if (sample) rec.samples.push_back(PositionSample{w.n, x, w.drift_total});
  }

  void finalize(const WalkState& w) {
    rec.final_x = w.x;
    rec.final_n = w.n;
    rec.final_drift = w.drift_total;
    rec.cookies_eaten = w.cookies_eaten;
    for (const auto& p : passages) rec.second_passage[{p.from, p.to}] = p.time;
  }
};

bool triggered(const StoppingCondition& stop, const WalkState& w, const Recorder& r,
               int* fired_index, Termination* term) {
  switch (stop.kind) {
    case StoppingCondition::Kind::HitLevel:
      if (w.n >= 1 && w.x == stop.level) {
        *term = Termination::HitLevel;
        return true;
      }
      return false;
    case StoppingCondition::Kind::TimeHorizon:
      if (w.n >= stop.n_max) {
        *term = Termination::TimeHorizon;
        return true;
      }
      return false;
    case StoppingCondition::Kind::VisitCount:
      if (static_cast<int64_t>(r.rec.visits.get(stop.site)) >= stop.threshold) {
        *term = Termination::VisitCount;
        return true;
      }
      return false;
    case StoppingCondition::Kind::CookiesEaten:
      if (w.cookies_eaten >= stop.threshold) {
        *term = Termination::CookiesEaten;
        return true;
      }
      return false;
    case StoppingCondition::Kind::SecondPassage:
      for (const auto& p : r.passages)
        if (p.from == stop.from_level && p.to == stop.to_level && p.time >= 0) {
          *term = Termination::SecondPassage;
          return true;
        }
      return false;
    case StoppingCondition::Kind::FirstOf:
      for (size_t i = 0; i < stop.children.size(); ++i)
        if (triggered(stop.children[i], w, r, fired_index, term)) {
          *fired_index = static_cast<int>(i);
          return true;
        }
      return false;
  }
  return false;
}

}  // namespace

TrajectoryRecord run_until(WalkState& state, const StoppingCondition& stop, int64_t budget,
                           const RecordFlags& flags) {
  Recorder recorder(flags, state);
  recorder.arm_passages(stop);

  int fired = 0;
  Termination term = Termination::Censored;
  // A condition may already hold at n = 0 (e.g. horizon:0).
  if (triggered(stop, state, recorder, &fired, &term)) {
    recorder.rec.termination = term;
    recorder.rec.fired_index = fired;
    recorder.finalize(state);
    return std::move(recorder.rec);
  }
  while (state.n < budget) {
    const Site prev = state.x;
    step(state);
    recorder.on_step(prev, state);
    if (triggered(stop, state, recorder, &fired, &term)) {
      recorder.rec.termination = term;
      recorder.rec.fired_index = fired;
      break;
    }
  }
  recorder.finalize(state);
  if (flags.leftover_snapshot) {
    TrajectoryRecord& rec = recorder.rec;
    Site lo = flags.leftover_lo, hi = flags.leftover_hi;
    if (lo > hi) {
      lo = rec.min_x;
      hi = rec.max_x;
    }
    for (Site s = lo; s <= hi; ++s) rec.leftover.set(s, state.env.leftover(s));
    rec.has_leftover = true;
  }
  return std::move(recorder.rec);
}

TriState gamma_event(const TrajectoryRecord& record, EnvironmentState& env_final, double e,
                     int64_t n, int M1, Site x_shift) {
  const Site lv1 = x_shift + n, lv2 = x_shift + 2 * n, lv4 = x_shift + 4 * n;
  auto t2 = record.hit_time(lv2);
  if (!t2) return TriState::Indeterminate;  // censored before T_{x+2n}
  auto t4 = record.hit_time(lv4);
  auto back = record.second_passage_time(lv2, lv1);
  if (!back && !t4) return TriState::Indeterminate;  // race unresolved
  const bool reached_4n_first = t4 && (!back || *t4 < *back);
  if (!reached_4n_first) return TriState::False;
  // (b) evaluated at T_{x+4n}; caller stops the run there.
  int64_t count = 0;
  for (Site s = lv1 + 1; s < lv2; ++s)
    if (env_final.leftover(s) >= static_cast<uint32_t>(M1)) ++count;
  return static_cast<double>(count) >= e * static_cast<double>(n) ? TriState::True
                                                                  : TriState::False;
}

double martingale_step_residual(double q) {
  const double d = 2 * q - 1;
  return q * (1 - d) + (1 - q) * (-1 - d);
}

int64_t domination_min_gap(const EnvSpecPtr& spec, uint64_t seed, int64_t steps) {
  EnvironmentState env(spec);
  Xoshiro256pp rng(seed);
  Site x = 0, y = 0;
  int64_t min_gap = 0;
  for (int64_t i = 0; i < steps; ++i) {
    const double q = env.intensity_at(x);
    env.consume(x);
    const double u = rng.next_double();
    x += (u < q) ? 1 : -1;
    y += (u < 0.5) ? 1 : -1;
    min_gap = std::min(min_gap, x - y);
  }
  return min_gap;
}

std::string trajectory_to_json(const TrajectoryRecord& record, const std::string& config_json,
                               int indent) {
  json j;
  if (!config_json.empty()) j["config"] = json::parse(config_json);
  j["termination"] = termination_name(record.termination);
  j["fired_index"] = record.fired_index;
  j["final"] = {{"x", record.final_x},
                {"n", record.final_n},
                {"drift", record.final_drift},
                {"cookies_eaten", record.cookies_eaten},
                {"min_x", record.min_x},
                {"max_x", record.max_x}};
  // Hit times: full map for modest ranges, geometric levels otherwise.
  json hits = json::object();
  const Site span = record.max_x - record.min_x;
  if (span <= 4096) {
    for (Site s = record.min_x; s <= record.max_x; ++s) {
      int64_t t = record.first_hit.get(s);
      if (t >= 0) hits[std::to_string(s)] = t;
    }
  } else {
    j["hit_times_subsampled"] = true;
    for (Site mag = 1; mag <= span; mag *= 2) {
      for (Site s : {record.min_x + mag - 1, record.max_x - mag + 1, mag, -mag}) {
        int64_t t = record.first_hit.get(s);
        if (t >= 0) hits[std::to_string(s)] = t;
      }
    }
  }
  j["hit_times"] = hits;
  json visits = json::object();
  if (span <= 4096) {
    for (Site s = record.min_x; s <= record.max_x; ++s) {
      uint32_t v = record.visits.get(s);
      if (v > 0) visits[std::to_string(s)] = v;
    }
    j["visits"] = visits;
  } else {
    j["visits_total_sites"] = span + 1;
  }
  if (!record.second_passage.empty()) {
    json sp = json::array();
    for (const auto& [key, t] : record.second_passage)
      sp.push_back({{"from", key.first}, {"to", key.second}, {"time", t}});
    j["second_passage"] = sp;
  }
  if (record.has_leftover && record.leftover.hi() - record.leftover.lo() <= 8192) {
    json lo = json::object();
    for (Site s = record.leftover.lo(); s < record.leftover.hi(); ++s)
      if (record.visits.get(s) > 0 || record.leftover.get(s) > 0)
        lo[std::to_string(s)] = record.leftover.get(s);
    j["leftover_cookies"] = lo;
  }
  json samples = json::array();
  for (const auto& s : record.samples)
    samples.push_back({{"n", s.n}, {"x", s.x}, {"drift", s.drift}});
  j["samples"] = samples;
  return j.dump(indent);
}

std::string samples_to_csv(const TrajectoryRecord& record) {
  std::ostringstream os;
  os << "n,x,drift\n";
  os.precision(17);
  for (const auto& s : record.samples) os << s.n << "," << s.x << "," << s.drift << "\n";
  return os.str();
}

}  // namespace erw
