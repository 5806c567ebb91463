#include "erw/cli.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "erw/blocks.hpp"
#include "erw/estimators.hpp"
#include "erw/oracle.hpp"
#include "json.hpp"

namespace erw {

using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open output file '" + path + "'");
  out << content;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty())
    std::cout << content << (content.empty() || content.back() == '\n' ? "" : "\n");
  else
    write_file(path, content);
}

std::vector<int64_t> parse_int_list(const std::string& text, const char* what) {
  std::vector<int64_t> out;
  for (const auto& part : split(text, ',')) {
    try {
      out.push_back(std::stoll(part));
    } catch (...) {
      throw ConfigError(std::string("malformed ") + what + " list near '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (...) {
      throw ConfigError(std::string("malformed ") + what + " list near '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

// "2..4" or "2,3,10"
std::vector<int> parse_int_range(const std::string& text) {
  auto dots = text.find("..");
  std::vector<int> out;
  try {
    if (dots != std::string::npos) {
      int a = std::stoi(text.substr(0, dots));
      int b = std::stoi(text.substr(dots + 2));
      for (int v = a; v <= b; ++v) out.push_back(v);
    } else {
      for (const auto& part : split(text, ',')) out.push_back(std::stoi(part));
    }
  } catch (...) {
    throw ConfigError("malformed integer range '" + text + "'");
  }
  return out;
}

}  // namespace

StoppingCondition parse_stop(const std::string& text) {
  auto fail = [&]() -> StoppingCondition {
    throw ConfigError("malformed stop condition '" + text + "'");
  };
  if (text.rfind("first(", 0) == 0 && text.back() == ')') {
    std::string inner = text.substr(6, text.size() - 7);
    std::vector<StoppingCondition> children;
    int depth = 0;
    std::string current;
    for (char ch : inner) {
      if (ch == '(') ++depth;
      if (ch == ')') --depth;
      if (ch == ';' && depth == 0) {
        children.push_back(parse_stop(current));
        current.clear();
      } else {
        current += ch;
      }
    }
    if (!current.empty()) children.push_back(parse_stop(current));
    if (children.empty()) return fail();
    return StoppingCondition::first_of(std::move(children));
  }
  auto colon = text.find(':');
  if (colon == std::string::npos) return fail();
  const std::string head = text.substr(0, colon);
  const std::string tail = text.substr(colon + 1);
  try {
    if (head == "hit") return StoppingCondition::hit_level(std::stoll(tail));
    if (head == "horizon") return StoppingCondition::time_horizon(std::stoll(tail));
    if (head == "visits") {
      auto parts = split(tail, ',');
      if (parts.size() != 2) return fail();
      return StoppingCondition::visit_count(std::stoll(parts[0]), std::stoll(parts[1]));
    }
    if (head == "cookies") return StoppingCondition::cookies_eaten(std::stoll(tail));
    if (head == "second") {
      auto parts = split(tail, ',');
      if (parts.size() != 2) return fail();
      return StoppingCondition::second_passage(std::stoll(parts[0]), std::stoll(parts[1]));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    return fail();
  }
  return fail();
}

namespace {

int cmd_simulate(const std::string& env_text, int64_t steps, uint64_t seed,
                 const std::string& stop_text, Site start, int64_t budget,
                 const std::string& out_path, const std::string& csv_path) {
  EnvironmentSpec spec = env_from_string(env_text);
  StoppingCondition stop =
      stop_text.empty() ? StoppingCondition::time_horizon(steps) : parse_stop(stop_text);
  if (budget <= 0) budget = std::max<int64_t>(steps, 1);

  json config;
  config["command"] = "simulate";
  config["env"] = json::parse(env_to_json(spec));
  config["steps"] = steps;
  config["seed"] = seed;
  config["stop"] = stop.describe();
  config["start"] = start;
  config["budget"] = budget;

  WalkState walk(make_spec(spec), derive_seed(seed, "walk", 0), start);
  TrajectoryRecord rec = run_until(walk, stop, budget);
  emit(out_path, trajectory_to_json(rec, config.dump(), 2));
  if (!csv_path.empty()) write_file(csv_path, samples_to_csv(rec));
  return 0;
}

int cmd_sweep(const std::string& m_text, const std::string& p_text, const std::string& points_text,
              int replicas, int escape_replicas, const std::string& horizons_text, int64_t budget,
              uint64_t seed, int workers, const std::string& out_path) {
  SweepRequest request;
  if (!points_text.empty()) {
    for (const auto& entry : split(points_text, ';')) {
      auto parts = split(entry, ':');
      if (parts.size() != 2) throw ConfigError("malformed sweep point '" + entry + "'");
      request.grid.emplace_back(std::stoi(parts[0]), std::stod(parts[1]));
    }
  } else {
    if (m_text.empty() || p_text.empty())
      throw ConfigError("sweep requires --points or both --M and --p");
    for (int M : parse_int_range(m_text))
      for (double p : parse_double_list(p_text, "p")) request.grid.emplace_back(M, p);
  }
  if (request.grid.empty()) throw ConfigError("sweep grid is empty");
  request.horizons = parse_int_list(horizons_text, "horizon");
  request.replicas = replicas;
  request.escape_replicas = escape_replicas > 0 ? escape_replicas : replicas;
  request.budget = budget;
  request.base_seed = seed;

  json config;
  config["command"] = "sweep";
  config["replicas"] = request.replicas;
  config["escape_replicas"] = request.escape_replicas;
  config["budget"] = request.budget;
  config["seed"] = seed;
  json grid = json::array();
  for (auto& [M, p] : request.grid) grid.push_back({{"M", M}, {"p", p}});
  config["grid"] = grid;
  config["horizons"] = request.horizons;

  auto points = phase_sweep(request, workers);
  std::string csv = "# config: " + config.dump() + "\n" + sweep_to_csv(points);
  emit(out_path, csv);
  return 0;
}

int cmd_verify(const std::string& lemma_text, const std::map<std::string, double>& params,
               uint64_t seed, int workers, const std::string& out_path) {
  auto id = lemma_from_string(lemma_text);
  if (!id) throw ConfigError("unknown lemma id '" + lemma_text + "'");
  LemmaReport report;
  if (*id == LemmaId::Comp0 || *id == LemmaId::Comp2) {
    BlockConfig cfg;
    auto get = [&](const char* key, double fallback) {
      auto it = params.find(key);
      return it == params.end() ? fallback : it->second;
    };
    cfg.L = get("L", 4.0);
    cfg.kappa = get("kappa", 0.2);
    cfg.eps = get("eps", 0.05);
    cfg.v = get("v", 4.0);
    cfg.M0 = static_cast<int>(get("M0", 4));
    const int replicas = static_cast<int>(get("replicas", 30000));
    report.lemma = lemma_name(*id);
    report.params = {{"L", cfg.L},        {"kappa", cfg.kappa},  {"eps", cfg.eps},
                     {"v", cfg.v},        {"M0", double(cfg.M0)}, {"replicas", double(replicas)}};
    if (*id == LemmaId::Comp0) {
      // Exact only: no Monte Carlo needed for A1.
      double p_a1_min = 1.0;
      const Site kappa_s = cfg.kappa_sites();
      for (Site start = -kappa_s; start <= kappa_s; ++start)
        p_a1_min = std::min(
            p_a1_min, birth_death_hit(BirthDeathSpec::biased_region(cfg.eps, cfg.kappa, cfg.L, start)));
      report.empirical.value = p_a1_min;
      report.empirical.method = "exact";
      report.empirical.n = 2 * kappa_s + 1;
      report.bound = 0.5 + 0.05 * cfg.kappa;
      report.pass = p_a1_min > report.bound;
      report.note = "exact min-over-starts P(A1); bound 1/2 + 0.05*kappa";
    } else {
      EventProbabilities ev = event_probabilities(cfg, replicas, seed, workers);
      report.empirical = ev.p_a2;
      report.bound = std::exp(-1.0 / cfg.kappa);
      report.pass = ev.p_a2_upper < report.bound;
      report.note = "Monte Carlo max-over-starts P(A2) with Wilson 3-sigma upper bound " +
                    std::to_string(ev.p_a2_upper);
    }
  } else {
    report = verify_lemma_bound(*id, params, seed, workers);
  }
  emit(out_path, lemma_report_to_json(report, 2));
  return report.pass ? 0 : 1;
}

int cmd_oracle(Site a, Site b, Site start, const std::string& env_text,
               const std::string& query_text, const std::string& out_path) {
  OracleProblem problem;
  problem.a = a;
  problem.b = b;
  problem.start = start;
  problem.env = make_spec(env_from_string(env_text));
  json result;
  result["config"] = {{"command", "oracle"}, {"window", {a, b}},      {"start", start},
                      {"env", json::parse(env_to_json(*problem.env))}, {"query", query_text}};
  if (query_text == "hit-right" || query_text == "absorption-time" ||
      query_text.rfind("visits:", 0) == 0) {
    if (query_text == "hit-right") {
      problem.query = OracleQuery::HitRightProb;
    } else if (query_text == "absorption-time") {
      problem.query = OracleQuery::MeanAbsorptionTime;
    } else {
      problem.query = OracleQuery::ExpectedVisits;
      try {
        problem.query_site = std::stoll(query_text.substr(7));
      } catch (...) {
        throw ConfigError("malformed query '" + query_text + "'");
      }
    }
    OracleSolution sol = solve(problem);
    result["value"] = sol.value;
    result["residual"] = sol.residual;
    result["states"] = sol.states;
  } else if (query_text == "leftover") {
    auto leftovers = expected_leftover(problem);
    json per_site = json::object();
    for (const auto& [site, value] : leftovers) per_site[std::to_string(site)] = value;
    result["leftover"] = per_site;
  } else {
    throw ConfigError("unknown oracle query '" + query_text + "'");
  }
  emit(out_path, result.dump(2));
  return 0;
}

int cmd_blocks_calibrate(const std::string& l_text, const std::string& kappa_text,
                         const std::string& eps_text, int v_max, int replicas, uint64_t seed,
                         int workers, const std::string& out_path) {
  CalibrationSearch search;
  if (!l_text.empty()) search.Ls = parse_double_list(l_text, "L");
  if (!kappa_text.empty()) search.kappas = parse_double_list(kappa_text, "kappa");
  if (!eps_text.empty()) search.epss = parse_double_list(eps_text, "eps");
  if (v_max > 0) search.v_max = v_max;
  if (replicas > 0) search.replicas = replicas;
  CalibrationResult result = calibrate(search, seed, workers);
  emit(out_path, calibration_to_json(result, 2));
  return result.ok ? 0 : 1;
}

int cmd_blocks_couple(const std::string& config_path, int64_t horizon, uint64_t seed, int runs,
                      const std::string& out_path, int workers) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open calibration file '" + config_path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  CalibrationResult cal = calibration_from_json(buffer.str());
  if (!cal.ok) throw ConfigError("calibration file flags ok=false");
  BlockConfig cfg;
  cfg.L = cal.L;
  cfg.kappa = cal.kappa;
  cfg.eps = cal.eps_max;
  cfg.v = cal.v;
  cfg.M0 = cal.M0;
  cfg.c1 = cal.c1;
  cfg.validate();

  std::vector<CoupledRun> all(static_cast<size_t>(std::max(runs, 1)));
  std::atomic<int> next{0};
  int nworkers = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  nworkers = std::max(1, std::min<int>(nworkers, runs));
  auto work = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= runs) break;
      all[static_cast<size_t>(i)] =
          coupled_run(cfg, horizon, derive_seed(seed, "couple", static_cast<uint64_t>(i)));
    }
  };
  if (nworkers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nworkers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  int ok_count = 0, violations = 0;
  double max_ratio = 0;
  for (const auto& run : all) {
    if (run.domination_ok) ++ok_count;
    violations += run.precondition_violations;
    max_ratio = std::max(max_ratio, run.max_tau_over_n);
  }
  json summary;
  summary["config"] = json::parse(calibration_to_json(cal));
  summary["horizon"] = horizon;
  summary["seed"] = seed;
  summary["runs"] = runs;
  summary["domination_ok_fraction"] = static_cast<double>(ok_count) / std::max(runs, 1);
  summary["precondition_violations"] = violations;
  summary["max_tau_over_n"] = max_ratio;
  summary["under_tally_advance"] = {{"adv", all[0].fine.adv_under}, {"tot", all[0].fine.tot_under}};
  if (!out_path.empty()) write_file(out_path, block_trace_to_csv(all[0].fine));
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"One-dimensional multi-excited (cookie) random walk laboratory"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  int workers = 0;
  app.add_option("--workers", workers, "worker threads (0 = hardware)");
  // simulate
  auto* sim = app.add_subcommand("simulate", "run one trajectory and write its record");
  sim->fallthrough();
  std::string sim_env = "homogeneous:0,0.6", sim_stop, sim_out, sim_csv;
  int64_t sim_steps = 100000, sim_budget = 0, sim_start = 0;
  uint64_t sim_seed = 1;
  sim->add_option("--env", sim_env, "environment JSON or shorthand homogeneous:M,p");
  sim->add_option("--steps", sim_steps, "time horizon (also the default budget)");
  sim->add_option("--seed", sim_seed, "base seed");
  sim->add_option("--stop", sim_stop, "stop condition (default horizon:steps)");
  sim->add_option("--start", sim_start, "starting site");
  sim->add_option("--budget", sim_budget, "hard step budget");
  sim->add_option("--out", sim_out, "output JSON path (default stdout)");
  sim->add_option("--csv", sim_csv, "also write position samples CSV here");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "phase-diagram sweep over (M, p) grid");
  sweep->fallthrough();
  std::string sw_m, sw_p, sw_points, sw_horizons = "10000,100000", sw_out;
  int sw_replicas = 500, sw_escape_replicas = 0;
  int64_t sw_budget = 1000000;
  uint64_t sw_seed = 1;
  sweep->add_option("--M", sw_m, "M values: a..b or comma list");
  sweep->add_option("--p", sw_p, "p values: comma list");
  sweep->add_option("--points", sw_points, "explicit grid 'M:p;M:p;...' (overrides --M/--p)");
  sweep->add_option("--replicas", sw_replicas, "replicas per grid point");
  sweep->add_option("--escape-replicas", sw_escape_replicas, "replicas for the escape proxy");
  sweep->add_option("--horizons", sw_horizons, "comma list of horizons");
  sweep->add_option("--budget", sw_budget, "escape-proxy step budget");
  sweep->add_option("--seed", sw_seed, "base seed");
  sweep->add_option("--out", sw_out, "output CSV path (default stdout)");

  // verify
  auto* verify = app.add_subcommand("verify", "check a quantitative lemma bound");
  verify->fallthrough();
  std::string vf_lemma, vf_out;
  uint64_t vf_seed = 1;
  std::map<std::string, double> vf_params;
  static const std::vector<std::string> vf_keys = {"N",   "alpha", "M",     "p",  "replicas",
                                                   "c",   "gamma", "k",     "eps", "Nsub",
                                                   "b",   "M1",    "L",     "kappa", "v",
                                                   "M0",  "budget"};
  std::map<std::string, double> vf_raw;
  verify->add_option("--lemma", vf_lemma, "lemma id: 1|3|4|5|cor1|comp0|comp2")->required();
  for (const auto& key : vf_keys)
    verify->add_option("--" + key, vf_raw[key], "lemma parameter " + key);
  verify->add_option("--seed", vf_seed, "base seed");
  verify->add_option("--out", vf_out, "output JSON path (default stdout)");

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "exact absorbing-window computation");
  oracle_cmd->fallthrough();
  std::vector<int64_t> or_window;
  int64_t or_start = 0;
  std::string or_env, or_query = "hit-right", or_out;
  oracle_cmd->add_option("--window", or_window, "absorbing boundaries A B")->expected(2);
  oracle_cmd->add_option("--start", or_start, "starting site");
  oracle_cmd->add_option("--env", or_env, "environment JSON or shorthand")->required();
  oracle_cmd->add_option("--query", or_query, "hit-right | visits:X | leftover | absorption-time");
  oracle_cmd->add_option("--out", or_out, "output JSON path (default stdout)");

  // blocks
  auto* blocks_cmd = app.add_subcommand("blocks", "block renormalization tools");
  blocks_cmd->fallthrough();
  blocks_cmd->require_subcommand(1);
  auto* cal = blocks_cmd->add_subcommand("calibrate", "search for a validated (L,kappa,eps,v)");
  cal->fallthrough();
  std::string cal_l, cal_kappa, cal_eps, cal_out;
  int cal_vmax = 0, cal_replicas = 0;
  uint64_t cal_seed = 1;
  cal->add_option("--L", cal_l, "candidate L values");
  cal->add_option("--kappa", cal_kappa, "candidate kappa values");
  cal->add_option("--eps", cal_eps, "candidate eps values");
  cal->add_option("--v-max", cal_vmax, "largest v in the sweep");
  cal->add_option("--replicas", cal_replicas, "A2 Monte Carlo replicas");
  cal->add_option("--seed", cal_seed, "base seed");
  cal->add_option("--out", cal_out, "output JSON path (default stdout)");

  auto* couple = blocks_cmd->add_subcommand("couple", "coupled fine/coarse runs");
  couple->fallthrough();
  std::string cp_config, cp_out;
  int64_t cp_horizon = 100000;
  int cp_runs = 1;
  uint64_t cp_seed = 7;
  couple->add_option("--config", cp_config, "calibration JSON path")->required();
  couple->add_option("--horizon", cp_horizon, "fine-walk steps per run");
  couple->add_option("--runs", cp_runs, "number of coupled runs");
  couple->add_option("--seed", cp_seed, "base seed");
  couple->add_option("--out", cp_out, "block trace CSV path (first run)");

  // --config FILE support: JSON object whose keys are long option names.
  std::vector<std::string> argv_like = args;
  for (size_t i = 0; i + 1 < argv_like.size(); ++i) {
    if (argv_like[i] != "--config-file") continue;
    std::ifstream in(argv_like[i + 1]);
    if (!in) {
      std::cerr << "config error: cannot open config file '" << argv_like[i + 1] << "'\n";
      return 2;
    }
    json defaults;
    try {
      defaults = json::parse(in);
    } catch (const json::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    std::vector<std::string> injected;
    injected.push_back(argv_like[0]);  // subcommand name first
    for (auto& [key, value] : defaults.items()) {
      if (key == "command") continue;
      injected.push_back("--" + key);
      injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    // Original flags come after the injected ones so they take precedence.
    for (size_t k = 1; k < argv_like.size(); ++k) {
      if (k == i || k == i + 1) continue;
      injected.push_back(argv_like[k]);
    }
    argv_like = injected;
    break;
  }

  try {
    std::vector<const char*> argv;
    argv.push_back("erw");
    for (const auto& a : argv_like) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_env, sim_steps, sim_seed, sim_stop, sim_start, sim_budget, sim_out,
                          sim_csv);
    if (sweep->parsed())
      return cmd_sweep(sw_m, sw_p, sw_points, sw_replicas, sw_escape_replicas, sw_horizons,
                       sw_budget, sw_seed, workers, sw_out);
    if (verify->parsed()) {
      for (const auto& key : vf_keys)
        if (verify->count("--" + key) > 0) vf_params[key] = vf_raw[key];
      return cmd_verify(vf_lemma, vf_params, vf_seed, workers, vf_out);
    }
    if (oracle_cmd->parsed()) {
      if (or_window.size() != 2) throw ConfigError("oracle requires --window A B");
      return cmd_oracle(or_window[0], or_window[1], or_start, or_env, or_query, or_out);
    }
    if (blocks_cmd->parsed()) {
      if (cal->parsed())
        return cmd_blocks_calibrate(cal_l, cal_kappa, cal_eps, cal_vmax, cal_replicas, cal_seed,
                                    workers, cal_out);
      if (couple->parsed())
        return cmd_blocks_couple(cp_config, cp_horizon, cp_seed, cp_runs, cp_out, workers);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SizeError& e) {
    std::cerr << "size error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace erw
