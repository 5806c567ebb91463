#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "erw/cli.hpp"
#include "erw/oracle.hpp"
#include "json.hpp"

using namespace erw;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/erw_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("stop grammar round trips") {
  CHECK(parse_stop("hit:-5").describe() == "hit:-5");
  CHECK(parse_stop("horizon:1000").describe() == "horizon:1000");
  CHECK(parse_stop("visits:3,9").describe() == "visits:3,9");
  CHECK(parse_stop("cookies:40").describe() == "cookies:40");
  CHECK(parse_stop("second:50,0").describe() == "second:50,0");
  CHECK(parse_stop("first(hit:-10;hit:10)").describe() == "first(hit:-10;hit:10)");
  CHECK(parse_stop("first(hit:1;first(hit:2;horizon:5))").describe() ==
        "first(hit:1;hit:2;horizon:5)");
  CHECK_THROWS_AS(parse_stop("nonsense"), ConfigError);
  CHECK_THROWS_AS(parse_stop("visits:3"), ConfigError);
}

TEST_CASE("simulate: deterministic bytes and embedded config") {
  TempFile a("sim_a.json"), b("sim_b.json");
  std::vector<std::string> args = {"simulate", "--env", "homogeneous:3,0.7", "--steps", "5000",
                                   "--seed", "1", "--out", a.path};
  CHECK(run_cli(args) == 0);
  args.back() = b.path;
  CHECK(run_cli(args) == 0);
  CHECK(slurp(a.path) == slurp(b.path));

  auto doc = json::parse(slurp(a.path));
  CHECK(doc["config"]["env"]["M"] == 3);
  CHECK(doc["config"]["env"]["p"] == 0.7);
  CHECK(doc["config"]["seed"] == 1);
  CHECK(doc["final"]["n"] == 5000);
}

TEST_CASE("simulate accepts the degenerate symmetric environment") {
  TempFile out("sim_sym.json");
  CHECK(run_cli({"simulate", "--env", "homogeneous:0,0.5", "--steps", "100", "--seed", "2",
                 "--out", out.path}) == 0);
  auto doc = json::parse(slurp(out.path));
  CHECK(doc["final"]["cookies_eaten"] == 0);
}

TEST_CASE("malformed environment JSON exits 2 and names the field") {
  CHECK(run_cli({"simulate", "--env", R"({"variant":"homogeneous","p":0.7})", "--steps", "10"}) ==
        2);
  CHECK(run_cli({"simulate", "--env", "homogeneous:9.9", "--steps", "10"}) == 2);
  CHECK(run_cli({"oracle", "--env", "homogeneous:1,0.8"}) == 2);  // missing window
  CHECK(run_cli({"verify", "--lemma", "nope"}) == 2);
  CHECK(run_cli({"sweep", "--p", "0.7"}) == 2);  // no grid
}

TEST_CASE("oracle command matches the library value") {
  TempFile out("oracle.json");
  CHECK(run_cli({"oracle", "--window", "-2", "2", "--start", "0", "--env",
                 R"({"variant":"explicit","stacks":{"-1":[0.75],"0":[0.75],"1":[0.75]}})",
                 "--query", "hit-right", "--out", out.path}) == 0);
  auto doc = json::parse(slurp(out.path));
  CHECK(doc["value"].get<double>() == doctest::Approx(25.0 / 32.0).epsilon(1e-10));
  CHECK(doc["residual"].get<double>() <= 1e-12);
  CHECK(doc.contains("states"));
}

TEST_CASE("oracle leftover query emits the per-site map") {
  TempFile out("oracle_leftover.json");
  CHECK(run_cli({"oracle", "--window", "-2", "2", "--start", "0", "--env", "homogeneous:1,1.0",
                 "--query", "leftover", "--out", out.path}) == 0);
  auto doc = json::parse(slurp(out.path));
  CHECK(doc["leftover"]["-1"].get<double>() == doctest::Approx(1.0));
  CHECK(doc["leftover"]["0"].get<double>() == doctest::Approx(0.0));
}

TEST_CASE("verify exits 0 on pass and writes the report schema") {
  TempFile out("verify.json");
  CHECK(run_cli({"verify", "--lemma", "3", "--N", "32", "--c", "1", "--gamma", "0", "--p", "0.7",
                 "--replicas", "2000", "--out", out.path}) == 0);
  auto doc = json::parse(slurp(out.path));
  CHECK(doc["lemma"] == "3");
  CHECK(doc["pass"] == true);
  CHECK(doc.contains("empirical"));
  CHECK(doc.contains("bound"));
  CHECK(doc["params"]["N"] == 32);
}

TEST_CASE("top-level flags are accepted after the subcommand name") {
  TempFile out("workers.csv");
  CHECK(run_cli({"sweep", "--points", "0:0.6", "--replicas", "4", "--horizons", "200",
                 "--budget", "5000", "--workers", "2", "--seed", "3", "--out", out.path}) == 0);
}

TEST_CASE("sweep writes the CSV with config header") {
  TempFile out("sweep.csv");
  CHECK(run_cli({"sweep", "--points", "0:0.6;3:0.7", "--replicas", "20", "--horizons",
                 "500,1000", "--budget", "20000", "--seed", "4", "--out", out.path}) == 0);
  auto text = slurp(out.path);
  CHECK(text.rfind("# config: ", 0) == 0);
  CHECK(text.find("M,p,delta,horizon") != std::string::npos);
  CHECK(text.find("\n3,0.7,") != std::string::npos);
}

TEST_CASE("config file provides defaults that flags override") {
  TempFile cfg("cfg.json"), out1("cfg_out1.json"), out2("cfg_out2.json");
  {
    std::ofstream f(cfg.path);
    f << R"({"env":"homogeneous:3,0.7","steps":400,"seed":9})";
  }
  CHECK(run_cli({"simulate", "--config-file", cfg.path, "--out", out1.path}) == 0);
  auto doc1 = json::parse(slurp(out1.path));
  CHECK(doc1["final"]["n"] == 400);
  CHECK(doc1["config"]["seed"] == 9);

  CHECK(run_cli({"simulate", "--config-file", cfg.path, "--steps", "120", "--out", out2.path}) == 0);
  auto doc2 = json::parse(slurp(out2.path));
  CHECK(doc2["final"]["n"] == 120);  // flag wins over config file
}

TEST_CASE("re-running with the embedded config reproduces the output byte-for-byte") {
  TempFile out1("roundtrip1.json"), out2("roundtrip2.json"), cfg("roundtrip_cfg.json");
  CHECK(run_cli({"simulate", "--env", "onesided:2,0.9,0", "--steps", "3000", "--seed", "77",
                 "--out", out1.path}) == 0);
  auto doc = json::parse(slurp(out1.path));
  // The embedded config block, with env re-serialized as a JSON argument.
  json config = doc["config"];
  {
    std::ofstream f(cfg.path);
    json flags;
    flags["env"] = config["env"].dump();
    flags["steps"] = config["steps"];
    flags["seed"] = config["seed"];
    flags["stop"] = config["stop"];
    flags["start"] = config["start"];
    flags["budget"] = config["budget"];
    f << flags.dump();
  }
  CHECK(run_cli({"simulate", "--config-file", cfg.path, "--out", out2.path}) == 0);
  auto doc1 = json::parse(slurp(out1.path));
  auto doc2 = json::parse(slurp(out2.path));
  CHECK(doc1["final"] == doc2["final"]);
  CHECK(doc1["hit_times"] == doc2["hit_times"]);
}
