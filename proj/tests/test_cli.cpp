#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "opq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = opq::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "opq_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_CASE("exit codes for success, usage and domain errors") {
  const auto dir = scratch("codes");
  CHECK(run({"--out-dir", (dir / "a").string(), "onset"}).code == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"--tau-x", "-1", "onset"}).code == 1);
  CHECK(run({"--system", "magic", "onset"}).code == 1);
  const auto domain = run({"--system", "driven_z", "--out-dir", (dir / "b").string(), "onset"});
  CHECK(domain.code == 2);
  CHECK(domain.err.find("NotInIsland") != std::string::npos);
}

TEST_CASE("the installed binary reports the same exit codes") {
  const char* bin = std::getenv("OPQ_BIN");
  REQUIRE(bin != nullptr);
  const auto dir = scratch("binary");
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("--out-dir " + (dir / "ok").string() + " onset") == 0);
  CHECK(status("onset --no-such-flag") == 1);
  CHECK(status("--system driven_z --out-dir " + (dir / "bad").string() + " onset") == 2);
}

TEST_CASE("flags override the JSON config, which overrides defaults") {
  const auto dir = scratch("precedence");
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << json{{"t", 5.0}, {"theta_f", 3.3}, {"out_dir", (dir / "out").string()}}.dump();
  const auto r = run({"--config", cfg.string(), "--t", "4", "classify", "--p-i", "0.1"});
  REQUIRE(r.code == 0);
  const auto doc = load(dir / "out" / "classify.json");
  CHECK(doc["config"]["t"] == 4.0);
  CHECK(doc["config"]["theta_f"] == 3.3);
  CHECK(doc["config"]["seed"] == 7);
  CHECK(doc["config"]["classify"]["p_i"] == 0.1);
}

TEST_CASE("unknown config keys are rejected") {
  const auto dir = scratch("strict");
  const auto top = dir / "top.json";
  std::ofstream(top) << R"({"theta_i": 1.0, "nope": 2})";
  const auto r = run({"--config", top.string(), "onset"});
  CHECK(r.code == 1);
  CHECK(r.err.find("nope") != std::string::npos);
  const auto block = dir / "block.json";
  std::ofstream(block) << R"({"multipath": {"theta_tol": 1e-8, "extra": true}})";
  CHECK(run({"--config", block.string(), "multipath"}).code == 1);
}

TEST_CASE("the emitted config reproduces the run byte for byte") {
  const auto dir = scratch("roundtrip");
  REQUIRE(run({"--out-dir", (dir / "one").string(), "--t", "9", "multipath"}).code == 0);
  auto cfg = load(dir / "one" / "multipath.json")["config"];
  cfg["out_dir"] = (dir / "two").string();
  std::ofstream(dir / "cfg.json") << cfg.dump();
  REQUIRE(run({"--config", (dir / "cfg.json").string(), "multipath"}).code == 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir / "one")) {
    if (e.path().extension() != ".csv") continue;
    CHECK(slurp(e.path()) == slurp(dir / "two" / e.path().filename()));
    ++compared;
  }
  CHECK(compared == 3);

  // Seeded simulation reruns identically as well, whatever the worker cap.
  REQUIRE(run({"--out-dir", (dir / "s1").string(), "--t", "0.5", "simulate", "--n", "16"}).code == 0);
  REQUIRE(run({"--out-dir", (dir / "s2").string(), "--t", "0.5", "--threads", "1", "simulate", "--n", "16"})
              .code == 0);
  CHECK(slurp(dir / "s1" / "tracks.csv") == slurp(dir / "s2" / "tracks.csv"));
  CHECK(slurp(dir / "s1" / "final_theta.csv") == slurp(dir / "s2" / "final_theta.csv"));
}

TEST_CASE("artifacts carry the documented names and headers") {
  const auto dir = scratch("artifacts");
  auto header = [](const fs::path& p) {
    std::ifstream in(p);
    std::string h;
    std::getline(in, h);
    return h;
  };
  REQUIRE(run({"--out-dir", (dir / "sim").string(), "--t", "0.2", "simulate", "--n", "5"}).code == 0);
  CHECK(header(dir / "sim" / "tracks.csv") == "traj_id,t,theta");
  CHECK(header(dir / "sim" / "final_theta.csv") == "traj_id,theta_final");
  CHECK(fs::exists(dir / "sim" / "simulate.json"));

  REQUIRE(run({"--out-dir", (dir / "cls").string(), "classify", "--p-i", "-0.44247943"}).code == 0);
  CHECK(header(dir / "cls" / "path.csv") == "t,theta,p,S");
  CHECK(load(dir / "cls" / "classify.json").contains("config"));

  const auto lim = run({"--system", "driven_z", "--tau", "5", "--theta-i", "0", "--theta-f", "1.5",
                        "--out-dir", (dir / "lim").string(), "limits"});
  REQUIRE(lim.code == 0);
  CHECK(lim.err.find("warning") != std::string::npos);
  CHECK(header(dir / "lim" / "rabi_limits.csv") == "tau,delta_tau,T_approx,T_numeric,S_A_approx,S_numeric");
  CHECK(header(dir / "lim" / "wrapped_gaussian.csv") == "theta,density");

  REQUIRE(run({"--out-dir", (dir / "por").string(), "--t", "2", "portrait"}).code == 0);
  for (const char* f : {"portrait_contours.csv", "sdot.csv", "portrait.json"}) CHECK(fs::exists(dir / "por" / f));
}

TEST_CASE("quick verification runs the deterministic checks") {
  const auto dir = scratch("verify");
  const auto r = run({"--out-dir", dir.string(), "verify", "--quick", "--strict"});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  const auto doc = load(dir / "verify.json");
  std::size_t skipped = 0;
  for (const auto& c : doc["checks"]) skipped += c["status"] == "SKIP";
  CHECK(skipped == 2);
}
