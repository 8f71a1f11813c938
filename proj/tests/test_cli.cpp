#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "pmpstab/io.hpp"

using namespace pmpstab;
namespace fs = std::filesystem;

namespace {

const std::string kCli = PMPSTAB_CLI;
const std::string kDi = PMPSTAB_SOURCE_DIR "/configs/double_integrator.json";
const std::string kPendulum = PMPSTAB_SOURCE_DIR "/configs/pendulum.json";

struct Result {
  int code = -1;
  std::string out, err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("pmpstab_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = kCli + " " + args + " 2>" + err.string();
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t k = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, k);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

std::string path(const std::string& name) { return (scratch() / name).string(); }

// value of `key=` in a line of key=value pairs
double field(const std::string& text, const std::string& key) {
  const auto p = text.find(key + "=");
  REQUIRE(p != std::string::npos);
  return std::strtod(text.c_str() + p + key.size() + 1, nullptr);
}

CsvTable table(const std::string& file) {
  std::ifstream in(file);
  return read_csv(in);
}

}  // namespace

TEST_CASE("synthesize writes a feedback file with 256 branches") {
  const Result r = run("synthesize --config " + kDi + " --out " + path("man.csv"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "branches") == 256);
  CHECK(field(r.out, "failed_branches") == 0);
  CHECK(r.out.find("ok=true") != std::string::npos);

  std::ifstream in(path("man.csv"));
  const auto header = read_feedback_header(in);
  CHECK(header.at("C") == "1");
  const CsvTable t = read_csv(in);
  CHECK(t.header.front() == "psi");
  CHECK(t.header.back() == "event_flag");
  std::set<double> psis;
  for (const auto& row : t.rows) psis.insert(row[0]);
  CHECK(psis.size() == 256);
  CHECK(t.rows.size() == field(r.out, "samples"));
}

TEST_CASE("simulate from (3, 3) ends inside the convergence ball") {
  const Result r = run("simulate --config " + kDi + " --x0 3,3 --out " + path("traj.csv"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("status=converged") == 0);
  const CsvTable t = table(path("traj.csv"));
  CHECK(t.header == std::vector<std::string>{"t", "x1", "x2", "u1", "event_flag"});
  REQUIRE(!t.rows.empty());
  const auto& last = t.rows.back();
  CHECK(std::hypot(last[1], last[2]) <= 1e-2);
  for (const auto& row : t.rows) CHECK(std::fabs(row[3]) <= 1.0);
}

TEST_CASE("switching-curve --compare prints the deviation") {
  const Result r = run("switching-curve --config " + kDi + " --out " + path("curve.csv") +
                       " --compare --margin 0.5 --count 20");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "points") == 20);
  CHECK(field(r.out, "max_deviation") <= 1e-2);
  const CsvTable t = table(path("curve.csv"));
  CHECK(t.header == std::vector<std::string>{"polyline", "source", "param", "x1", "x2"});
}

TEST_CASE("illuminate and plot") {
  const Result r = run("illuminate --config " + kDi + " --out " + path("ill.csv"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "points") == 441);
  CHECK(field(r.out, "dark") == 0);

  const Result p = run("plot --in " + path("ill.csv") + " --out " + path("ill.svg"));
  REQUIRE(p.code == 0);
  const std::string svg = slurp(path("ill.svg"));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("observer run on the pendulum") {
  const Result r = run("observer --config " + kPendulum + " --errors " + path("err.csv"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("certified=true") != std::string::npos);
  CHECK(field(r.out, "bound_violations") == 0);
  CHECK(field(r.out, "final_norm") <= 1e-2);
  const CsvTable t = table(path("err.csv"));
  CHECK(t.header == std::vector<std::string>{"t", "e1", "e2", "V_e", "W"});
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
  REQUIRE(run("synthesize --config " + kDi + " --out " + path("a.csv")).code == 0);
  REQUIRE(run("synthesize --config " + kDi + " --out " + path("b.csv")).code == 0);
  CHECK(slurp(path("a.csv")) == slurp(path("b.csv")));
  REQUIRE(::setenv("PMP_STAB_THREADS", "1", 1) == 0);
  REQUIRE(run("synthesize --config " + kDi + " --out " + path("c.csv")).code == 0);
  ::unsetenv("PMP_STAB_THREADS");
  CHECK(slurp(path("a.csv")) == slurp(path("c.csv")));
}

TEST_CASE("exit codes and the diagnostic line") {
  auto is_diag = [](const std::string& err, const std::string& kind) {
    return err.rfind("error=" + kind + " message=\"", 0) == 0 &&
           std::count(err.begin(), err.end(), '\n') == 1;
  };

  Result r = run("synthesize --config " + path("missing.json") + " --out " + path("x.csv"));
  CHECK(r.code == 1);
  CHECK(is_diag(r.err, "validation"));

  std::ofstream(path("bad.json")) << R"({"system": {"n": 2, "drift": ["x2", "0", "1"],
    "columns": [["0", "1"]]}, "lyapunov": {"V": "x1^2+x2^2"}, "inner": ["0"]})";
  r = run("synthesize --config " + path("bad.json") + " --out " + path("x.csv"));
  CHECK(r.code == 1);
  CHECK(r.err.find("system.drift") != std::string::npos);

  r = run("simulate --config " + kDi + " --x0 1,2,3 --out " + path("x.csv"));
  CHECK(r.code == 1);
  CHECK(is_diag(r.err, "validation"));

  r = run("simulate --config " + kDi + " --x0 500,500 --out " + path("x.csv"));
  CHECK(r.code == 2);
  CHECK(is_diag(r.err, "numerical"));
  CHECK(r.err.find("not-covered") != std::string::npos);

  // an amplitude above C fails the armed bound check
  std::string wide = slurp(kDi);
  wide.replace(wide.find("[[-1, 1]], \"k\": 1"), 17, "[[-2, 2]], \"k\": 2");
  std::ofstream(path("wide.json")) << wide;
  r = run("synthesize --config " + path("wide.json") + " --out " + path("x.csv"));
  CHECK(r.code == 2);
  CHECK(r.err.find("exceeds C") != std::string::npos);

  r = run("bogus");
  CHECK(r.code == 1);
  r = run("plot --in " + path("ill.csv") + " --out " + path("x.svg") + " --y nope");
  CHECK(r.code == 1);
  CHECK(run("--help").code == 0);
}
