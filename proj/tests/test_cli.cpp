#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "adjustkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = adjustkit::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("adjustkit_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

// Risks 0.02, 0.5, 0.98 and 1 along a continuous x: the linear-risk fit is
// pinned to the boundary.
std::string boundary_csv() {
  std::ostringstream s;
  s << "id,treat,outcome,x\n";
  const double xs[] = {0.0, 1.0, 2.0, 6.0};
  const int events[] = {1, 25, 49, 50};
  int id = 0;
  for (int k = 0; k < 4; ++k) {
    for (int arm = 0; arm < 2; ++arm) {
      for (int i = 0; i < 50; ++i) s << ++id << "," << arm << "," << (i < events[k] ? 1 : 0) << "," << xs[k] << "\n";
    }
  }
  return s.str();
}

const json kBoundarySchema = {{"id", "id"}, {"covariates", {{{"column", "x"}, {"kind", "continuous"}}}}};

}  // namespace

TEST_CASE("demo exit codes") {
  const auto ok = run({"demo", "collapsibility"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(run({"demo", "appendix1"}).code == 0);
  const auto bad = run({"demo", "unknown"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("UnknownScenario") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("analyze the embedded trial with IPTW") {
  const fs::path cfg = write_file("iptw.json", json{{"builtin", "appendix1"},
                                                    {"estimand", {{"summary", "logOR"}, {"level", "marginal"},
                                                                  {"population", "complete_case"}}},
                                                    {"method", "iptw"},
                                                    {"terms", {"x"}}}
                                                   .dump());
  const auto r = run({"analyze", "--config", cfg.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("0.698") != std::string::npos);

  const auto j = run({"--format", "json", "analyze", "--config", cfg.string()});
  REQUIRE(j.code == 0);
  const json doc = json::parse(j.out);
  for (const char* key : {"command", "config", "results", "diagnostics", "seed"}) CHECK(doc.contains(key));
  CHECK(doc.at("command") == "analyze");
  CHECK(std::abs(doc.at("results").at(0).at("exp_estimate").get<double>() - 0.698) < 5e-4);
  CHECK(doc.at("config").at("method").size() == 1);
}

TEST_CASE("estimation failure exits 4 with the diagnosis") {
  const fs::path data = write_file("boundary.csv", boundary_csv());
  const fs::path cfg = write_file("direct_rd.json", json{{"dataset", data.string()},
                                                         {"schema", kBoundarySchema},
                                                         {"estimand", {{"summary", "RD"}, {"level", "conditional"}}},
                                                         {"method", "direct"},
                                                         {"terms", {"x"}}}
                                                        .dump());
  const auto r = run({"analyze", "--config", cfg.string()});
  CHECK(r.code == 4);
  CHECK(r.out.find("NonConverged") != std::string::npos);
  const auto j = run({"--format", "json", "analyze", "--config", cfg.string()});
  const json doc = json::parse(j.out);
  CHECK(doc.at("diagnostics").at(0).at("code") == "NonConverged");
  CHECK(doc.at("diagnostics").at(0).at("category") == "estimation");
}

TEST_CASE("configuration and data errors") {
  const fs::path bad_level = write_file("bad_level.json", json{{"builtin", "appendix1"},
                                                               {"estimand", {{"summary", "logOR"}, {"level", "conditional"}}},
                                                               {"method", "standardisation"},
                                                               {"terms", {"x"}}}
                                                              .dump());
  CHECK(run({"analyze", "--config", bad_level.string()}).code == 2);
  CHECK(run({"validate-config", "--config", bad_level.string()}).code == 2);

  const fs::path unknown_key = write_file("unknown_key.json", json{{"builtin", "appendix1"}, {"colour", "red"}}.dump());
  CHECK(run({"validate-config", "--config", unknown_key.string()}).code == 2);

  const fs::path indicator = write_file(
      "indicator.json", json{{"builtin", "appendix1"},
                             {"estimand", {{"summary", "logOR"}, {"level", "conditional"}}},
                             {"method", "direct"},
                             {"terms", {"x"}},
                             {"missing", {{"strategy", "missing_indicator"}, {"vars", {"x"}}}}}
                            .dump());
  CHECK(run({"validate-config", "--config", indicator.string()}).code == 2);

  const fs::path good = write_file("good.json", json{{"builtin", "appendix1"}, {"method", "unadjusted"}}.dump());
  CHECK(run({"validate-config", "--config", good.string()}).code == 0);
  CHECK(run({"analyze", "--config", (scratch() / "missing.json").string()}).code == 2);

  const fs::path csv = write_file("bad.csv", "id,treat,outcome,x\n1,0,1,0.5\n2,3,0,0.1\n");
  const fs::path cfg = write_file("bad_data.json", json{{"dataset", csv.string()},
                                                        {"schema", kBoundarySchema},
                                                        {"method", "unadjusted"},
                                                        {"estimand", {{"summary", "RD"}}}}
                                                       .dump());
  const auto r = run({"analyze", "--config", cfg.string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("BadTreatValue") != std::string::npos);
}

TEST_CASE("simulation validation") {
  const fs::path zero = write_file("zero.json", json{{"replications", 0}}.dump());
  CHECK(run({"simulate", "--config", zero.string()}).code == 2);
  CHECK(run({"simulate", "--replications", "0"}).code == 2);
}

TEST_CASE("null-effect simulation covers at the nominal rate") {
  const int reps = 1000;
  const fs::path cfg = write_file("null.json", json{{"generator", "logistic"},
                                                    {"parameters", {{"treatment", 0.0}, {"n", 400}}},
                                                    {"estimand", {{"summary", "RD"}}},
                                                    {"methods", {"unadjusted", "standardisation", "iptw"}},
                                                    {"terms", {"x"}},
                                                    {"replications", reps},
                                                    {"seed", 2026}}
                                                   .dump());
  const auto r = run({"--format", "json", "simulate", "--config", cfg.string()});
  REQUIRE(r.code == 0);
  const json doc = json::parse(r.out);
  const auto& methods = doc.at("results").at(0).at("methods");
  REQUIRE(methods.size() == 3);
  const double mc = std::sqrt(0.95 * 0.05 / reps);
  for (const auto& m : methods) {
    CAPTURE(m.at("method").get<std::string>());
    CHECK(m.at("true_value").get<double>() == 0.0);
    CHECK(std::abs(m.at("coverage").get<double>() - 0.95) <= 2 * mc);
  }
}

TEST_CASE("quadratic simulation reproduces the interval ordering") {
  const fs::path cfg = write_file("quad.json", json{{"generator", "quadratic"},
                                                    {"parameters", {{"intervals", {{-0.5, 0.5}, {0, 1}, {0.5, 1.5}}},
                                                                    {"noise_sd", 0.0}}},
                                                    {"methods", {"unadjusted", "direct"}},
                                                    {"replications", 2},
                                                    {"seed", 3}}
                                                   .dump());
  const auto r = run({"--format", "json", "simulate", "--config", cfg.string()});
  REQUIRE(r.code == 0);
  const json doc = json::parse(r.out);
  REQUIRE(doc.at("results").size() == 3);
  // 100 per arm on a shared grid: on the symmetric interval the two fits
  // leave the same residuals and differ only through n-2 vs n-3 df.
  const double df_ratio = std::sqrt(198.0 / 197.0);
  double prev = 0.0;
  for (const auto& s : doc.at("results")) {
    const auto& m = s.at("methods");
    const double un = m.at(0).at("mean_model_se").get<double>();
    const double adj = m.at(1).at("mean_model_se").get<double>();
    CHECK(adj <= un * df_ratio * (1 + 1e-12));
    CHECK(un > prev);
    prev = un;
  }
}
