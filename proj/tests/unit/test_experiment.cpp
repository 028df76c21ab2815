#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/experiment.hpp"
#include "fbsde/table_io.hpp"

using namespace fbsde;
namespace fs = std::filesystem;

namespace {

fs::path out_dir(const std::string& name) {
  const char* env = std::getenv(kOutputDirEnv);
  fs::path base = env ? fs::path(env) : fs::temp_directory_path() / "fbsde_experiment_test";
  return base / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(std::string_view doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kLpVerify = R"({
  "kind": "lp-verify", "seed": 7,
  "problem": {"family": "example1"},
  "grid": {"n_steps": 16},
  "monte_carlo": {"n_paths": 200},
  "lp": {"p_values": [2, 4]}
})";

}  // namespace

TEST_CASE("parse_config fills defaults") {
  const auto c = parse_config(R"({"kind": "lp-verify", "seed": 3, "problem": {"family": "example1"}})");
  CHECK(c.kind == ExperimentKind::LpVerify);
  CHECK(c.seed == 3);
  CHECK(c.grid.n_steps == 64);
  CHECK(c.grid.T == 1.0);
  CHECK(c.n_paths == 1000);
  CHECK(c.lp.p_values == std::vector<double>{4.0});
  CHECK(c.problem.at("a") == 1.0);
  CHECK(c.problem.at("b") == 0.0);
}

TEST_CASE("parse_config rejects bad documents by name") {
  CHECK(error_of(R"({"kind": "kp-gate", "seed": 1, "kp": {"p": 2, "L_sigma": 0.1, "K": 1, "sigma_z": 1}})")
            .find("sigma_z") != std::string::npos);
  CHECK(error_of(R"({"kind": "solve", "seed": 1, "problem": {"family": "example1"}, "monte_carlo": {"n_paths": 0}})")
            .find("n_paths") != std::string::npos);
  CHECK(error_of(R"({"kind": "teleport", "seed": 1})").find("teleport") != std::string::npos);
  CHECK(error_of(R"({"kind": "solve", "seed": 1})").find("problem") != std::string::npos);
  CHECK(error_of(R"({"kind": "kp-gate", "seed": 1, "kp": {"p": 1, "L_sigma": 0, "K": 0}})").find("p") !=
        std::string::npos);
  const auto syntax = error_of("{\n  \"kind\": \"solve\",\n  \"seed\": ,\n}");
  CHECK(syntax.find("line 3") != std::string::npos);
  CHECK(syntax.find("column") != std::string::npos);
}

TEST_CASE("property: emit then parse is the identity") {
  const char* docs[] = {
      kLpVerify,
      R"({"kind": "kp-gate", "seed": 1, "kp": {"p": 3, "bdg_upper": 2, "L_sigma": 0.1, "K": 1, "sqrt_C1": 0.5}})",
      R"({"kind": "solve", "seed": 5, "problem": {"family": "example1", "a": [0.5, 1], "b": 1}})",
      R"({"kind": "oracle", "seed": 9, "problem": {"family": "gaussian-linear", "slope": 3}})",
      R"({"kind": "lq", "seed": 2, "problem": {"family": "lq-hamiltonian", "n": 1, "m_u": 1, "x0": [1],
          "B": [[1]], "Q": [[1]], "H": [[1]]}, "lq": {"epsilon": 0.2, "xi_prime": [0.5]}})",
  };
  for (const char* d : docs) {
    const auto c = parse_config(d);
    const auto again = parse_config(emit_config(c));
    CHECK(again == c);
    CHECK(emit_config(again) == emit_config(c));
  }
}

TEST_CASE("lp-verify writes its manifest and re-ingestible tables") {
  auto c = parse_config(kLpVerify);
  c.output_dir = out_dir("lp_verify").string();
  const auto rep = run_experiment(c);
  std::set<std::string> names;
  for (const auto& f : rep.files) names.insert(f.filename().string());
  CHECK(names == std::set<std::string>{"report.json", "lp_table.csv", "stability_table.csv"});
  CHECK(rep.document.at("artifact_version") == std::string(kArtifactVersion));
  CHECK(rep.document.at("kind") == "lp-verify");
  for (const auto& f : rep.files) {
    if (f.extension() != ".csv") continue;
    const auto t = read_table(f);
    CHECK_FALSE(t.rows.empty());
    const auto seed_col = t.column("seed");
    const auto steps_col = t.column("n_steps");
    for (const auto& row : t.rows) {
      CHECK(row[seed_col] == 7.0);
      CHECK(row[steps_col] == 16.0);
    }
  }
}

TEST_CASE("property: the same config produces byte-identical tables") {
  auto c = parse_config(kLpVerify);
  c.output_dir = out_dir("det_a").string();
  run_experiment(c);
  c.output_dir = out_dir("det_b").string();
  run_experiment(c);
  for (const char* f : {"lp_table.csv", "stability_table.csv"}) {
    CHECK(slurp(out_dir("det_a") / f) == slurp(out_dir("det_b") / f));
  }
}

TEST_CASE("kp-gate reproduces the closed-form constant") {
  auto c = parse_config(R"({"kind": "kp-gate", "seed": 1,
      "kp": {"p": 2, "bdg_upper": 1, "bdg_lower": 1, "L_sigma": 0.1, "K": 1}})");
  c.output_dir = out_dir("kp").string();
  const auto rep = run_experiment(c);
  const auto& kp = rep.document.at("results").at("kp");
  CHECK(kp.at("K_p").get<double>() == doctest::Approx(20.0 / 3.0).epsilon(1e-14));
  CHECK(kp.at("h51").get<bool>());
  const auto t = read_table(out_dir("kp") / "kp_table.csv");
  CHECK(t.rows.at(0).at(t.column("K_p")) == doctest::Approx(20.0 / 3.0));
}

TEST_CASE("run_experiment prefixes errors with the kind and keeps their type") {
  auto c = parse_config(R"({"kind": "field", "seed": 1, "grid": {"n_steps": 8},
      "problem": {"family": "polynomial", "L": 1e9, "K": 1, "L_sigma": 0,
                  "driver": [{"coef": 1e9, "y": 1}], "terminal": [{"coef": 1, "x": 1}]}})");
  c.output_dir = out_dir("diverge").string();
  try {
    run_experiment(c);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).rfind("experiment field: ", 0) == 0);
  }
}
