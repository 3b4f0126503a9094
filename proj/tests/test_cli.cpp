#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mfg/cli_runner.hpp"
#include "mfg/json_io.hpp"

using namespace mfg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mfg_cli_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

fs::path write_config(const TempDir& dir, const std::string& name,
                      const Json& config) {
  fs::path p = dir.path / name;
  write_json(config, p.string());
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::vector<std::string>& args) { return run_cli(args); }

}  // namespace

TEST_CASE("certify on the constructed model exits 0 with a report") {
  TempDir dir;
  Json cfg{{"command", "certify"},
           {"seed", 4},
           {"model", Json{{"name", "constructed"}}},
           {"certify", Json{{"trials", 120}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 0);
  Json report = read_json((out / "report.json").string());
  CHECK(report.at("verdict") == "pass");
  CHECK(report.contains("disclaimer"));
  Json manifest = read_json((out / "manifest.json").string());
  CHECK(manifest.at("exit_code") == 0);
  CHECK(manifest.contains("config_hash"));
}

TEST_CASE("certify on the violating LQ coupling exits 2 with a witness") {
  TempDir dir;
  Json cfg{{"command", "certify"},
           {"seed", 9},
           {"terminal", Json{{"name", "lq-coupling"}, {"q", 1.0}, {"c", -2.0}}},
           {"certify", Json{{"trials", 300}, {"target", "terminal"}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 2);
  Json report = read_json((out / "report.json").string());
  CHECK(report.at("verdict") == "fail");
  CHECK(report.contains("witness"));
  CHECK(report.at("witness").at("form_value").get<double>() < 0.0);
}

TEST_CASE("solve-mfg on the LQ benchmark writes grids and an oracle summary") {
  TempDir dir;
  Json cfg{{"command", "solve-mfg"},
           {"seed", 2024},
           {"model", Json{{"name", "lq"}, {"q", 1.0}, {"c", 0.5}}},
           {"terminal", Json{{"name", "quadratic"}, {"g", 1.0}}},
           {"measure", Json{{"kind", "gaussian"}, {"n", 64}, {"mean", 1.0},
                            {"sd", 0.5}}},
           {"grid", Json{{"nx", 100}, {"nt", 100}, {"T", 1.0},
                         {"drift_bound", 3.0}}},
           {"solver", Json{{"tol", 1e-8}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 0);
  CHECK(fs::exists(out / "solution.csv"));
  Json report = read_json((out / "report.json").string());
  CHECK(report.at("residual").get<double>() <= 1e-8);
  CHECK(report.at("oracle_comparison").at("sup_error_core_window").get<double>() <
        0.05);
  CHECK(report.at("oracle_comparison").at("mean_path_error").get<double>() <
        0.02);
}

TEST_CASE("schema violations point at the offending key") {
  TempDir dir;
  SUBCASE("unknown top-level key") {
    auto config = write_config(
        dir, "bad.json", Json{{"command", "certify"}, {"certfy", Json::object()}});
    CHECK(run({"--config", config.string(), "--out",
               (dir.path / "o").string()}) == 1);
  }
  SUBCASE("unknown nested key") {
    auto config = write_config(
        dir, "bad2.json",
        Json{{"command", "certify"},
             {"certify", Json{{"trils", 100}}}});
    CHECK(run({"--config", config.string(), "--out",
               (dir.path / "o").string()}) == 1);
  }
  SUBCASE("unknown command") {
    auto config = write_config(dir, "bad3.json", Json{{"command", "frobnicate"}});
    CHECK(run({"--config", config.string(), "--out",
               (dir.path / "o").string()}) == 1);
  }
  SUBCASE("missing config flag") { CHECK(run({}) == 1); }
}

TEST_CASE("same-seed reruns produce byte-identical reports") {
  TempDir dir;
  Json cfg{{"command", "certify"},
           {"seed", 31},
           {"threads", 2},
           {"model", Json{{"name", "separable"}, {"q", 1.0}, {"c", 0.5}}},
           {"certify", Json{{"trials", 150}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out1 = dir.path / "a", out2 = dir.path / "b";
  CHECK(run({"--config", config.string(), "--out", out1.string()}) == 0);
  CHECK(run({"--config", config.string(), "--out", out2.string()}) == 0);
  CHECK(slurp(out1 / "report.json") == slurp(out2 / "report.json"));
}

TEST_CASE("seed flag overrides the config seed") {
  TempDir dir;
  Json cfg{{"command", "lq-oracle"},
           {"seed", 1},
           {"lq", Json{{"q", 1.0}, {"c", 0.5}, {"g", 1.0}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string(), "--seed",
             "777"}) == 0);
  Json manifest = read_json((out / "manifest.json").string());
  CHECK(manifest.at("seed").get<std::uint64_t>() == 777);
  CHECK(fs::exists(out / "coefficients.csv"));
}

TEST_CASE("sweeps expand into child runs in hash-named directories") {
  TempDir dir;
  Json cfg{{"command", "lq-oracle"},
           {"seed", 5},
           {"threads", 2},
           {"lq", Json{{"q", 1.0}, {"c", 0.5}, {"g", 1.0}}},
           {"sweep", Json::array({Json{{"lq", Json{{"c", 0.1}}}},
                                  Json{{"lq", Json{{"c", 0.9}}}}})}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 0);
  Json manifest = read_json((out / "sweep_manifest.json").string());
  REQUIRE(manifest.at("children").size() == 2);
  for (const auto& child : manifest.at("children")) {
    fs::path child_dir = out / child.at("config_hash").get<std::string>();
    CHECK(fs::exists(child_dir / "report.json"));
    CHECK(fs::exists(child_dir / "manifest.json"));
  }
}

TEST_CASE("dmu command reports per-atom measure derivatives") {
  TempDir dir;
  Json cfg{{"command", "dmu"},
           {"seed", 11},
           {"threads", 2},
           {"model", Json{{"name", "lq"}, {"q", 1.0}, {"c", 0.5}}},
           {"terminal", Json{{"name", "quadratic"}, {"g", 1.0}}},
           {"measure", Json{{"kind", "gaussian"}, {"n", 8}, {"mean", 1.0},
                            {"sd", 0.5}}},
           {"grid", Json{{"nx", 80}, {"nt", 80}, {"T", 1.0}}},
           {"probe", Json{{"t0", 0.0}, {"x", 0.8}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 0);
  Json report = read_json((out / "report.json").string());
  CHECK(report.at("d_mu_values").size() == 8);
  CHECK(report.at("d_x_mu_values").size() == 8);
}

TEST_CASE("explicit measures round-trip through the config") {
  TempDir dir;
  Json cfg{{"command", "master-eval"},
           {"seed", 3},
           {"model", Json{{"name", "lq"}}},
           {"terminal", Json{{"name", "quadratic"}, {"g", 1.0}}},
           {"measure", Json{{"kind", "explicit"},
                            {"dim", 1},
                            {"atoms", Json::array({Json::array({0.5}),
                                                   Json::array({1.5})})},
                            {"weights", Json::array({0.5, 0.5})}}},
           {"grid", Json{{"nx", 64}, {"nt", 64}, {"T", 1.0}}},
           {"probe", Json{{"t0", 0.0}, {"x", 1.0}}}};
  auto config = write_config(dir, "c.json", cfg);
  fs::path out = dir.path / "out";
  CHECK(run({"--config", config.string(), "--out", out.string()}) == 0);
  Json report = read_json((out / "report.json").string());
  CHECK(std::isfinite(report.at("value").get<double>()));
}
