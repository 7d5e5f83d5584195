#include <algorithm>
#include <cmath>
#include <fstream>
#include <filesystem>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "quick_config.hpp"
#include "roacolearn/error.hpp"
#include "roacolearn/harness.hpp"
#include "roacolearn/io.hpp"

using namespace roa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("roacolearn_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::Ball, Method::Roa, Method::RoaReg}) {
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("roa-reg"), Error);

  RunConfig base;
  base.learn.lambda_psi = 0.0;
  CHECK(configure_method(base, Method::Ball).mode == SamplingMode::Ball);
  CHECK(configure_method(base, Method::Ball).learn.lambda_psi == 0.0);
  CHECK(configure_method(base, Method::Roa).mode == SamplingMode::RoaGap);
  CHECK(configure_method(base, Method::RoaReg).learn.lambda_psi > 0.0);
  base.learn.lambda_psi = 0.25;
  CHECK(configure_method(base, Method::RoaReg).learn.lambda_psi == 0.25);
  CHECK(configure_method(base, Method::Roa).learn.lambda_psi == 0.0);
}

TEST_CASE("median") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(median({nan, 5, 1}) == 3.0);
  CHECK(std::isnan(median({})));
  CHECK(std::isnan(median({nan})));
}

TEST_CASE("vector field csv") {
  std::ostringstream os;
  write_vector_field_csv(os, make_box({0, 0}, {1, 2}), 3, [](const State& x) {
    State f(2);
    f << x[1], -x[0];
    return f;
  });
  std::istringstream is(os.str());
  const auto rows = read_csv_numbers(is);
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == std::vector<double>{0, 0, 0, 0});
  CHECK(rows[8] == std::vector<double>{1, 2, 2, -1});
  CHECK_THROWS_AS(write_vector_field_csv(os, make_box({0}, {1}), 3, [](const State& x) { return x; }),
                  Error);
}

TEST_CASE("plot export") {
  RunConfig cfg = test::quick_config(1);
  const RunResult r = run(cfg);
  REQUIRE(r.ok());
  const fs::path a = scratch("export_a");
  const fs::path b = scratch("export_b");
  ExportConfig ec;
  ec.raster_resolution = 21;
  export_plots(r, a, ec);
  export_plots(r, b, ec);
  for (const char* name : {"manifest.json", "stages.json", "level_set_initial.csv", "field_true.csv",
                           "field_learned.csv", "roa_boundary.csv", "training_curve.csv",
                           "lyapunov.json", "dynamics.json", "trajectories/index.csv"}) {
    INFO(name);
    REQUIRE(fs::exists(a / name));
    CHECK(read_text_file(a / name) == read_text_file(b / name));
  }
  std::istringstream raster(read_text_file(a / "level_set_initial.csv"));
  CHECK(read_csv_numbers(raster).size() == 21u * 21u);
  CHECK(run_config_from_json(nlohmann::json::parse(read_text_file(a / "manifest.json"))).seed ==
        cfg.seed);
  CHECK(!fs::exists(a / "interpolants.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("truth export") {
  const fs::path dir = scratch("truth");
  const RoaBoundary b = export_truth(RunConfig{}, dir);
  CHECK(b.area() == doctest::Approx(20.488).epsilon(0.005));
  std::ifstream is(dir / "roa_boundary.csv");
  CHECK(read_boundary_csv(is).area() == doctest::Approx(b.area()).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("comparison table") {
  RunConfig cfg = test::quick_config(1);
  const ComparisonTable t = run_comparison(cfg, {4});
  REQUIRE(t.rows.size() == 3);
  REQUIRE(t.medians.size() == 3);
  for (const auto& row : t.rows) {
    CHECK(row.error.empty());
    CHECK(std::isfinite(row.mse));
  }
  CHECK(t.rows[0].method == Method::Ball);
  CHECK(t.rows[0].trajectories == cfg.ball_budget_factor * cfg.growth.samples_per_stage);
  CHECK(t.medians[1].mse == t.rows[1].mse);
  const fs::path dir = scratch("comparison");
  write_comparison(t, dir);
  const std::string med = read_text_file(dir / "comparison_median.csv");
  CHECK(med.rfind("method,trajectories,mse\nball,", 0) == 0);
  CHECK(std::count(med.begin(), med.end(), '\n') == 4);
  fs::remove_all(dir);
  CHECK_THROWS_AS(run_comparison(cfg, {}), Error);
}

TEST_CASE("invariant checks pass") {
  for (const CheckResult& c : run_checks(RunConfig{})) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
}
