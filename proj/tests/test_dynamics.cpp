#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "roacolearn/dynamics.hpp"
#include "roacolearn/error.hpp"
#include "support.hpp"

using namespace roa;

namespace {

State state(double a, double b) { return Eigen::Vector2d(a, b); }

State integrate(const SystemSpec& spec, State x, double dt, int steps) {
  for (int i = 0; i < steps; ++i) x = rk4_step(spec, x, dt, i);
  return x;
}

}  // namespace

TEST_CASE("vdp field hand values") {
  const SystemSpec vdp = make_system("vdp", {{"gamma", 3.0}});
  CHECK(eval_field(vdp, state(0, 0)).norm() == 0.0);
  CHECK((eval_field(vdp, state(1, 1)) - state(-1, 1)).norm() < 1e-15);
  CHECK((eval_field(vdp, state(0, 1)) - state(-1, -3)).norm() < 1e-15);
}

TEST_CASE("unknown system is rejected") {
  try {
    make_system("lorenz");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownSystem);
  }
}

TEST_CASE("rk4 keeps the equilibrium") {
  const SystemSpec vdp = make_system("vdp");
  for (double dt : {1e-3, 0.01, 0.1}) {
    CHECK(rk4_step(vdp, state(0, 0), dt).norm() < 1e-12);
  }
  const Trajectory t = simulate(vdp, state(0, 0), {0.01, 2000}, {});
  CHECK(t.clean.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("harmonic quarter period") {
  const SystemSpec osc = make_system("vdp", {{"gamma", 0.0}});
  const State x = integrate(osc, state(1, 0), 0.01, 157);
  // x' = -y, y' = x rotates counter-clockwise: (cos t, sin t).
  const double t = 1.57;
  CHECK((x - state(std::cos(t), std::sin(t))).norm() < 1e-9);
  CHECK((x - state(0, 1)).norm() < 1e-3);
}

TEST_CASE("rk4 global error is fourth order") {
  const SystemSpec vdp = make_system("vdp");
  const State x0 = state(0.5, 0.5);
  const double horizon = 2.0;
  const double dt = 0.02;
  const State reference = integrate(vdp, x0, dt / 20, static_cast<int>(std::lround(horizon * 20 / dt)));
  const double e1 = (integrate(vdp, x0, dt, static_cast<int>(std::lround(horizon / dt))) - reference).norm();
  const double e2 = (integrate(vdp, x0, dt / 2, static_cast<int>(std::lround(2 * horizon / dt))) - reference).norm();
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("harmonic energy drift per period") {
  const SystemSpec osc = make_system("vdp", {{"gamma", 0.0}});
  const int steps = static_cast<int>(std::lround(2 * std::numbers::pi / 0.01));
  const State x = integrate(osc, state(1, 0), 0.01, steps);
  CHECK(std::abs(x.squaredNorm() - 1.0) < 1e-6);
}

TEST_CASE("noise model") {
  const SystemSpec vdp = make_system("vdp");
  SUBCASE("zero sigma leaves observations clean") {
    const Trajectory t = simulate(vdp, state(0.5, 0.2), {0.01, 100}, {0.0, 7});
    CHECK(t.noisy == t.clean);
  }
  SUBCASE("residual spread matches sigma") {
    const Trajectory t = simulate(vdp, state(0, 0), {0.01, 4999}, {0.05, 11});
    const Eigen::ArrayXXd r = (t.noisy - t.clean).array();
    const double mean = r.mean();
    const double sd = std::sqrt((r - mean).square().sum() / static_cast<double>(r.size() - 1));
    CHECK(sd >= 0.045);
    CHECK(sd <= 0.055);
  }
  SUBCASE("same seed gives identical trajectories") {
    const Trajectory a = simulate(vdp, state(0.3, -0.4), {0.01, 300}, {0.05, 3});
    const Trajectory b = simulate(vdp, state(0.3, -0.4), {0.01, 300}, {0.05, 3});
    CHECK(a.noisy == b.noisy);
    CHECK(a.clean == b.clean);
    CHECK(a.times == b.times);
  }
}

TEST_CASE("trajectory from inside the basin settles") {
  const SystemSpec vdp = make_system("vdp");
  const Trajectory t = simulate(vdp, state(0.8, 1.0), {0.01, 2000}, {});
  CHECK(t.clean.col(t.length() - 1).norm() < 0.05);
  CHECK(t.length() == 2001);
  CHECK(t.times.back() == doctest::Approx(20.0));
}

TEST_CASE("divergent trajectory is truncated") {
  const SystemSpec vdp = make_system("vdp");
  const Trajectory t = simulate(vdp, state(3, 3), {0.01, 2000}, {});
  CHECK(t.diverged);
  CHECK(t.length() < 2001);
}

TEST_CASE("labels against a quadratic level set") {
  const SystemSpec vdp = make_system("vdp");
  const LyapunovModel v = test::quadratic_model(0.01);
  const IntegratorConfig ic{0.01, 2000};
  CHECK(label_initial_state(vdp, state(0, 0), v, 0.01, ic) == 1);
  CHECK(label_initial_state(vdp, state(3, 3), v, 0.01, ic) == -1);
  CHECK(label_initial_state(vdp, state(0.1, 0), v, 0.01, ic) == 1);
}

TEST_CASE("labels ignore measurement noise") {
  const SystemSpec vdp = make_system("vdp");
  const LyapunovModel v = test::quadratic_model(0.01);
  Rng rng(5);
  const Box box = make_box({-2.5, -5}, {2.5, 5});
  for (int i = 0; i < 10; ++i) {
    const State x0 = box.sample(rng);
    const Trajectory quiet = simulate(vdp, x0, {0.01, 2000}, {0.0, 1});
    const Trajectory loud = simulate(vdp, x0, {0.01, 2000}, {0.5, 2});
    CHECK(label_trajectory(quiet, v, 0.01) == label_trajectory(loud, v, 0.01));
  }
}

TEST_CASE("truncation stops at the first entry") {
  const SystemSpec vdp = make_system("vdp");
  const LyapunovModel v = test::quadratic_model(0.25);
  const Trajectory t = simulate(vdp, state(1.0, 0.0), {0.01, 2000}, {});
  const Trajectory cut = truncate_at_level(t, v, 0.25);
  const Eigen::Index last = cut.length() - 1;
  CHECK(cut.clean.col(last).squaredNorm() <= 0.25);
  for (Eigen::Index i = 0; i < last; ++i) CHECK(cut.clean.col(i).squaredNorm() > 0.25);
  CHECK(cut.times.size() == static_cast<std::size_t>(cut.length()));
  CHECK(cut.noisy.cols() == cut.length());
}

TEST_CASE("true boundary") {
  const SystemSpec vdp = make_system("vdp");
  const RoaBoundary b = true_roa_boundary(vdp);
  const Eigen::Index n = b.vertices.cols();
  CHECK((b.vertices.col(0) - b.vertices.col(n - 1)).norm() == 0.0);
  CHECK(b.contains(Eigen::Vector2d::Zero()));
  CHECK(!b.contains(Eigen::Vector2d(10, 10)));
  CHECK(b.winding_number(Eigen::Vector2d::Zero()) != 0);

  // Shoelace area from the vertices, independent of area().
  double twice = 0.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    twice += b.vertices(0, i) * b.vertices(1, i + 1) - b.vertices(0, i + 1) * b.vertices(1, i);
  }
  CHECK(b.area() == doctest::Approx(std::abs(twice) / 2).epsilon(1e-9));

  const LyapunovModel v = test::quadratic_model(0.01);
  const IntegratorConfig ic{0.01, 4000};
  const Eigen::Index stride = std::max<Eigen::Index>(1, (n - 1) / 16);
  for (Eigen::Index i = 0; i + 1 < n; i += stride) {
    const State p = b.vertices.col(i);
    CHECK(label_initial_state(vdp, State(0.95 * p), v, 0.01, ic) == 1);
    CHECK(label_initial_state(vdp, State(1.05 * p), v, 0.01, ic) == -1);
  }
}

TEST_CASE("boundary csv round trip keeps membership") {
  const RoaBoundary b = true_roa_boundary(make_system("vdp"));
  std::stringstream ss;
  write_boundary_csv(ss, b);
  const RoaBoundary back = read_boundary_csv(ss);
  Rng rng(9);
  const Box box = make_box({-3, -6}, {3, 6});
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d p = box.sample(rng);
    CHECK(b.contains(p) == back.contains(p));
  }
}

TEST_CASE("integrator config is validated") {
  CHECK_THROWS_AS(IntegratorConfig({0.0, 10}).validate(), Error);
  CHECK_THROWS_AS(IntegratorConfig({0.01, 0}).validate(), Error);
}
