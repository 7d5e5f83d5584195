#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "roacolearn/dynamics.hpp"
#include "roacolearn/error.hpp"
#include "roacolearn/interpolant.hpp"

using namespace roa;

namespace {

std::vector<double> grid(double a, double b, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return t;
}

}  // namespace

TEST_CASE("rbf kernel") {
  CHECK(rbf_kernel(0.3, 0.3, 0.7) == 1.0);
  CHECK(rbf_kernel(0.0, 1.0, 1.0) == doctest::Approx(std::exp(-0.5)));
  CHECK(rbf_kernel(0.0, 1.0, 1.0) == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(rbf_kernel(0.2, 1.7, 0.4) == rbf_kernel(1.7, 0.2, 0.4));
}

TEST_CASE("near-interpolation with a vanishing ridge") {
  const auto t = grid(0.0, 3.0, 12);
  std::vector<double> y;
  for (double s : t) y.push_back(std::sin(2 * s) + 0.3 * s);
  const Interpolant f = fit_interpolant(t, y, 0.3, 1e-12, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(f.value(t[i]) - y[i]) < 1e-8);
}

TEST_CASE("constant data") {
  const auto t = grid(0.0, 10.0, 101);
  const std::vector<double> y(t.size(), 2.5);
  const Interpolant f = fit_interpolant(t, y, 0.5, 1e-6, 0.0);
  for (double s = 1.0; s <= 9.0; s += 0.137) {
    CHECK(std::abs(f.value(s) - 2.5) < 1e-3);
    CHECK(std::abs(f.derivative(s)) < 1e-2);
  }
}

TEST_CASE("closed form agrees with gradient descent on the ridge objective") {
  const auto t = grid(0.0, 7.0, 8);
  std::vector<double> y;
  for (double s : t) y.push_back(std::cos(s));
  const double bw = 0.5, lambda = 1e-2, sigma = 0.1;
  const Interpolant closed = fit_interpolant(t, y, bw, lambda, sigma);

  const Eigen::Index n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      k(i, j) = std::exp(-std::pow(t[i] - t[j], 2) / (2 * bw * bw));
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  // grad of |K w - y|^2 / (2 sigma^2) + lambda/2 w^T K w
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd hess = k * k / (sigma * sigma) + lambda * k;
  const double step = 1.0 / hess.selfadjointView<Eigen::Lower>().eigenvalues().maxCoeff();
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd g = k * (k * w - yv) / (sigma * sigma) + lambda * k * w;
    w -= step * g;
  }
  CHECK((w - closed.weights).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("derivative matches finite differences") {
  const auto t = grid(0.0, 5.0, 40);
  std::vector<double> y;
  for (double s : t) y.push_back(std::exp(-0.3 * s) * std::sin(3 * s));
  const Interpolant f = fit_interpolant(t, y, 0.4, 1e-3, 0.05);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double s = uniform(rng, -0.5, 5.5);
    const double h = 1e-4;
    const double fd = (f.value(s + h) - f.value(s - h)) / (2 * h);
    CHECK(std::abs(f.derivative(s) - fd) < 1e-6);
  }
}

TEST_CASE("single center has zero slope at its peak") {
  const std::vector<double> t{1.5}, y{2.0};
  const Interpolant f = fit_interpolant(t, y, 0.3, 1e-3, 0.0);
  CHECK(f.derivative(1.5) == 0.0);
}

TEST_CASE("sine derivative") {
  const auto t = grid(0.0, 2 * std::numbers::pi, 50);
  std::vector<double> y;
  for (double s : t) y.push_back(std::sin(s));
  const Interpolant f = fit_interpolant(t, y, 0.5, 1e-8, 0.0);
  double worst = 0.0;
  for (double s = 0.5; s <= 2 * std::numbers::pi - 0.5; s += 0.01) {
    worst = std::max(worst, std::abs(f.derivative(s) - std::cos(s)));
  }
  CHECK(worst < 0.05);
}

TEST_CASE("default bandwidth") {
  const auto t = grid(0.0, 1.0, 101);
  CHECK(default_bandwidth(t) == doctest::Approx(5 * 0.01));
}

TEST_CASE("bundle over trajectories") {
  const SystemSpec vdp = make_system("vdp");
  std::vector<Trajectory> trajs;
  Rng rng(2);
  for (int j = 0; j < 5; ++j) {
    const State x0 = uniform_in_ball(rng, Eigen::Vector2d::Zero(), 1.0);
    trajs.push_back(simulate(vdp, x0, {0.01, 400}, {0.0, 0}, j));
  }
  const InterpolantBundle b = fit_all(trajs, {-1.0, 1e-8}, 0.0);
  CHECK(b.trajectories() == 5);
  CHECK(b.size() == 10);
  CHECK(b.stages == std::vector<int>{0, 1, 2, 3, 4});
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    const double bw = default_bandwidth(trajs[j].times);
    for (int s = 0; s < 2; ++s) {
      const Eigen::VectorXd row = trajs[j].clean.row(s).transpose();
      const Interpolant alone = fit_interpolant(trajs[j].times, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), bw, 1e-8, 0.0);
      for (Eigen::Index i = 0; i < trajs[j].length(); i += 13) {
        const double t = trajs[j].times[static_cast<std::size_t>(i)];
        CHECK(b.state(j, t)[s] == doctest::Approx(alone.value(t)).epsilon(1e-12));
        CHECK(b.derivative(j, t)[s] == doctest::Approx(alone.derivative(t)).epsilon(1e-9));
        CHECK(std::abs(b.state(j, t)[s] - row[i]) < 1e-5);
      }
    }
  }
}

TEST_CASE("bundle json round trip") {
  const SystemSpec vdp = make_system("vdp");
  std::vector<Trajectory> trajs{simulate(vdp, Eigen::Vector2d(0.4, 0.1), {0.01, 100}, {0.05, 1})};
  const InterpolantBundle b = fit_all(trajs, {}, 0.05);
  const InterpolantBundle back = bundle_from_json(to_json(b));
  for (double s : {0.0, 0.123, 0.5, 0.99}) {
    CHECK((back.state(0, s) - b.state(0, s)).norm() == 0.0);
  }
}

TEST_CASE("denoising") {
  const SystemSpec vdp = make_system("vdp");
  const double sigma = 0.05;
  Rng rng(3);
  int better = 0;
  const int count = 20;
  for (int j = 0; j < count; ++j) {
    const State x0 = uniform_in_ball(rng, Eigen::Vector2d::Zero(), 1.2);
    const Trajectory t = simulate(vdp, x0, {0.01, 2000}, {sigma, static_cast<std::uint64_t>(j + 10)});
    const InterpolantBundle b = fit_all(std::span<const Trajectory>(&t, 1), {}, sigma);
    double smooth = 0.0, raw = 0.0;
    for (Eigen::Index i = 0; i < t.length(); ++i) {
      smooth += (b.state(0, t.times[i]) - t.clean.col(i)).squaredNorm();
      raw += (t.noisy.col(i) - t.clean.col(i)).squaredNorm();
    }
    const double n = static_cast<double>(2 * t.length());
    CHECK(std::sqrt(smooth / n) <= 2 * sigma);
    if (smooth < raw) ++better;
  }
  CHECK(better >= 0.9 * count);
}

TEST_CASE("bad inputs are rejected") {
  const std::vector<double> t{0.0, 1.0}, y{1.0};
  CHECK_THROWS_AS(fit_interpolant(t, y, 0.5, 1e-3, 0.0), Error);
  const std::vector<double> y2{1.0, 2.0};
  CHECK_THROWS_AS(fit_interpolant(t, y2, -1.0, 1e-3, 0.0), Error);
}
