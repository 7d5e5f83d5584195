#include <cmath>

#include "doctest.h"
#include "roacolearn/colearn.hpp"
#include "roacolearn/error.hpp"
#include "roacolearn/odelearn.hpp"
#include "support.hpp"

using namespace roa;

namespace {

MatchBatch random_batch(Rng& rng, Eigen::Index m) {
  MatchBatch b{Eigen::MatrixXd(2, m), Eigen::MatrixXd(2, m), Eigen::VectorXd(m)};
  for (Eigen::Index k = 0; k < m; ++k) {
    b.states.col(k) = Eigen::Vector2d(uniform(rng, -1, 1), uniform(rng, -1, 1));
    b.targets.col(k) = Eigen::Vector2d(uniform(rng, -2, 2), uniform(rng, -2, 2));
    b.weights[k] = uniform(rng, 0.2, 1.0);
  }
  return b;
}

InterpolantBundle linear_bundle(const SystemSpec& spec, int count, int stage_of_all = 0) {
  std::vector<Trajectory> trajs;
  Rng rng(21);
  for (int j = 0; j < count; ++j) {
    const State x0 = uniform_in_ball(rng, Eigen::Vector2d::Zero(), 1.5);
    trajs.push_back(simulate(spec, x0, {0.01, 300}, {0.0, 0}, stage_of_all));
  }
  return fit_all(trajs, {-1.0, 1e-8}, 0.0);
}

}  // namespace

TEST_CASE("stage weights") {
  CHECK(stage_weight(0.8, 3, 3) == 1.0);
  CHECK(stage_weight(0.8, 2, 0) == doctest::Approx(0.64));
  for (int d = 0; d < 10; ++d) CHECK(stage_weight(0.8, 10, 10 - d - 1) <= stage_weight(0.8, 10, 10 - d));
  CHECK_THROWS_AS(stage_weight(0.8, 1, 2), Error);
}

TEST_CASE("batch size and weights") {
  const SystemSpec lin = make_system("linear");
  InterpolantBundle b = linear_bundle(lin, 3, 0);
  b.stages = {0, 1, 2};
  LearnConfig cfg;
  cfg.samples_per_trajectory = 7;
  Rng rng(1);
  const MatchBatch batch = build_batch(b, 2, cfg, rng);
  CHECK(batch.size() == 21);
  CHECK(batch.weights[0] == doctest::Approx(0.64));
  CHECK(batch.weights[7] == doctest::Approx(0.8));
  CHECK(batch.weights[14] == 1.0);
}

TEST_CASE("gradient matching loss values") {
  MatchBatch b{Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd(2, 1), Eigen::VectorXd::Ones(1)};
  b.targets << 0.5, -1.5;
  const MlpParams exact = test::linear_net(Eigen::Matrix2d::Zero(), Eigen::Vector2d(0.5, -1.5));
  CHECK(gm_loss(exact, b).loss == 0.0);
  const MlpParams off = test::linear_net(Eigen::Matrix2d::Zero(), Eigen::Vector2d(1.5, -1.5));
  CHECK(gm_loss(off, b).loss == doctest::Approx(1.0));
}

TEST_CASE("gradient matching is order free") {
  Rng rng(2);
  const MatchBatch b = random_batch(rng, 40);
  const MlpParams psi = init_params({{2, 16, 16, 2}, Activation::Tanh}, 0.5, rng);
  std::vector<Eigen::Index> order(40);
  for (Eigen::Index i = 0; i < 40; ++i) order[static_cast<std::size_t>(i)] = 39 - i;
  const LossAndGrad a = gm_loss(psi, b);
  const LossAndGrad c = gm_loss(psi, b.select(order));
  CHECK(a.loss == doctest::Approx(c.loss).epsilon(1e-13));
  CHECK(test::relative_error(a.grads.flatten(), c.grads.flatten()) < 1e-13);
}

TEST_CASE("regularizer values") {
  const LyapunovModel v = test::quadratic_model(4.0);
  Rng rng(3);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 50);
  const MlpParams zero = MlpParams::zeros({{2, 2}, Activation::Identity});
  CHECK(lyap_regularizer(zero, v, x).loss == 0.0);
  // grad V = 2x, so fhat = -2x is -grad V.
  const MlpParams descent = test::linear_net(-2 * Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  const double expected = -(2 * x).colwise().squaredNorm().mean();
  CHECK(lyap_regularizer(descent, v, x).loss == doctest::Approx(expected));
  CHECK(lyap_regularizer(descent, v, x, true).loss == 0.0);
  const MlpParams ascent = test::linear_net(2 * Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  CHECK(lyap_regularizer(ascent, v, x, true).loss == doctest::Approx(-expected));

  const Eigen::MatrixXd outside = Eigen::MatrixXd::Constant(2, 1, 5.0);
  CHECK_THROWS_AS(lyap_regularizer(descent, v, outside), Error);
}

TEST_CASE("composed loss gradients") {
  for (int instance = 0; instance < 20; ++instance) {
    Rng rng(100 + instance);
    const MatchBatch b = random_batch(rng, 30);
    const MlpParams psi = init_params({{2, 64, 64, 2}, Activation::Tanh}, 0.3, rng);
    const LyapunovModel v = [&] {
      Rng r(200 + instance);
      LyapunovModel m = make_lyapunov_model({{2, 32, 32, 2}, Activation::Tanh}, Eigen::Vector2d::Zero(), 0.5, r);
      m.set_level(1e9);
      return m;
    }();
    const Eigen::MatrixXd reg = Eigen::MatrixXd::Random(2, 25);
    const bool hinge = instance % 2 == 1;
    const double lambda = 0.1;
    const auto total = [&](const MlpParams& p) {
      LossAndGrad g = gm_loss(p, b);
      LossAndGrad r = lyap_regularizer(p, v, reg, hinge);
      r.grads *= lambda;
      g.grads += r.grads;
      g.loss += lambda * r.loss;
      return g;
    };
    const LossAndGrad g = total(psi);
    const auto f = [&](const Eigen::VectorXd& flat) {
      MlpParams p = psi;
      p.assign(flat);
      return total(p).loss;
    };
    CHECK(test::relative_error(g.grads.flatten(), test::central_difference(f, psi.flatten())) < 1e-4);
  }
}

TEST_CASE("learns a linear field") {
  const SystemSpec lin = make_system("linear", {{"a11", -1.0}, {"a12", 2.0}, {"a21", -2.0}, {"a22", -1.0}});
  const InterpolantBundle b = linear_bundle(lin, 20);
  LearnConfig cfg;
  cfg.lambda_psi = 0.0;
  cfg.epochs = 1500;
  cfg.learning_rate = 3e-3;
  Rng rng(4);
  const MlpParams psi0 = init_params({{2, 64, 64, 2}, Activation::Tanh}, 0.1, rng);
  const MlpParams psi = train_ode(psi0, b, 0, nullptr, make_box({-2, -2}, {2, 2}), cfg, rng);

  Eigen::MatrixXd probe(2, 121);
  for (int i = 0; i < 11; ++i)
    for (int k = 0; k < 11; ++k) probe.col(i * 11 + k) = Eigen::Vector2d(-1 + 0.2 * i, -1 + 0.2 * k);
  CHECK(field_mse(psi, lin, probe) < 1e-2);
}

TEST_CASE("training is repeatable") {
  const SystemSpec lin = make_system("linear");
  const InterpolantBundle b = linear_bundle(lin, 4);
  LearnConfig cfg;
  cfg.epochs = 5;
  const LyapunovModel v = test::quadratic_model(1.0);
  const auto once = [&] {
    Rng rng(5);
    const MlpParams psi0 = init_params({{2, 16, 2}, Activation::Tanh}, 0.1, rng);
    return train_ode(psi0, b, 0, &v, make_box({-2, -2}, {2, 2}), cfg, rng).flatten();
  };
  CHECK(once() == once());
}

TEST_CASE("training curve records every epoch") {
  const SystemSpec lin = make_system("linear");
  const InterpolantBundle b = linear_bundle(lin, 3);
  LearnConfig cfg;
  cfg.epochs = 4;
  const LyapunovModel v = test::quadratic_model(1.0);
  Rng rng(6);
  std::vector<CurvePoint> curve;
  const MlpParams psi0 = init_params({{2, 16, 2}, Activation::Tanh}, 0.1, rng);
  train_ode(psi0, b, 0, &v, make_box({-2, -2}, {2, 2}), cfg, rng, &curve, 10);
  REQUIRE(curve.size() == 4);
  CHECK(curve.front().epoch == 10);
  for (const auto& p : curve) CHECK(p.total == doctest::Approx(p.gm + cfg.lambda_psi * p.reg));
}

TEST_CASE("penalty rarely rises while the total loss descends") {
  Rng rng(7);
  // Frozen batch of Van der Pol field values inside the unit disk.
  const SystemSpec vdp = make_system("vdp");
  MatchBatch b = random_batch(rng, 64);
  for (Eigen::Index k = 0; k < b.size(); ++k) b.targets.col(k) = eval_field(vdp, b.states.col(k));
  const LyapunovModel v = test::quadratic_model(4.0);
  Eigen::MatrixXd reg(2, 64);
  for (Eigen::Index k = 0; k < reg.cols(); ++k) reg.col(k) = Eigen::Vector2d(uniform(rng, -1, 1), uniform(rng, -1, 1));
  MlpParams psi = init_params({{2, 32, 32, 2}, Activation::Tanh}, 0.3, rng);
  Adam adam(psi.arch, {.learning_rate = 1e-3});
  const double lambda = 1.0;
  int descending = 0;
  int kept = 0;
  for (int s = 0; s < 200; ++s) {
    LossAndGrad g = gm_loss(psi, b);
    LossAndGrad r = lyap_regularizer(psi, v, reg);
    const double before = g.loss + lambda * r.loss;
    r.grads *= lambda;
    g.grads += r.grads;
    adam.step(psi, g.grads);
    const double after_reg = lyap_regularizer(psi, v, reg).loss;
    if (gm_loss(psi, b).loss + lambda * after_reg < before) {
      ++descending;
      if (after_reg <= r.loss) ++kept;
    }
  }
  INFO(kept << "/" << descending);
  REQUIRE(descending > 100);
  CHECK(kept >= 0.9 * descending);
}

TEST_CASE("regularizer reduces decrease violations on vdp data") {
  const SystemSpec vdp = make_system("vdp");
  std::vector<Trajectory> trajs;
  Rng rng(8);
  for (int j = 0; j < 6; ++j) {
    trajs.push_back(simulate(vdp, uniform_in_ball(rng, Eigen::Vector2d::Zero(), 1.0), {0.01, 400}, {0.05, static_cast<std::uint64_t>(j)}));
  }
  const InterpolantBundle b = fit_all(trajs, {}, 0.05);
  const LyapunovModel v = test::quadratic_model(1.0);
  const Box box = make_box({-3, -6}, {3, 6});
  const auto violations = [&](double lambda) {
    LearnConfig cfg;
    cfg.lambda_psi = lambda;
    Rng r(9);
    const MlpParams psi0 = init_params({{2, 64, 64, 2}, Activation::Tanh}, 0.1, r);
    const MlpParams psi = train_ode(psi0, b, 0, &v, box, cfg, r);
    int count = 0;
    for (int i = -10; i <= 10; ++i) {
      for (int k = -10; k <= 10; ++k) {
        const Eigen::Vector2d x(0.1 * i, 0.1 * k);
        if (x.squaredNorm() > 1.0 || x.squaredNorm() == 0.0) continue;
        if (v.gradient(x).dot(forward(psi, Eigen::VectorXd(x))) >= 0.0) ++count;
      }
    }
    return count;
  };
  CHECK(violations(1.0) <= violations(0.0));
}

TEST_CASE("learn config validation") {
  LearnConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = LearnConfig{};
  cfg.lambda_psi = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
