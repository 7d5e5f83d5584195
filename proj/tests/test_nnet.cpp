#include <cmath>

#include "doctest.h"
#include "roacolearn/error.hpp"
#include "roacolearn/nnet.hpp"
#include "support.hpp"

using namespace roa;

TEST_CASE("initialization statistics") {
  Rng rng(1);
  const MlpParams p = init_params({{1, 50000, 1}, Activation::Tanh}, 0.1, rng);
  const Eigen::VectorXd w = p.flatten();
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().sum() / static_cast<double>(w.size() - 1));
  CHECK(w.size() >= 100000);
  CHECK(std::abs(mean) <= 0.005);
  CHECK(sd >= 0.095);
  CHECK(sd <= 0.105);

  Rng a(42), b(42);
  const MlpArch arch{{2, 8, 2}, Activation::Tanh};
  CHECK(init_params(arch, 0.1, a).flatten() == init_params(arch, 0.1, b).flatten());
}

TEST_CASE("zero weights output the final bias") {
  MlpParams p = MlpParams::zeros({{2, 5, 3}, Activation::Tanh});
  p.layers.back().bias << 0.5, -1.0, 2.0;
  CHECK(forward(p, Eigen::VectorXd(Eigen::Vector2d(3, -4))) == p.layers.back().bias);
}

TEST_CASE("single linear layer matches hand arithmetic") {
  Eigen::Matrix2d w;
  w << 1, 2, 3, 4;
  const MlpParams p = test::linear_net(w, Eigen::Vector2d(0.5, -0.5));
  const Eigen::VectorXd y = forward(p, Eigen::VectorXd(Eigen::Vector2d(1, -1)));
  CHECK(y[0] == doctest::Approx(1 - 2 + 0.5));
  CHECK(y[1] == doctest::Approx(3 - 4 - 0.5));
}

TEST_CASE("tanh saturates") {
  Rng rng(3);
  const MlpArch arch{{2, 6, 2}, Activation::Tanh};
  MlpParams p = init_params(arch, 1.0, rng);
  p.layers[0].bias.setZero();
  const Eigen::Vector2d x(0.3, -0.7);
  const ForwardTape big = forward_tape(p, Eigen::MatrixXd(1e6 * x));
  const ForwardTape small = forward_tape(p, Eigen::MatrixXd(1e3 * x));
  const Eigen::MatrixXd& h1 = big.activations[1];
  const Eigen::MatrixXd& h2 = small.activations[1];
  CHECK((h1 - h2).norm() / h2.norm() < 1e-6);
}

TEST_CASE("batched forward equals column-wise forward") {
  Rng rng(4);
  const MlpParams p = init_params({{2, 7, 7, 2}, Activation::Tanh}, 0.5, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 9);
  const Eigen::MatrixXd y = forward(p, x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    CHECK((y.col(j) - forward(p, Eigen::VectorXd(x.col(j)))).norm() < 1e-14);
  }
}

TEST_CASE("finite-difference gradients on every architecture") {
  for (const auto& sizes : {std::vector<int>{2, 16, 16, 2}, std::vector<int>{2, 32, 32, 2},
                            std::vector<int>{2, 64, 64, 2}}) {
    Rng rng(sizes[1]);
    const MlpParams p = init_params({sizes, Activation::Tanh}, 0.5, rng);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(2);
    const Eigen::VectorXd u = Eigen::VectorXd::Random(2);
    const Gradients g = backward(p, x, u);

    const auto by_params = [&](const Eigen::VectorXd& flat) {
      MlpParams q = p;
      q.assign(flat);
      return u.dot(forward(q, x));
    };
    CHECK(test::relative_error(g.params.flatten(),
                               test::central_difference(by_params, p.flatten())) < 1e-4);
    const auto by_input = [&](const Eigen::VectorXd& z) { return u.dot(forward(p, z)); };
    CHECK(test::relative_error(g.input, test::central_difference(by_input, x)) < 1e-4);
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  Rng rng(6);
  const MlpParams p = init_params({{2, 8, 2}, Activation::Tanh}, 0.5, rng);
  const Gradients g = backward(p, Eigen::VectorXd::Random(2), Eigen::VectorXd::Zero(2));
  CHECK(g.params.flatten().norm() == 0.0);
  CHECK(g.input.norm() == 0.0);
}

TEST_CASE("linear net input gradient is W^T u") {
  Eigen::Matrix2d w;
  w << 2, -1, 0.5, 3;
  const MlpParams p = test::linear_net(w, Eigen::Vector2d(1, 1));
  const Eigen::Vector2d u(0.25, -2);
  const Gradients g = backward(p, Eigen::VectorXd(Eigen::Vector2d(7, 8)), u);
  CHECK((g.input - w.transpose() * u).norm() < 1e-15);
}

TEST_CASE("adam") {
  const MlpArch arch{{1, 1}, Activation::Identity};
  SUBCASE("zero gradient leaves parameters") {
    Rng rng(7);
    MlpParams p = init_params({{2, 4, 2}, Activation::Tanh}, 0.3, rng);
    const Eigen::VectorXd before = p.flatten();
    Adam adam(p.arch, {.learning_rate = 0.1});
    for (int i = 0; i < 5; ++i) adam.step(p, MlpParams::zeros(p.arch));
    CHECK(p.flatten() == before);
  }
  SUBCASE("quadratic bowl") {
    MlpParams p = MlpParams::zeros(arch);
    p.layers[0].weight(0, 0) = 1.0;
    Adam adam(arch, {.learning_rate = 0.05});
    for (int i = 0; i < 500; ++i) {
      MlpParams g = MlpParams::zeros(arch);
      g.layers[0].weight(0, 0) = 2.0 * p.layers[0].weight(0, 0);
      adam.step(p, g);
    }
    CHECK(std::abs(p.layers[0].weight(0, 0)) < 1e-3);
    CHECK(adam.steps_taken() == 500);
  }
  SUBCASE("repeatable") {
    const auto trace = [&] {
      Rng rng(8);
      MlpParams p = init_params({{2, 4, 2}, Activation::Tanh}, 0.3, rng);
      Adam adam(p.arch);
      std::vector<Eigen::VectorXd> seq;
      for (int i = 0; i < 20; ++i) {
        const Gradients g = backward(p, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2));
        adam.step(p, g.params);
        seq.push_back(p.flatten());
      }
      return seq;
    };
    CHECK(trace() == trace());
  }
}

TEST_CASE("parameter json round trip") {
  Rng rng(10);
  const MlpParams p = init_params({{2, 5, 2}, Activation::Tanh}, 0.4, rng);
  const MlpParams back = mlp_from_json(to_json(p));
  CHECK(back.flatten() == p.flatten());
  CHECK(back.arch.sizes == p.arch.sizes);
  CHECK(back.arch.activation == p.arch.activation);
}

TEST_CASE("bad architectures are rejected") {
  CHECK_THROWS_AS(MlpArch({{2}, Activation::Tanh}).validate(), Error);
  CHECK_THROWS_AS(MlpArch({{2, 0, 2}, Activation::Tanh}).validate(), Error);
  CHECK_THROWS_AS(parse_activation("relu6"), Error);
}
