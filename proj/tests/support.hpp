#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Core>

#include "roacolearn/lyapunov.hpp"
#include "roacolearn/nnet.hpp"

namespace roa::test {

// Linear network x -> W x + b with a single identity layer.
inline MlpParams linear_net(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  MlpParams p = MlpParams::zeros({{static_cast<int>(w.cols()), static_cast<int>(w.rows())},
                                  Activation::Identity});
  p.layers[0].weight = w;
  p.layers[0].bias = b;
  return p;
}

// V(x) = x^T x exactly, with level c.
inline LyapunovModel quadratic_model(double c = 1.0) {
  return LyapunovModel(linear_net(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()),
                       Eigen::Vector2d::Zero(), c);
}

// Central differences of a scalar function of a flat vector.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          Eigen::VectorXd x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace roa::test
