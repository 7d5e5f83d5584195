#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace roa {

using Rng = std::mt19937_64;

// splitmix64 mixing of a base seed with stream identifiers, so independent
// consumers (noise, gap sampling, network init, ...) never share a sequence.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                          std::uint64_t index = 0);

double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);

// Uniform sample from the closed ball of `radius` around `center`.
Eigen::VectorXd uniform_in_ball(Rng& rng, const Eigen::VectorXd& center,
                                double radius);

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  double volume() const;
  bool contains(const Eigen::VectorXd& x) const;
  Eigen::VectorXd sample(Rng& rng) const;
  // Fills `out` (dim x count) column-wise with uniform samples.
  void sample(Rng& rng, Eigen::MatrixXd& out) const;
};

Box make_box(std::initializer_list<double> lower,
             std::initializer_list<double> upper);

}  // namespace roa
