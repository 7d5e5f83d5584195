#include "roacolearn/random.hpp"

#include <cmath>

#include "roacolearn/error.hpp"

namespace roa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                          std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

double uniform(Rng& rng, double lo, double hi) {
  // 53 random bits -> [0, 1); avoids implementation-defined distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double standard_normal(Rng& rng) {
  // Marsaglia polar method, written out so sequences are identical across
  // standard library implementations.
  for (;;) {
    const double u = uniform(rng, -1.0, 1.0);
    const double v = uniform(rng, -1.0, 1.0);
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

Eigen::VectorXd uniform_in_ball(Rng& rng, const Eigen::VectorXd& center,
                                double radius) {
  const auto n = center.size();
  Eigen::VectorXd dir(n);
  double norm = 0.0;
  do {
    for (Eigen::Index i = 0; i < n; ++i) dir[i] = standard_normal(rng);
    norm = dir.norm();
  } while (norm == 0.0);
  const double r =
      radius * std::pow(uniform(rng, 0.0, 1.0), 1.0 / static_cast<double>(n));
  return center + (r / norm) * dir;
}

double Box::volume() const { return (upper - lower).prod(); }

bool Box::contains(const Eigen::VectorXd& x) const {
  return (x.array() >= lower.array()).all() &&
         (x.array() <= upper.array()).all();
}

Eigen::VectorXd Box::sample(Rng& rng) const {
  Eigen::VectorXd x(lower.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = uniform(rng, lower[i], upper[i]);
  }
  return x;
}

void Box::sample(Rng& rng, Eigen::MatrixXd& out) const {
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out(i, j) = uniform(rng, lower[i], upper[i]);
    }
  }
}

Box make_box(std::initializer_list<double> lower,
             std::initializer_list<double> upper) {
  if (lower.size() != upper.size()) {
    throw Error(ErrorCode::DimensionMismatch, "box bounds differ in size");
  }
  Box box{Eigen::VectorXd(static_cast<Eigen::Index>(lower.size())),
          Eigen::VectorXd(static_cast<Eigen::Index>(upper.size()))};
  Eigen::Index i = 0;
  for (double v : lower) box.lower[i++] = v;
  i = 0;
  for (double v : upper) box.upper[i++] = v;
  if ((box.upper.array() <= box.lower.array()).any()) {
    throw Error(ErrorCode::InvalidArgument, "box upper bound must exceed lower");
  }
  return box;
}

}  // namespace roa
