#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "roacolearn/dynamics.hpp"

namespace roa {

// exp(-(a - b)^2 / (2 sigma^2))
double rbf_kernel(double a, double b, double sigma);

// x(t) = sum_i w_i k(t, t_i) for one state coordinate of one trajectory.
struct Interpolant {
  std::vector<double> centers;  // sorted ascending
  Eigen::VectorXd weights;
  double bandwidth = 1.0;

  double value(double t) const;
  double derivative(double t) const;
};

struct KernelConfig {
  double bandwidth = -1.0;  // <= 0: five times the median sampling gap
  double lambda_phi = 1e-3;
};

double default_bandwidth(std::span<const double> times);

// Closed-form minimizer of the kernel ridge objective
//   sum_t |x(t) - y_t|^2 / (2 sigma^2) + (lambda / 2) w^T K w,
// i.e. w = (K + lambda sigma^2 I)^{-1} y. With sigma = 0 the data term is
// taken with unit weight, so the ridge becomes lambda.
Interpolant fit_interpolant(std::span<const double> times,
                            std::span<const double> values, double bandwidth,
                            double lambda_phi, double noise_sigma);

// Caches the Cholesky factor between fits that share sample times,
// bandwidth and ridge (every full-length trajectory on the same grid).
class InterpolantFitter {
 public:
  InterpolantFitter(const KernelConfig& cfg, double noise_sigma);

  Interpolant fit(std::span<const double> times, std::span<const double> values);
  // Fits every coordinate of the observation matrix (n x m) at once.
  std::vector<Interpolant> fit_all_dims(std::span<const double> times,
                                        const Eigen::MatrixXd& observations);

 private:
  struct Factor;
  const Factor& factor_for(std::span<const double> times, double bandwidth);

  KernelConfig cfg_;
  double noise_sigma_;
  std::vector<double> cached_times_;
  double cached_bandwidth_ = 0.0;
  std::shared_ptr<Factor> factor_;
};

struct InterpolantBundle {
  // interpolants[j][s]: trajectory j, coordinate s.
  std::vector<std::vector<Interpolant>> interpolants;
  std::vector<int> stages;
  std::vector<double> span_begin;
  std::vector<double> span_end;

  std::size_t trajectories() const { return interpolants.size(); }
  std::size_t size() const;
  Eigen::VectorXd state(std::size_t j, double t) const;
  Eigen::VectorXd derivative(std::size_t j, double t) const;
  void append(InterpolantBundle&& other);
};

// Fits one interpolant per coordinate of each trajectory's noisy
// observations; stage indices carry over.
InterpolantBundle fit_all(std::span<const Trajectory> trajectories,
                          const KernelConfig& cfg, double noise_sigma);

nlohmann::json to_json(const InterpolantBundle& bundle);
InterpolantBundle bundle_from_json(const nlohmann::json& j);

}  // namespace roa
