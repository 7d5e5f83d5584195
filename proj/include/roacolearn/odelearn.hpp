#pragma once

#include <vector>

#include <Eigen/Core>

#include "roacolearn/error.hpp"
#include "roacolearn/interpolant.hpp"
#include "roacolearn/lyapunov.hpp"
#include "roacolearn/nnet.hpp"

namespace roa {

// Gradient-matching samples stored column-wise.
struct MatchBatch {
  Eigen::MatrixXd states;   // interpolated states x^j(t)
  Eigen::MatrixXd targets;  // interpolant time derivatives
  Eigen::VectorXd weights;  // epsilon^(current stage - trajectory stage)

  Eigen::Index size() const { return states.cols(); }
  MatchBatch select(const std::vector<Eigen::Index>& columns) const;
};

struct LearnConfig {
  double lambda_psi = 0.1;
  double epsilon = 0.8;
  int samples_per_trajectory = 50;
  int epochs = 200;
  int batch_size = 256;
  double learning_rate = 1e-3;
  int regularizer_samples = 256;
  // Penalize only <grad V, fhat> > 0; the plain mean is unbounded below.
  bool regularizer_hinge = true;

  void validate() const;
};

double stage_weight(double epsilon, int current_stage, int trajectory_stage);

MatchBatch build_batch(const InterpolantBundle& bundle, int current_stage,
                       const LearnConfig& cfg, Rng& rng);

struct LossAndGrad {
  double loss = 0.0;
  MlpParams grads;
};

// sum_i w_i |dx_i - fhat(x_i)|^2 / sum_i w_i
LossAndGrad gm_loss(const MlpParams& psi, const MatchBatch& batch);

// mean_i <grad_x V(x_i), fhat(x_i)> with theta fixed; every sample must lie
// in {V <= c}. With `hinge`, only positive inner products count.
LossAndGrad lyap_regularizer(const MlpParams& psi, const LyapunovModel& lyap,
                             const Eigen::MatrixXd& samples, bool hinge = false);

struct CurvePoint {
  long epoch = 0;
  double gm = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

// Thrown when training produces a non-finite loss; carries the last finite
// parameters.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, MlpParams last_good)
      : Error(ErrorCode::Divergence, what), last_good_(std::move(last_good)) {}
  const MlpParams& last_good() const { return last_good_; }

 private:
  MlpParams last_good_;
};

// Minimizes gm_loss + lambda_psi * lyap_regularizer for cfg.epochs passes over
// a batch built from `bundle`. When lambda_psi > 0 the regularizer set is
// redrawn from the sublevel set of `lyap` (inside `box`) every epoch.
MlpParams train_ode(const MlpParams& psi, const InterpolantBundle& bundle,
                    int current_stage, const LyapunovModel* lyap,
                    const Box& box, const LearnConfig& cfg, Rng& rng,
                    std::vector<CurvePoint>* curve = nullptr,
                    long epoch_offset = 0);

// Mean over the columns of `points` of |fhat(x) - f(x)|^2.
double field_mse(const MlpParams& psi, const SystemSpec& spec,
                 const Eigen::MatrixXd& points);

}  // namespace roa
