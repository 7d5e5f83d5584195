#include "roacolearn/odelearn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace roa {

MatchBatch MatchBatch::select(const std::vector<Eigen::Index>& columns) const {
  MatchBatch out;
  const auto m = static_cast<Eigen::Index>(columns.size());
  out.states.resize(states.rows(), m);
  out.targets.resize(targets.rows(), m);
  out.weights.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    out.states.col(k) = states.col(columns[k]);
    out.targets.col(k) = targets.col(columns[k]);
    out.weights[k] = weights[columns[k]];
  }
  return out;
}

void LearnConfig::validate() const {
  if (!(lambda_psi >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_psi must be >= 0");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon must lie in (0, 1]");
  }
  if (samples_per_trajectory < 1 || epochs < 0 || batch_size < 1 ||
      regularizer_samples < 1 || !(learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bad ODE training configuration");
  }
}

double stage_weight(double epsilon, int current_stage, int trajectory_stage) {
  const int delta = current_stage - trajectory_stage;
  if (delta < 0) {
    throw Error(ErrorCode::InvalidArgument, "trajectory stage lies in the future");
  }
  return std::pow(epsilon, delta);
}

MatchBatch build_batch(const InterpolantBundle& bundle, int current_stage,
                       const LearnConfig& cfg, Rng& rng) {
  cfg.validate();
  if (bundle.trajectories() == 0) {
    throw Error(ErrorCode::InvalidArgument, "empty interpolant bundle");
  }
  const auto n = static_cast<Eigen::Index>(bundle.interpolants.front().size());
  const auto per = static_cast<Eigen::Index>(cfg.samples_per_trajectory);
  const auto total = per * static_cast<Eigen::Index>(bundle.trajectories());
  MatchBatch batch{Eigen::MatrixXd(n, total), Eigen::MatrixXd(n, total),
                   Eigen::VectorXd(total)};
  Eigen::Index col = 0;
  for (std::size_t j = 0; j < bundle.trajectories(); ++j) {
    const double w = stage_weight(cfg.epsilon, current_stage, bundle.stages[j]);
    for (Eigen::Index k = 0; k < per; ++k, ++col) {
      const double t = uniform(rng, bundle.span_begin[j], bundle.span_end[j]);
      batch.states.col(col) = bundle.state(j, t);
      batch.targets.col(col) = bundle.derivative(j, t);
      batch.weights[col] = w;
    }
  }
  return batch;
}

LossAndGrad gm_loss(const MlpParams& psi, const MatchBatch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty batch");
  const double wsum = batch.weights.sum();
  if (!(wsum > 0.0)) throw Error(ErrorCode::InvalidArgument, "batch weights sum to zero");
  const ForwardTape tape = forward_tape(psi, batch.states);
  const Eigen::MatrixXd residual = tape.output() - batch.targets;
  LossAndGrad out;
  out.loss = (residual.colwise().squaredNorm().transpose().array() * batch.weights.array()).sum() / wsum;
  const Eigen::MatrixXd upstream =
      (2.0 / wsum) * (residual.array().rowwise() * batch.weights.transpose().array()).matrix();
  out.grads = MlpParams::zeros(psi.arch);
  backward(psi, tape, upstream, &out.grads, nullptr);
  return out;
}

namespace {

void check_inside(const LyapunovModel& lyap, const Eigen::MatrixXd& samples) {
  if (samples.cols() == 0) throw Error(ErrorCode::InvalidArgument, "no regularizer samples");
  const Eigen::VectorXd v = lyap.values(samples);
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (v[j] > lyap.level()) {
      throw Error(ErrorCode::Precondition,
                  "regularizer sample " + std::to_string(j) + " lies outside the level set");
    }
  }
}

LossAndGrad regularizer_from_gradients(const MlpParams& psi, const Eigen::MatrixXd& samples,
                                       const Eigen::MatrixXd& grad_v, bool hinge) {
  const ForwardTape tape = forward_tape(psi, samples);
  const double inv = 1.0 / static_cast<double>(samples.cols());
  Eigen::MatrixXd upstream = grad_v * inv;
  const Eigen::VectorXd dots = (grad_v.array() * tape.output().array()).colwise().sum();
  LossAndGrad out;
  if (hinge) {
    for (Eigen::Index j = 0; j < dots.size(); ++j) {
      if (dots[j] > 0.0) {
        out.loss += dots[j] * inv;
      } else {
        upstream.col(j).setZero();
      }
    }
  } else {
    out.loss = dots.sum() * inv;
  }
  out.grads = MlpParams::zeros(psi.arch);
  backward(psi, tape, upstream, &out.grads, nullptr);
  return out;
}

}  // namespace

LossAndGrad lyap_regularizer(const MlpParams& psi, const LyapunovModel& lyap,
                             const Eigen::MatrixXd& samples, bool hinge) {
  check_inside(lyap, samples);
  return regularizer_from_gradients(psi, samples, lyap.gradients(samples), hinge);
}

MlpParams train_ode(const MlpParams& psi, const InterpolantBundle& bundle,
                    int current_stage, const LyapunovModel* lyap,
                    const Box& box, const LearnConfig& cfg, Rng& rng,
                    std::vector<CurvePoint>* curve, long epoch_offset) {
  cfg.validate();
  const MatchBatch batch = build_batch(bundle, current_stage, cfg, rng);
  const bool regularize = cfg.lambda_psi > 0.0 && lyap != nullptr && lyap->level() > 0.0;
  std::unique_ptr<LevelSetSampler> sampler;
  if (regularize) sampler = std::make_unique<LevelSetSampler>(*lyap, box, rng);

  MlpParams params = psi;
  MlpParams last_good = psi;
  Adam adam(params.arch, {.learning_rate = cfg.learning_rate});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(batch.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto k = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[k]);
    }
    Eigen::MatrixXd reg_samples;
    Eigen::MatrixXd reg_grad_v;
    if (regularize) {
      reg_samples = sampler->draw_matrix(cfg.regularizer_samples, rng);
      check_inside(*lyap, reg_samples);
      reg_grad_v = lyap->gradients(reg_samples);
    }

    double gm_sum = 0.0;
    double reg_sum = 0.0;
    int minibatches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const MatchBatch mb = batch.select({order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end)});
      LossAndGrad gm = gm_loss(params, mb);
      double reg_loss = 0.0;
      if (regularize) {
        LossAndGrad reg = regularizer_from_gradients(params, reg_samples, reg_grad_v,
                                                     cfg.regularizer_hinge);
        reg_loss = reg.loss;
        reg.grads *= cfg.lambda_psi;
        gm.grads += reg.grads;
      }
      const double total = gm.loss + cfg.lambda_psi * reg_loss;
      if (!std::isfinite(total) || !gm.grads.all_finite()) {
        throw DivergenceError("ODE training loss became non-finite at epoch " +
                                  std::to_string(epoch_offset + epoch),
                              last_good);
      }
      last_good = params;
      adam.step(params, gm.grads);
      gm_sum += gm.loss;
      reg_sum += reg_loss;
      ++minibatches;
    }
    if (curve && minibatches > 0) {
      const double gm_mean = gm_sum / minibatches;
      const double reg_mean = reg_sum / minibatches;
      curve->push_back({epoch_offset + epoch, gm_mean, reg_mean,
                        gm_mean + cfg.lambda_psi * reg_mean});
    }
  }
  if (!params.all_finite()) {
    throw DivergenceError("ODE parameters became non-finite", last_good);
  }
  return params;
}

double field_mse(const MlpParams& psi, const SystemSpec& spec,
                 const Eigen::MatrixXd& points) {
  if (points.cols() == 0) throw Error(ErrorCode::EmptyInterior, "no evaluation points");
  const Eigen::MatrixXd predicted = forward(psi, points);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    sum += (predicted.col(j) - eval_field(spec, points.col(j))).squaredNorm();
  }
  return sum / static_cast<double>(points.cols());
}

}  // namespace roa
