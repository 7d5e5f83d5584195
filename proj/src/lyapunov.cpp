#include "roacolearn/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <Eigen/Cholesky>

#include "roacolearn/error.hpp"
#include "roacolearn/io.hpp"

namespace roa {

namespace {

constexpr Eigen::Index kChunk = 8192;

}  // namespace

LyapunovModel::LyapunovModel(MlpParams theta, State anchor, double level)
    : theta_(std::move(theta)), anchor_(std::move(anchor)) {
  if (theta_.arch.input_dim() != anchor_.size() ||
      theta_.arch.output_dim() < 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature network input width must match the state dimension");
  }
  set_level(level);
}

void LyapunovModel::set_level(double c) {
  if (!(c >= 0.0) || !std::isfinite(c)) {
    throw Error(ErrorCode::InvalidArgument, "level value must be finite and >= 0");
  }
  level_ = c;
}

double LyapunovModel::value(const State& x) const {
  if (x.size() != anchor_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "state dimension mismatch");
  }
  return (forward(theta_, x) - forward(theta_, anchor_)).squaredNorm();
}

Eigen::VectorXd LyapunovModel::values(const Eigen::MatrixXd& states) const {
  if (states.rows() != anchor_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "state dimension mismatch");
  }
  const Eigen::VectorXd center = forward(theta_, anchor_);
  Eigen::VectorXd out(states.cols());
  for (Eigen::Index start = 0; start < states.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, states.cols() - start);
    Eigen::MatrixXd features = forward(theta_, Eigen::MatrixXd(states.middleCols(start, len)));
    features.colwise() -= center;
    out.segment(start, len) = features.colwise().squaredNorm().transpose();
  }
  return out;
}

Eigen::MatrixXd LyapunovModel::gradients(const Eigen::MatrixXd& states) const {
  if (states.rows() != anchor_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "state dimension mismatch");
  }
  const Eigen::VectorXd center = forward(theta_, anchor_);
  Eigen::MatrixXd out(states.rows(), states.cols());
  for (Eigen::Index start = 0; start < states.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, states.cols() - start);
    const ForwardTape tape = forward_tape(theta_, states.middleCols(start, len));
    Eigen::MatrixXd upstream = tape.output();
    upstream.colwise() -= center;
    upstream *= 2.0;
    Eigen::MatrixXd grads;
    backward(theta_, tape, upstream, nullptr, &grads);
    out.middleCols(start, len) = grads;
  }
  return out;
}

State LyapunovModel::gradient(const State& x) const {
  return gradients(Eigen::MatrixXd(x)).col(0);
}

Eigen::VectorXd LyapunovModel::accumulate_theta_gradient(
    const Eigen::MatrixXd& states, const Eigen::VectorXd& weights,
    MlpParams& grads) const {
  if (weights.size() != states.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one weight per state required");
  }
  const ForwardTape anchor_tape = forward_tape(theta_, Eigen::MatrixXd(anchor_));
  const Eigen::VectorXd center = anchor_tape.output().col(0);
  Eigen::VectorXd values(states.cols());
  Eigen::VectorXd anchor_upstream = Eigen::VectorXd::Zero(center.size());
  for (Eigen::Index start = 0; start < states.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, states.cols() - start);
    const ForwardTape tape = forward_tape(theta_, states.middleCols(start, len));
    Eigen::MatrixXd diff = tape.output();
    diff.colwise() -= center;
    values.segment(start, len) = diff.colwise().squaredNorm().transpose();
    Eigen::MatrixXd upstream =
        2.0 * (diff.array().rowwise() * weights.segment(start, len).transpose().array()).matrix();
    anchor_upstream -= upstream.rowwise().sum();
    backward(theta_, tape, upstream, &grads, nullptr);
  }
  backward(theta_, anchor_tape, Eigen::MatrixXd(anchor_upstream), &grads, nullptr);
  return values;
}

LyapunovModel make_lyapunov_model(const MlpArch& arch, const State& anchor,
                                  double init_std, Rng& rng) {
  arch.validate();
  if (arch.hidden_layers() < 1) {
    throw Error(ErrorCode::InvalidArgument, "feature network needs a hidden layer");
  }
  return LyapunovModel(init_params(arch, init_std, rng), anchor, 0.0);
}

LyapunovModel pretrain_quadratic(const LyapunovModel& model,
                                 const Eigen::MatrixXd& q,
                                 const PretrainConfig& cfg, Rng& rng) {
  const int n = model.dim();
  if (q.rows() != n || q.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "Q must be n x n");
  }
  if (!q.isApprox(q.transpose(), 1e-12)) {
    throw Error(ErrorCode::InvalidArgument, "Q must be symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidArgument, "Q must be positive definite");
  }
  if (!(cfg.radius > 0.0) || cfg.iterations < 0 || cfg.batch_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "bad pretraining configuration");
  }

  LyapunovModel out = model;
  Adam adam(out.theta().arch, {.learning_rate = cfg.learning_rate});
  MlpParams grads = MlpParams::zeros(out.theta().arch);
  Eigen::MatrixXd batch(n, cfg.batch_size);
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int j = 0; j < cfg.batch_size; ++j) {
      batch.col(j) = uniform_in_ball(rng, out.anchor(), cfg.radius);
    }
    const Eigen::MatrixXd centered = batch.colwise() - out.anchor();
    const Eigen::VectorXd target =
        (centered.array() * (q * centered).array()).colwise().sum().transpose();
    // Residuals need V first; evaluate, then weight the gradient by 2 r / B.
    const Eigen::VectorXd v = out.values(batch);
    const Eigen::VectorXd weights = 2.0 * (v - target) / cfg.batch_size;
    grads.set_zero();
    out.accumulate_theta_gradient(batch, weights, grads);
    adam.step(out.theta(), grads);
  }
  return out;
}

double level_inside_ball(const LyapunovModel& model, double radius,
                         int directions, Rng& rng) {
  if (!(radius > 0.0) || directions < 1) {
    throw Error(ErrorCode::InvalidArgument, "bad sphere probe");
  }
  const int n = model.dim();
  Eigen::MatrixXd probes(n, directions);
  for (int k = 0; k < directions; ++k) {
    Eigen::VectorXd dir(n);
    if (n == 2) {
      const double angle = 2.0 * std::numbers::pi * k / directions;
      dir << std::cos(angle), std::sin(angle);
    } else {
      for (int i = 0; i < n; ++i) dir[i] = standard_normal(rng);
      dir.normalize();
    }
    probes.col(k) = model.anchor() + radius * dir;
  }
  return model.values(probes).minCoeff();
}

void GrowthConfig::validate() const {
  if (!(alpha > 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must exceed 1");
  if (samples_per_stage < 1) throw Error(ErrorCode::InvalidArgument, "J must be >= 1");
  if (!(lambda_theta >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda_theta must be >= 0");
  }
  if (box.dim() == 0) throw Error(ErrorCode::InvalidArgument, "sampling box not set");
  if (train_steps < 0 || !(learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bad growth descent settings");
  }
  if (line_search_candidates < 2) {
    throw Error(ErrorCode::InvalidArgument, "line search needs >= 2 candidates");
  }
  if (!(decrease_weight >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "decrease weight must be >= 0");
  }
  if (!(unstable_margin > 0.0 && unstable_margin <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "unstable margin must lie in (0, 1]");
  }
  if (volume_samples < 1000) {
    throw Error(ErrorCode::InvalidArgument, "gap volume needs >= 1000 samples");
  }
}

double GrowthConfig::effective_volume_threshold() const {
  return volume_threshold >= 0.0 ? volume_threshold : 1e-3 * box.volume();
}

namespace {

constexpr Eigen::Index kProposalBatch = 4096;
constexpr long kMinAttemptsForRate = 100000;
constexpr double kMinAcceptance = 1e-4;

// Rejection sampling of `count` states from `proposal` with
// lo < V <= hi. Throws GapDegenerate when acceptance stays below 1e-4.
std::vector<State> rejection_sample(const LyapunovModel& model, double lo,
                                    double hi, int count, const Box& proposal,
                                    Rng& rng, const char* what) {
  if (proposal.dim() != model.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "box dimension mismatch");
  }
  std::vector<State> out;
  if (count <= 0) return out;
  out.reserve(count);
  long attempts = 0;
  Eigen::MatrixXd batch(model.dim(), kProposalBatch);
  while (static_cast<int>(out.size()) < count) {
    proposal.sample(rng, batch);
    const Eigen::VectorXd v = model.values(batch);
    for (Eigen::Index j = 0; j < batch.cols(); ++j) {
      ++attempts;
      if (v[j] > lo && v[j] <= hi) {
        out.push_back(batch.col(j));
        if (static_cast<int>(out.size()) == count) break;
      }
    }
    if (attempts >= kMinAttemptsForRate &&
        static_cast<double>(out.size()) < kMinAcceptance * attempts) {
      throw Error(ErrorCode::GapDegenerate,
                  std::string(what) + ": acceptance rate below 1e-4 after " +
                      std::to_string(attempts) + " proposals");
    }
  }
  return out;
}

}  // namespace

std::vector<State> sample_gap(const LyapunovModel& model, double alpha,
                              int count, const Box& box, Rng& rng) {
  if (!(alpha > 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must exceed 1");
  const double c = model.level();
  return rejection_sample(model, c, alpha * c, count, box, rng, "gap sampling");
}

std::vector<State> sample_level_set(const LyapunovModel& model, double level,
                                    int count, const Box& box, Rng& rng) {
  return rejection_sample(model, -1.0, level, count, box, rng,
                          "level-set sampling");
}

LevelSetSampler::LevelSetSampler(const LyapunovModel& model, const Box& box,
                                 Rng& rng, int pilot_accepts)
    : model_(&model), proposal_(box) {
  const auto pilot = sample_level_set(model, model.level(), pilot_accepts, box, rng);
  Eigen::VectorXd lo = pilot.front();
  Eigen::VectorXd hi = pilot.front();
  for (const auto& x : pilot) {
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
  }
  const Eigen::VectorXd margin = 0.5 * (hi - lo) + 1e-3 * (box.upper - box.lower);
  proposal_.lower = (lo - margin).cwiseMax(box.lower);
  proposal_.upper = (hi + margin).cwiseMin(box.upper);
}

std::vector<State> LevelSetSampler::draw(int count, Rng& rng) const {
  return sample_level_set(*model_, model_->level(), count, proposal_, rng);
}

Eigen::MatrixXd LevelSetSampler::draw_matrix(int count, Rng& rng) const {
  const auto states = draw(count, rng);
  Eigen::MatrixXd out(model_->dim(), count);
  for (int j = 0; j < count; ++j) out.col(j) = states[j];
  return out;
}

namespace {

GrowthLoss growth_loss_impl(const LyapunovModel& model,
                            std::span<const LabeledSample> samples,
                            double lambda_theta, const double* levels) {
  const int n = model.dim();
  const double c = model.level();
  // Columns: every x0, then (first, last) of each +1 trajectory. The inner
  // sum over consecutive differences telescopes to V(x_T) - V(x_0).
  std::vector<const LabeledSample*> stable;
  for (const auto& s : samples) {
    if (s.label != 1 && s.label != -1) {
      throw Error(ErrorCode::InvalidArgument, "labels must be +1 or -1");
    }
    if (s.label == 1 && lambda_theta != 0.0 && s.trajectory.length() >= 2) {
      stable.push_back(&s);
    }
  }
  const Eigen::Index m = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index k = static_cast<Eigen::Index>(stable.size());
  Eigen::MatrixXd states(n, m + 2 * k);
  Eigen::VectorXd weights(m + 2 * k);
  for (Eigen::Index i = 0; i < m; ++i) {
    states.col(i) = samples[i].x0;
    weights[i] = samples[i].label;
  }
  if (levels && m > 0) {
    const Eigen::VectorXd v0 = model.values(states.leftCols(m));
    for (Eigen::Index i = 0; i < m; ++i) {
      const bool settled = weights[i] > 0 ? v0[i] <= levels[i] : v0[i] > levels[i];
      if (settled) weights[i] = 0.0;
    }
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& clean = stable[i]->trajectory.clean;
    states.col(m + 2 * i) = clean.col(0);
    weights[m + 2 * i] = -lambda_theta;
    states.col(m + 2 * i + 1) = clean.col(clean.cols() - 1);
    weights[m + 2 * i + 1] = lambda_theta;
  }
  GrowthLoss out;
  out.grads = MlpParams::zeros(model.theta().arch);
  const Eigen::VectorXd v = model.accumulate_theta_gradient(states, weights, out.grads);
  for (Eigen::Index i = 0; i < m; ++i) out.classification += weights[i] * (v[i] - c);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.decrease += v[m + 2 * i + 1] - v[m + 2 * i];
  }
  out.loss = out.classification + lambda_theta * out.decrease;
  return out;
}

}  // namespace

GrowthLoss growth_loss(const LyapunovModel& model,
                       std::span<const LabeledSample> samples,
                       double lambda_theta) {
  return growth_loss_impl(model, samples, lambda_theta, nullptr);
}

GrowthLoss growth_loss_active(const LyapunovModel& model,
                              std::span<const LabeledSample> samples,
                              std::span<const double> levels) {
  if (levels.size() != samples.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one level per sample required");
  }
  return growth_loss_impl(model, samples, 0.0, levels.data());
}

PairSet near_violating_pairs(const LyapunovModel& model,
                             std::span<const LabeledSample> samples,
                             double level, double margin) {
  std::vector<State> from;
  std::vector<State> to;
  for (const auto& s : samples) {
    if (s.label != 1) continue;
    const auto& states = s.trajectory.clean;
    if (states.cols() < 2) continue;
    const Eigen::VectorXd v = model.values(states);
    for (Eigen::Index t = 0; t + 1 < v.size(); ++t) {
      if (v[t] > 0.0 && v[t + 1] <= level && v[t + 1] > (1.0 - 3.0 * margin) * v[t]) {
        from.push_back(states.col(t));
        to.push_back(states.col(t + 1));
      }
    }
  }
  PairSet out;
  out.from.resize(model.dim(), static_cast<Eigen::Index>(from.size()));
  out.to.resize(model.dim(), static_cast<Eigen::Index>(to.size()));
  for (std::size_t i = 0; i < from.size(); ++i) {
    out.from.col(static_cast<Eigen::Index>(i)) = from[i];
    out.to.col(static_cast<Eigen::Index>(i)) = to[i];
  }
  return out;
}

double decrease_hinge(const LyapunovModel& model, const PairSet& pairs,
                      double lambda, double margin, MlpParams& grads) {
  const Eigen::Index k = pairs.from.cols();
  if (k == 0 || lambda == 0.0) return 0.0;
  Eigen::MatrixXd states(model.dim(), 2 * k);
  states << pairs.from, pairs.to;
  const Eigen::VectorXd v = model.values(states);
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(2 * k);
  // Hinge on log V(to) - log V(from) - log(1 - margin), so pairs close to the
  // equilibrium weigh as much as distant ones.
  const double offset = std::log1p(-margin);
  const double tiny = std::numeric_limits<double>::min();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double a = std::max(v[i], tiny);
    const double b = std::max(v[k + i], tiny);
    const double h = std::log(b) - std::log(a) - offset;
    if (h <= 0.0) continue;
    loss += lambda * h;
    weights[i] = -lambda / a;
    weights[k + i] = lambda / b;
  }
  if (loss > 0.0) model.accumulate_theta_gradient(states, weights, grads);
  return loss;
}

namespace {

// Lowest level at which an observed pair fails the strict decrease test.
// `pairs_below` counts the pairs with both values at or below `top`.
double lowest_violation(const LyapunovModel& model,
                        std::span<const Eigen::MatrixXd> trajectories,
                        double top, long* pairs_below) {
  double lowest = std::numeric_limits<double>::infinity();
  long pairs = 0;
  for (const auto& states : trajectories) {
    if (states.cols() < 2) continue;
    const Eigen::VectorXd v = model.values(states);
    for (Eigen::Index t = 0; t + 1 < v.size(); ++t) {
      if (std::max(v[t], v[t + 1]) <= top) ++pairs;
      // The decrease condition excludes the equilibrium itself.
      if (v[t] > 0.0 && v[t + 1] >= v[t]) lowest = std::min(lowest, v[t + 1]);
    }
  }
  if (pairs_below) *pairs_below = pairs;
  return lowest;
}

LineSearchResult line_search_impl(const LyapunovModel& model,
                                  std::span<const Eigen::MatrixXd> trajectories,
                                  double alpha, int candidates, double hard_bound,
                                  double growth_cap) {
  if (!(alpha > 1.0) || candidates < 2) {
    throw Error(ErrorCode::InvalidArgument, "bad line-search grid");
  }
  const double c = model.level();
  long pairs = 0;
  const double pair_bound = lowest_violation(model, trajectories, alpha * c, &pairs);
  const double lowest = std::min(pair_bound, hard_bound);
  LineSearchResult result;
  result.lowest_violation = lowest;
  result.unstable_bound = std::min(hard_bound, growth_cap) < pair_bound;
  result.level = c;
  if (c < lowest) {
    // Without an observed pair inside any candidate there is no evidence
    // for a larger level.
    if (pairs == 0) return result;
    const double ratio = std::pow(alpha, 1.0 / (candidates - 1));
    for (int k = candidates - 1; k >= 1; --k) {
      const double g = c * std::pow(ratio, k);
      if (g < lowest && g < growth_cap) {
        result.level = g;
        result.grew = true;
        break;
      }
    }
    return result;
  }
  // The current level already contains a violating pair or unstable state;
  // walk the same grid below c until the sublevel set is clean again.
  const double ratio = std::pow(alpha, 1.0 / (candidates - 1));
  double g = c;
  for (int guard = 0; guard < 100000 && g >= lowest; ++guard) g /= ratio;
  result.level = g < lowest ? g : 0.0;
  result.shrunk = true;
  return result;
}

}  // namespace

LineSearchResult line_search_c(const LyapunovModel& model,
                               std::span<const Eigen::MatrixXd> trajectories,
                               double alpha, int candidates) {
  const double inf = std::numeric_limits<double>::infinity();
  return line_search_impl(model, trajectories, alpha, candidates, inf, inf);
}

LineSearchResult line_search_c(const LyapunovModel& model,
                               std::span<const LabeledSample> samples,
                               double alpha, int candidates, double growth_cap,
                               double unstable_scale) {
  std::vector<Eigen::MatrixXd> trajectories;
  trajectories.reserve(samples.size());
  // States of -1 trajectories lie outside the ROA and must stay outside V_c.
  double unstable = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    trajectories.push_back(s.trajectory.clean);
    if (s.label == -1 && s.trajectory.length() > 0) {
      unstable = std::min(unstable, model.values(s.trajectory.clean).minCoeff());
    }
  }
  return line_search_impl(model, trajectories, alpha, candidates, unstable,
                          std::min(growth_cap, unstable_scale * unstable));
}

long count_decrease_violations(const LyapunovModel& model, double level,
                               std::span<const Eigen::MatrixXd> trajectories) {
  long count = 0;
  for (const auto& states : trajectories) {
    if (states.cols() < 2) continue;
    const Eigen::VectorXd v = model.values(states);
    for (Eigen::Index t = 0; t + 1 < v.size(); ++t) {
      if (std::max(v[t], v[t + 1]) <= level && v[t] > 0.0 && v[t + 1] >= v[t]) {
        ++count;
      }
    }
  }
  return count;
}

double gap_volume(const LyapunovModel& model, double alpha, const Box& box,
                  int samples, Rng& rng) {
  if (samples < 1000) {
    throw Error(ErrorCode::InvalidArgument, "gap volume needs >= 1000 samples");
  }
  const double c = model.level();
  long inside = 0;
  Eigen::MatrixXd batch;
  for (int start = 0; start < samples; start += static_cast<int>(kProposalBatch)) {
    const int len = std::min<int>(static_cast<int>(kProposalBatch), samples - start);
    batch.resize(model.dim(), len);
    box.sample(rng, batch);
    const Eigen::VectorXd v = model.values(batch);
    for (Eigen::Index j = 0; j < len; ++j) {
      if (v[j] > c && v[j] <= alpha * c) ++inside;
    }
  }
  return box.volume() * static_cast<double>(inside) / samples;
}

namespace {

Eigen::MatrixXd box_grid(const Box& box, int per_axis) {
  const int n = box.dim();
  Eigen::Index total = 1;
  for (int d = 0; d < n; ++d) total *= per_axis;
  Eigen::MatrixXd grid(n, total);
  for (Eigen::Index k = 0; k < total; ++k) {
    Eigen::Index rest = k;
    for (int d = 0; d < n; ++d) {
      const double u = (static_cast<double>(rest % per_axis) + 0.5) / per_axis;
      grid(d, k) = box.lower[d] + u * (box.upper[d] - box.lower[d]);
      rest /= per_axis;
    }
  }
  return grid;
}

}  // namespace

GrowthStage expand_roa(const LyapunovModel& model,
                       const std::vector<State>& gap_states,
                       const Labeler& labeler, const GrowthConfig& cfg,
                       std::vector<LabeledSample>& history) {
  cfg.validate();
  GrowthStage stage;
  stage.samples.reserve(gap_states.size());
  for (const auto& x0 : gap_states) {
    stage.samples.push_back(labeler(x0, model));
    if (stage.samples.back().label == 1) {
      ++stage.stable_labels;
    } else {
      ++stage.unstable_labels;
    }
  }
  stage.converged = stage.stable_labels == 0;

  stage.model = model;
  std::vector<LabeledSample> stable_history;
  if (cfg.active_set) {
    for (const auto& s : history) {
      if (s.label == 1) stable_history.push_back(s);
    }
    for (const auto& s : stage.samples) {
      if (s.label == 1) stable_history.push_back(s);
    }
  }
  if (!stage.samples.empty()) {
    const double exclusion = cfg.alpha * model.level();
    const double unstable_level = cfg.unstable_target * model.level();
    Adam adam(model.theta().arch, {.learning_rate = cfg.learning_rate});
    PairSet pairs;
    std::vector<LabeledSample> classified = stage.samples;
    std::vector<double> levels;
    for (const auto& s : stage.samples) {
      levels.push_back(s.label == 1 ? cfg.stable_target * model.level() : unstable_level);
    }
    if (cfg.classify_history && !history.empty()) {
      std::vector<State> starts;
      for (const auto& s : history) starts.push_back(s.x0);
      Eigen::MatrixXd m(model.dim(), static_cast<Eigen::Index>(starts.size()));
      for (std::size_t i = 0; i < starts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = starts[i];
      const Eigen::VectorXd v = model.values(m);
      for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& s = history[i];
        if (s.label == 1 && v[static_cast<Eigen::Index>(i)] > model.level()) continue;
        classified.push_back(s);
        levels.push_back(s.label == 1 ? model.level() : unstable_level);
      }
    }
    // Grid points outside the old outer level set have not been explored;
    // descent must not pull them inside it.
    Eigen::MatrixXd outside;
    if (cfg.active_set && cfg.containment_grid > 1) {
      const Eigen::MatrixXd grid = box_grid(cfg.box, cfg.containment_grid);
      const Eigen::VectorXd v = model.values(grid);
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < grid.cols(); ++i) {
        if (v[i] > exclusion) keep.push_back(i);
      }
      outside.resize(grid.rows(), static_cast<Eigen::Index>(keep.size()));
      for (std::size_t i = 0; i < keep.size(); ++i) {
        outside.col(static_cast<Eigen::Index>(i)) = grid.col(keep[i]);
      }
    }
    Eigen::MatrixXd intruders;
    for (int step = 0; step < cfg.train_steps; ++step) {
      if (!cfg.active_set) {
        GrowthLoss gl = growth_loss(stage.model, stage.samples, cfg.lambda_theta);
        stage.final_loss = gl.loss;
        adam.step(stage.model.theta(), gl.grads);
        continue;
      }
      if (step % cfg.pair_refresh == 0) {
        pairs = near_violating_pairs(stage.model, stable_history, exclusion,
                                     cfg.decrease_margin);
      }
      if (step % cfg.pair_refresh == 0 && outside.cols() > 0) {
        const Eigen::VectorXd v = stage.model.values(outside);
        std::vector<Eigen::Index> in;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
          if (v[i] <= exclusion) in.push_back(i);
        }
        intruders.resize(outside.rows(), static_cast<Eigen::Index>(in.size()));
        for (std::size_t i = 0; i < in.size(); ++i) {
          intruders.col(static_cast<Eigen::Index>(i)) = outside.col(in[i]);
        }
      }
      GrowthLoss gl = growth_loss_active(stage.model, classified, levels);
      if (intruders.cols() > 0) {
        const Eigen::VectorXd v = stage.model.values(intruders);
        Eigen::VectorXd w = Eigen::VectorXd::Zero(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
          if (v[i] <= exclusion) {
            w[i] = -1.0;
            gl.loss += exclusion - v[i];
          }
        }
        if (w.squaredNorm() > 0.0) stage.model.accumulate_theta_gradient(intruders, w, gl.grads);
      }
      const double hinge = decrease_hinge(stage.model, pairs, cfg.decrease_weight,
                                          cfg.decrease_margin, gl.grads);
      stage.final_loss = gl.loss + hinge;
      stage.final_hinge = hinge;
      stage.active_pairs = pairs.from.cols();
      // Nothing misclassified and no pair violated: leave the shape alone
      // rather than let the optimizer's momentum keep moving it.
      if (gl.grads.flatten().squaredNorm() == 0.0) continue;
      adam.step(stage.model.theta(), gl.grads);
    }
    if (!stage.model.theta().all_finite()) {
      throw Error(ErrorCode::Divergence, "growth descent produced non-finite weights");
    }
  }

  history.insert(history.end(), stage.samples.begin(), stage.samples.end());
  const std::span<const LabeledSample> all(history);
  double ceiling = std::numeric_limits<double>::infinity();
  if (cfg.containment_grid > 1) {
    const Eigen::MatrixXd grid = box_grid(cfg.box, cfg.containment_grid);
    const Eigen::VectorXd before = model.values(grid);
    const Eigen::VectorXd after = stage.model.values(grid);
    const double outer = cfg.alpha * model.level();
    for (Eigen::Index i = 0; i < grid.cols(); ++i) {
      if (before[i] > outer) ceiling = std::min(ceiling, after[i]);
    }
  }
  stage.search = line_search_c(stage.model, all, cfg.alpha, cfg.line_search_candidates,
                               ceiling, cfg.unstable_margin);
  stage.trained = stage.search;
  if (cfg.active_set && cfg.revert_on_regression) {
    // Keep the pre-descent shape when descent left a worse certified level.
    const LineSearchResult before =
        line_search_c(model, all, cfg.alpha, cfg.line_search_candidates,
                      std::numeric_limits<double>::infinity(), cfg.unstable_margin);
    if (before.level > stage.search.level) {
      stage.model = model;
      stage.search = before;
      stage.reverted = true;
    }
  }
  stage.model.set_level(stage.search.level);
  return stage;
}

GrowthStage expand_roa(const LyapunovModel& model, const Labeler& labeler,
                       const GrowthConfig& cfg, Rng& rng,
                       std::vector<LabeledSample>& history) {
  cfg.validate();
  const auto states =
      sample_gap(model, cfg.alpha, cfg.samples_per_stage, cfg.box, rng);
  return expand_roa(model, states, labeler, cfg, history);
}

void write_level_raster_csv(std::ostream& os, const LyapunovModel& model,
                            const Box& box, int resolution) {
  if (model.dim() != 2 || box.dim() != 2) {
    throw Error(ErrorCode::DimensionMismatch, "raster export is planar only");
  }
  if (resolution < 2) throw Error(ErrorCode::InvalidArgument, "resolution must be >= 2");
  Eigen::MatrixXd grid(2, static_cast<Eigen::Index>(resolution) * resolution);
  for (int i = 0; i < resolution; ++i) {
    for (int k = 0; k < resolution; ++k) {
      const double x1 = box.lower[0] + (box.upper[0] - box.lower[0]) * i / (resolution - 1);
      const double x2 = box.lower[1] + (box.upper[1] - box.lower[1]) * k / (resolution - 1);
      grid.col(static_cast<Eigen::Index>(i) * resolution + k) << x1, x2;
    }
  }
  const Eigen::VectorXd v = model.values(grid);
  CsvWriter csv(os, {"x1", "x2", "V"});
  for (Eigen::Index j = 0; j < grid.cols(); ++j) csv.row({grid(0, j), grid(1, j), v[j]});
}

}  // namespace roa
