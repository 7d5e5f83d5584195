#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roacolearn/dynamics.hpp"
#include "roacolearn/nnet.hpp"
#include "roacolearn/random.hpp"

namespace roa {

// V(x) = |v(x) - v(anchor)|^2 for a feature network v, together with the
// current level value c of the sublevel set {x : V(x) <= c}.
class LyapunovModel {
 public:
  LyapunovModel() = default;
  LyapunovModel(MlpParams theta, State anchor, double level);

  const MlpParams& theta() const { return theta_; }
  MlpParams& theta() { return theta_; }
  const State& anchor() const { return anchor_; }
  double level() const { return level_; }
  void set_level(double c);
  int dim() const { return static_cast<int>(anchor_.size()); }

  double value(const State& x) const;
  Eigen::VectorXd values(const Eigen::MatrixXd& states) const;
  State gradient(const State& x) const;
  // Column j holds grad_x V at states.col(j).
  Eigen::MatrixXd gradients(const Eigen::MatrixXd& states) const;

  bool inside(const State& x) const { return value(x) <= level_; }

  // Adds d/dtheta sum_j weights[j] * V(states.col(j)) to `grads` and returns
  // the V values.
  Eigen::VectorXd accumulate_theta_gradient(const Eigen::MatrixXd& states,
                                            const Eigen::VectorXd& weights,
                                            MlpParams& grads) const;

 private:
  MlpParams theta_;
  State anchor_;
  double level_ = 0.0;
};

LyapunovModel make_lyapunov_model(const MlpArch& arch, const State& anchor,
                                  double init_std, Rng& rng);

struct PretrainConfig {
  double radius = 1.0;
  int iterations = 2000;
  int batch_size = 256;
  double learning_rate = 5e-3;
};

// Fits V to (x - anchor)^T Q (x - anchor) in mean squared error on uniform
// samples from the ball of `cfg.radius` around the anchor. Q must be SPD.
LyapunovModel pretrain_quadratic(const LyapunovModel& model,
                                 const Eigen::MatrixXd& q,
                                 const PretrainConfig& cfg, Rng& rng);

// Largest level c such that the sublevel set stays inside the ball of
// `radius` (minimum of V over the sphere, estimated on `directions` rays).
double level_inside_ball(const LyapunovModel& model, double radius,
                         int directions, Rng& rng);

struct GrowthConfig {
  double alpha = 3.0;
  double lambda_theta = 0.1;
  int samples_per_stage = 12;  // J
  double volume_threshold = -1.0;  // T_g; negative -> 0.1% of box volume
  Box box;
  int train_steps = 1000;
  double learning_rate = 3e-3;
  // Descent drops samples that already sit on their side of the gap (+1 at
  // V <= c, -1 at V > alpha c) from the classification sum.
  // With active_set, the decrease term becomes a weighted hinge on
  // log V(x_{t+1}) - log((1 - rho) V(x_t)) over consecutive pairs of stable
  // history trajectories inside alpha c.
  bool active_set = true;
  double decrease_margin = 1e-3;  // rho
  double decrease_weight = 3.0;
  int pair_refresh = 10;          // steps between rescans for active pairs
  bool revert_on_regression = true;
  double stable_target = 3.0;      // +1 starts settle at V <= stable_target * c
  double unstable_target = 3.0;    // -1 starts settle at V > unstable_target * c
  // Also classify history: +1 starts inside V_c stay there, -1 starts stay
  // above unstable_target * c.
  bool classify_history = true;
  // New level sets may not leave the explored region V_{alpha c} of the
  // incoming shape, checked on a grid of this many points per axis (0: off).
  // Grid points that drift inside it during descent are pushed back out.
  int containment_grid = 150;
  // Certified level stays below this fraction of V on any -1 state.
  double unstable_margin = 0.7;
  int line_search_candidates = 50;
  int volume_samples = 100000;
  double initial_radius = 0.2;
  int initial_validation_samples = 100;

  void validate() const;
  double effective_volume_threshold() const;
};

struct LabeledSample {
  State x0;
  int label = -1;
  Trajectory trajectory;
};

using Labeler =
    std::function<LabeledSample(const State& x0, const LyapunovModel& model)>;

// Uniform rejection sampling of `count` states from {c < V <= alpha c}
// inside `box`. Throws GapDegenerate when the acceptance rate drops below
// 1e-4 (the gap has vanished within the box).
std::vector<State> sample_gap(const LyapunovModel& model, double alpha,
                              int count, const Box& box, Rng& rng);

// Uniform samples from {V <= level} inside `box`.
std::vector<State> sample_level_set(const LyapunovModel& model, double level,
                                    int count, const Box& box, Rng& rng);

// Draws uniformly from {V <= c} using a tightened proposal box found from a
// pilot run over the full box.
class LevelSetSampler {
 public:
  LevelSetSampler(const LyapunovModel& model, const Box& box, Rng& rng,
                  int pilot_accepts = 400);
  std::vector<State> draw(int count, Rng& rng) const;
  Eigen::MatrixXd draw_matrix(int count, Rng& rng) const;
  const Box& proposal() const { return proposal_; }

 private:
  const LyapunovModel* model_;
  Box proposal_;
};

struct GrowthLoss {
  double loss = 0.0;
  double classification = 0.0;
  double decrease = 0.0;
  MlpParams grads;
};

// sum_x0 l(x0) (V(x0) - c) + lambda * sum over +1 trajectories of
// sum_t (V(x_{t+1}) - V(x_t)), with c = model.level().
GrowthLoss growth_loss(const LyapunovModel& model,
                       std::span<const LabeledSample> samples,
                       double lambda_theta);

// Classification sum restricted to starts on the wrong side of their own
// level (+1 above it, -1 at or below it); no decrease term.
GrowthLoss growth_loss_active(const LyapunovModel& model,
                              std::span<const LabeledSample> samples,
                              std::span<const double> levels);

// Pairs (x_t, x_{t+1}) from the clean +1 trajectories with
// V(x_{t+1}) <= level and V(x_{t+1}) > (1 - 3 margin) V(x_t).
struct PairSet {
  Eigen::MatrixXd from;
  Eigen::MatrixXd to;
};
PairSet near_violating_pairs(const LyapunovModel& model,
                             std::span<const LabeledSample> samples,
                             double level, double margin);

// lambda * sum relu(log V(to) - log V(from) - log(1 - margin)); gradients
// added to `grads`.
double decrease_hinge(const LyapunovModel& model, const PairSet& pairs,
                      double lambda, double margin, MlpParams& grads);

struct LineSearchResult {
  double level = 0.0;
  bool grew = false;
  bool shrunk = false;
  double lowest_violation = 0.0;  // +inf when no pair violates
  bool unstable_bound = false;  // limited by a -1 state rather than a pair
};

// Largest level on the geometric grid between c and alpha*c for which every
// observed consecutive pair inside the sublevel set has V strictly
// decreasing. When the current c itself is violated the grid continues
// downwards below c. Without any observed pair inside alpha*c, c is kept.
LineSearchResult line_search_c(const LyapunovModel& model,
                               std::span<const Eigen::MatrixXd> trajectories,
                               double alpha, int candidates);
// Labeled form: additionally keeps every state of a -1 trajectory outside
// the returned sublevel set. Growth above c is further capped below
// `growth_cap` and below unstable_scale times the smallest V on a -1 state;
// these caps never push the level under c.
LineSearchResult line_search_c(const LyapunovModel& model,
                               std::span<const LabeledSample> samples,
                               double alpha, int candidates,
                               double growth_cap = std::numeric_limits<double>::infinity(),
                               double unstable_scale = 1.0);

// Number of consecutive pairs with both states in {V <= level} for which V
// does not strictly decrease.
long count_decrease_violations(const LyapunovModel& model, double level,
                               std::span<const Eigen::MatrixXd> trajectories);

double gap_volume(const LyapunovModel& model, double alpha, const Box& box,
                  int samples, Rng& rng);

struct GrowthStage {
  LyapunovModel model;
  std::vector<LabeledSample> samples;
  int stable_labels = 0;
  int unstable_labels = 0;
  bool converged = false;  // no gap sample was labeled +1
  LineSearchResult search;
  double final_loss = 0.0;
  double final_hinge = 0.0;
  long active_pairs = 0;
  bool reverted = false;     // descent discarded in favour of the incoming shape
  LineSearchResult trained;  // search on the descended shape, before any revert
};

// One growth stage on pre-drawn gap states: label them, descend the growth
// loss, then line-search c over `history` plus the new samples. The new
// samples are appended to `history`.
GrowthStage expand_roa(const LyapunovModel& model,
                       const std::vector<State>& gap_states,
                       const Labeler& labeler, const GrowthConfig& cfg,
                       std::vector<LabeledSample>& history);

// Same, drawing the J gap states first.
GrowthStage expand_roa(const LyapunovModel& model, const Labeler& labeler,
                       const GrowthConfig& cfg, Rng& rng,
                       std::vector<LabeledSample>& history);

// Raster of V over a planar box: columns x1, x2, V.
void write_level_raster_csv(std::ostream& os, const LyapunovModel& model,
                            const Box& box, int resolution);

}  // namespace roa
