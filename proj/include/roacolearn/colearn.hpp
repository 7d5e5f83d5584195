#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roacolearn/dynamics.hpp"
#include "roacolearn/interpolant.hpp"
#include "roacolearn/lyapunov.hpp"
#include "roacolearn/nnet.hpp"
#include "roacolearn/odelearn.hpp"

namespace roa {

enum class SamplingMode { RoaGap, Ball };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(const std::string& name);

struct RunConfig {
  std::string system = "vdp";
  std::map<std::string, double> system_params = {{"gamma", 3.0}};
  IntegratorConfig integrator;
  double noise_sigma = 0.05;

  MlpArch lyapunov_arch{{2, 32, 32, 2}, Activation::Tanh};
  MlpArch dynamics_arch{{2, 64, 64, 2}, Activation::Tanh};
  double init_std = 0.1;

  Eigen::MatrixXd pretrain_q = Eigen::MatrixXd::Identity(2, 2);
  PretrainConfig pretrain;
  GrowthConfig growth;
  LearnConfig learn;
  KernelConfig kernel;

  SamplingMode mode = SamplingMode::RoaGap;
  double ball_radius = 1.0;
  int ball_budget_factor = 2;  // ball runs draw factor * J starts per stage

  std::uint64_t seed = 0;
  int max_stages = 10;
  int mse_resolution = 50;

  RunConfig();
  void validate() const;
  SystemSpec system_spec() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

struct StageReport {
  int stage = 0;
  double level_before = 0.0;
  double level = 0.0;
  double gap_volume = 0.0;
  int new_trajectories = 0;
  int cumulative_trajectories = 0;
  int stable_labels = 0;
  int unstable_labels = 0;
  double ode_mse = 0.0;  // NaN when the true boundary is unavailable
  long decrease_violations = 0;
  bool level_shrunk = false;
};

nlohmann::json to_json(const StageReport& report);

struct StageSnapshot {
  LyapunovModel lyapunov;
  MlpParams dynamics;
};

enum class StopReason { None, GapVolume, NoStableLabels, MaxStages, Error };
std::string to_string(StopReason reason);

struct RunResult {
  RunConfig config;
  LyapunovModel initial_lyapunov;  // after pretraining, with the initial c
  LyapunovModel lyapunov;
  MlpParams dynamics;
  std::vector<StageReport> reports;
  std::vector<StageSnapshot> snapshots;  // one per completed stage
  std::vector<Trajectory> trajectories;  // every trajectory used for the ODE
  std::vector<Eigen::VectorXd> gap_starts;  // per stage, flattened in order
  std::vector<LabeledSample> labeled;    // every labeled gap sample
  InterpolantBundle bundle;
  std::vector<CurvePoint> curve;
  double initial_gap_volume = 0.0;
  StopReason stop = StopReason::None;
  std::string diagnostic;
  std::optional<RoaBoundary> true_boundary;

  bool ok() const { return stop != StopReason::Error; }
};

// Initial states for one stage: gap samples (roa mode) or uniform ball
// samples around the equilibrium (ball mode).
std::vector<State> choose_initial_states(const RunConfig& cfg,
                                         const LyapunovModel& lyap, int count,
                                         Rng& rng);

// Largest level inside the configured small ball whose sublevel set is
// confirmed by labeling: every validation sample must reach it.
double choose_initial_level(const LyapunovModel& model, const SystemSpec& spec,
                            const RunConfig& cfg, Rng& rng);

// Drops the samples after the first one that leaves `box`.
Trajectory clip_to_box(const Trajectory& traj, const Box& box);

// The full coupled loop. Module errors abort the loop; the partial result
// is returned with stop == Error and a diagnostic.
RunResult run(const RunConfig& cfg);

// Oracle label of x0 against model's current level: clean simulation,
// truncated at the first entry into the sublevel set.
LabeledSample oracle_label(const SystemSpec& spec, const IntegratorConfig& integrator,
                           const State& x0, const LyapunovModel& model, int stage = 0);

// Grid points (resolution x resolution over the boundary's bounding box)
// that fall inside the polygon.
Eigen::MatrixXd interior_grid(const RoaBoundary& boundary, int resolution);

double compute_mse(const MlpParams& psi, const SystemSpec& spec,
                   const RoaBoundary& boundary, int resolution);

}  // namespace roa
