#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roacolearn/random.hpp"

namespace roa {

class LyapunovModel;

using State = Eigen::VectorXd;

enum class SystemKind { VanDerPol, Linear };

// Ground-truth autonomous system x' = f(x).
struct SystemSpec {
  std::string name;
  int n = 0;
  std::map<std::string, double> params;
  State equilibrium;
  SystemKind kind = SystemKind::VanDerPol;
};

// Registry lookup. Known names:
//   "vdp"    x' = -y, y' = x + gamma (x^2 - 1) y      (param: gamma, default 3)
//   "linear" x' = A x, A = [[a11, a12], [a21, a22]]   (defaults: -1, 0, 0, -1)
SystemSpec make_system(const std::string& name,
                       const std::map<std::string, double>& params = {});

State eval_field(const SystemSpec& spec, const State& x);

struct IntegratorConfig {
  double dt = 0.01;
  int steps = 2000;  // T; a trajectory holds steps + 1 samples

  void validate() const;
  double horizon() const { return dt * steps; }
};

struct NoiseModel {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// Sup-norm bound beyond which a trajectory counts as diverged.
inline constexpr double kOverflowBound = 1e6;

struct Trajectory {
  State x0;
  std::vector<double> times;
  Eigen::MatrixXd clean;  // n x (T+1), one state per column
  Eigen::MatrixXd noisy;  // n x (T+1)
  int stage = 0;
  bool diverged = false;

  Eigen::Index length() const { return clean.cols(); }
};

// Classical RK4. `step_index` is only used for the overflow diagnostic.
State rk4_step(const SystemSpec& spec, const State& x, double dt,
               long step_index = 0);

Trajectory simulate(const SystemSpec& spec, const State& x0,
                    const IntegratorConfig& cfg, const NoiseModel& noise,
                    int stage = 0);

// +1 if the clean trajectory reaches V <= c at some sample, -1 otherwise.
int label_trajectory(const Trajectory& traj, const LyapunovModel& model,
                     double c);
// Prefix of `traj` up to and including its first sample with V <= c; the
// whole trajectory when it never gets there.
Trajectory truncate_at_level(const Trajectory& traj, const LyapunovModel& model,
                             double c);

int label_initial_state(const SystemSpec& spec, const State& x0,
                        const LyapunovModel& model, double c,
                        const IntegratorConfig& cfg);

// Model-free convergence test used for audits: true if the clean trajectory
// comes within `radius` of the equilibrium before the horizon ends.
bool converges_to_equilibrium(const SystemSpec& spec, const State& x0,
                              const IntegratorConfig& cfg, double radius);

// Closed polyline approximating the boundary of the equilibrium's region of
// attraction for planar systems whose basin is bounded by an unstable limit
// cycle.
struct RoaBoundary {
  Eigen::Matrix2Xd vertices;  // first column == last column

  double area() const;
  bool contains(const Eigen::Vector2d& p) const;
  int winding_number(const Eigen::Vector2d& p) const;
  Eigen::Vector2d lower() const;
  Eigen::Vector2d upper() const;
};

struct BoundaryConfig {
  double dt = 1e-3;
  double max_time = 400.0;
  double closure_tol = 1e-7;
  double start_offset = 0.5;
  int record_every = 10;
};

RoaBoundary true_roa_boundary(const SystemSpec& spec,
                              const BoundaryConfig& cfg = {});

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_boundary_csv(std::ostream& os, const RoaBoundary& boundary);
RoaBoundary read_boundary_csv(std::istream& is);

}  // namespace roa
