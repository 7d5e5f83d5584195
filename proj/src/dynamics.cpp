#include "roacolearn/dynamics.hpp"

#include <cmath>
#include <limits>
#include <istream>
#include <ostream>

#include "roacolearn/error.hpp"
#include "roacolearn/io.hpp"
#include "roacolearn/lyapunov.hpp"

namespace roa {

namespace {

double param_or(const std::map<std::string, double>& params,
                const std::string& key, double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

void reject_unknown(const std::map<std::string, double>& params,
                    std::initializer_list<const char*> known,
                    const std::string& system) {
  for (const auto& [key, value] : params) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      throw Error(ErrorCode::Config,
                  "system '" + system + "' has no parameter '" + key + "'");
    }
  }
}

}  // namespace

SystemSpec make_system(const std::string& name,
                       const std::map<std::string, double>& params) {
  SystemSpec spec;
  spec.name = name;
  spec.n = 2;
  spec.equilibrium = State::Zero(2);
  if (name == "vdp") {
    reject_unknown(params, {"gamma"}, name);
    spec.kind = SystemKind::VanDerPol;
    spec.params = {{"gamma", param_or(params, "gamma", 3.0)}};
  } else if (name == "linear") {
    reject_unknown(params, {"a11", "a12", "a21", "a22"}, name);
    spec.kind = SystemKind::Linear;
    spec.params = {{"a11", param_or(params, "a11", -1.0)},
                   {"a12", param_or(params, "a12", 0.0)},
                   {"a21", param_or(params, "a21", 0.0)},
                   {"a22", param_or(params, "a22", -1.0)}};
  } else {
    throw Error(ErrorCode::UnknownSystem, "unknown system '" + name + "'");
  }
  return spec;
}

State eval_field(const SystemSpec& spec, const State& x) {
  if (x.size() != spec.n) {
    throw Error(ErrorCode::DimensionMismatch,
                "state has dimension " + std::to_string(x.size()) + ", system '" +
                    spec.name + "' expects " + std::to_string(spec.n));
  }
  State dx(spec.n);
  switch (spec.kind) {
    case SystemKind::VanDerPol: {
      const double gamma = spec.params.at("gamma");
      dx[0] = -x[1];
      dx[1] = x[0] + gamma * (x[0] * x[0] - 1.0) * x[1];
      break;
    }
    case SystemKind::Linear: {
      const auto& p = spec.params;
      dx[0] = p.at("a11") * x[0] + p.at("a12") * x[1];
      dx[1] = p.at("a21") * x[0] + p.at("a22") * x[1];
      break;
    }
  }
  return dx;
}

void IntegratorConfig::validate() const {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "T must be >= 1");
}

namespace {

template <typename Field>
State rk4(const Field& field, const State& x, double dt) {
  const State k1 = field(x);
  const State k2 = field(x + 0.5 * dt * k1);
  const State k3 = field(x + 0.5 * dt * k2);
  const State k4 = field(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

State rk4_step(const SystemSpec& spec, const State& x, double dt,
               long step_index) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  State next = rk4([&](const State& s) { return eval_field(spec, s); }, x, dt);
  if (!next.allFinite()) {
    throw Error(ErrorCode::IntegrationOverflow,
                "non-finite state at integration step " + std::to_string(step_index));
  }
  return next;
}

Trajectory simulate(const SystemSpec& spec, const State& x0,
                    const IntegratorConfig& cfg, const NoiseModel& noise,
                    int stage) {
  cfg.validate();
  if (x0.size() != spec.n) {
    throw Error(ErrorCode::DimensionMismatch, "initial state dimension mismatch");
  }
  if (!(noise.sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  }
  Trajectory traj;
  traj.x0 = x0;
  traj.stage = stage;
  Eigen::MatrixXd clean(spec.n, cfg.steps + 1);
  clean.col(0) = x0;
  Eigen::Index len = 1;
  State x = x0;
  for (int t = 1; t <= cfg.steps; ++t) {
    if (x.lpNorm<Eigen::Infinity>() > kOverflowBound) {
      traj.diverged = true;
      break;
    }
    try {
      x = rk4_step(spec, x, cfg.dt, t);
    } catch (const Error&) {
      traj.diverged = true;
      break;
    }
    clean.col(len++) = x;
  }
  if (!traj.diverged && x.lpNorm<Eigen::Infinity>() > kOverflowBound) {
    traj.diverged = true;
  }
  traj.clean = clean.leftCols(len);
  traj.times.resize(len);
  for (Eigen::Index t = 0; t < len; ++t) traj.times[t] = cfg.dt * static_cast<double>(t);

  traj.noisy = traj.clean;
  if (noise.sigma > 0.0) {
    Rng rng(noise.seed);
    for (Eigen::Index t = 0; t < len; ++t) {
      for (Eigen::Index i = 0; i < spec.n; ++i) {
        traj.noisy(i, t) += noise.sigma * standard_normal(rng);
      }
    }
  }
  return traj;
}

int label_trajectory(const Trajectory& traj, const LyapunovModel& model,
                     double c) {
  if (!(c > 0.0)) throw Error(ErrorCode::InvalidArgument, "level must be positive");
  return model.values(traj.clean).minCoeff() <= c ? 1 : -1;
}

Trajectory truncate_at_level(const Trajectory& traj, const LyapunovModel& model,
                             double c) {
  const Eigen::VectorXd v = model.values(traj.clean);
  Eigen::Index k = 0;
  while (k < v.size() && v[k] > c) ++k;
  if (k >= v.size() - 1) return traj;
  Trajectory out = traj;
  out.times.resize(static_cast<std::size_t>(k + 1));
  out.clean.conservativeResize(Eigen::NoChange, k + 1);
  if (out.noisy.cols() > k + 1) out.noisy.conservativeResize(Eigen::NoChange, k + 1);
  return out;
}

int label_initial_state(const SystemSpec& spec, const State& x0,
                        const LyapunovModel& model, double c,
                        const IntegratorConfig& cfg) {
  return label_trajectory(simulate(spec, x0, cfg, NoiseModel{}), model, c);
}

bool converges_to_equilibrium(const SystemSpec& spec, const State& x0,
                              const IntegratorConfig& cfg, double radius) {
  cfg.validate();
  State x = x0;
  for (int t = 0; t <= cfg.steps; ++t) {
    if ((x - spec.equilibrium).norm() <= radius) return true;
    if (t == cfg.steps || x.lpNorm<Eigen::Infinity>() > kOverflowBound) break;
    try {
      x = rk4_step(spec, x, cfg.dt, t);
    } catch (const Error&) {
      return false;
    }
  }
  return false;
}

double RoaBoundary::area() const {
  double twice = 0.0;
  for (Eigen::Index i = 0; i + 1 < vertices.cols(); ++i) {
    twice += vertices(0, i) * vertices(1, i + 1) - vertices(0, i + 1) * vertices(1, i);
  }
  return 0.5 * std::abs(twice);
}

int RoaBoundary::winding_number(const Eigen::Vector2d& p) const {
  int wn = 0;
  for (Eigen::Index i = 0; i + 1 < vertices.cols(); ++i) {
    const Eigen::Vector2d a = vertices.col(i);
    const Eigen::Vector2d b = vertices.col(i + 1);
    const double side = (b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y());
    if (a.y() <= p.y()) {
      if (b.y() > p.y() && side > 0.0) ++wn;
    } else if (b.y() <= p.y() && side < 0.0) {
      --wn;
    }
  }
  return wn;
}

bool RoaBoundary::contains(const Eigen::Vector2d& p) const {
  return winding_number(p) != 0;
}

Eigen::Vector2d RoaBoundary::lower() const { return vertices.rowwise().minCoeff(); }
Eigen::Vector2d RoaBoundary::upper() const { return vertices.rowwise().maxCoeff(); }

RoaBoundary true_roa_boundary(const SystemSpec& spec, const BoundaryConfig& cfg) {
  if (spec.n != 2) {
    throw Error(ErrorCode::DimensionMismatch, "boundary extraction needs a planar system");
  }
  if (!(cfg.dt > 0.0) || !(cfg.max_time > 0.0) || cfg.record_every < 1) {
    throw Error(ErrorCode::InvalidArgument, "bad boundary configuration");
  }
  const State center = spec.equilibrium;
  auto reversed = [&](const State& s) -> State { return -eval_field(spec, s); };

  // Poincare section: the ray from the equilibrium along +x1. Crossings are
  // counted when x2 - center2 changes sign with x1 > center1.
  State x = center;
  x[0] += cfg.start_offset;
  const long max_steps = static_cast<long>(cfg.max_time / cfg.dt);
  double previous_crossing = std::numeric_limits<double>::quiet_NaN();
  int direction = 0;
  bool closed = false;
  long step = 0;
  for (; step < max_steps; ++step) {
    const State next = rk4(reversed, x, cfg.dt);
    if (!next.allFinite() || next.lpNorm<Eigen::Infinity>() > kOverflowBound) {
      throw Error(ErrorCode::NoClosedOrbit,
                  "reverse-time orbit diverged; no bounding limit cycle");
    }
    const double a = x[1] - center[1];
    const double b = next[1] - center[1];
    const int sign = (a < 0.0 && b >= 0.0) ? 1 : (a > 0.0 && b <= 0.0) ? -1 : 0;
    if (sign != 0) {
      const double s = a / (a - b);
      const double x1 = x[0] + s * (next[0] - x[0]);
      if (x1 > center[0]) {
        if (direction == 0) direction = sign;
        if (sign == direction) {
          if (std::abs(x1 - previous_crossing) < cfg.closure_tol) {
            x = next;
            closed = true;
            break;
          }
          previous_crossing = x1;
        }
      }
    }
    x = next;
    if ((x - center).norm() < 1e-9) {
      throw Error(ErrorCode::NoClosedOrbit,
                  "reverse-time orbit collapsed onto the equilibrium");
    }
  }
  if (!closed) {
    throw Error(ErrorCode::NoClosedOrbit,
                "orbit did not close within " + std::to_string(cfg.max_time) +
                    " time units");
  }

  // Record one more period, from this crossing to the next one.
  std::vector<Eigen::Vector2d> points;
  points.emplace_back(x[0], x[1]);
  for (long k = 1; step + k < 4 * max_steps; ++k) {
    const State next = rk4(reversed, x, cfg.dt);
    const double a = x[1] - center[1];
    const double b = next[1] - center[1];
    const int sign = (a < 0.0 && b >= 0.0) ? 1 : (a > 0.0 && b <= 0.0) ? -1 : 0;
    x = next;
    if (sign == direction && x[0] > center[0]) break;
    if (k % cfg.record_every == 0) points.emplace_back(x[0], x[1]);
  }
  RoaBoundary boundary;
  boundary.vertices.resize(2, static_cast<Eigen::Index>(points.size()) + 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    boundary.vertices.col(static_cast<Eigen::Index>(i)) = points[i];
  }
  boundary.vertices.col(boundary.vertices.cols() - 1) = points.front();
  if (boundary.winding_number(center.head<2>()) == 0) {
    throw Error(ErrorCode::NoClosedOrbit, "closed orbit does not enclose the equilibrium");
  }
  return boundary;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const auto n = traj.clean.rows();
  std::vector<std::string> header{"t"};
  for (Eigen::Index i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (Eigen::Index i = 1; i <= n; ++i) header.push_back("y" + std::to_string(i));
  CsvWriter csv(os, header);
  std::vector<double> row(1 + 2 * n);
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    row[0] = traj.times[t];
    for (Eigen::Index i = 0; i < n; ++i) {
      row[1 + i] = traj.clean(i, t);
      row[1 + n + i] = traj.noisy(i, t);
    }
    csv.row(row);
  }
}

void write_boundary_csv(std::ostream& os, const RoaBoundary& boundary) {
  CsvWriter csv(os, {"x1", "x2"});
  for (Eigen::Index i = 0; i < boundary.vertices.cols(); ++i) {
    csv.row({boundary.vertices(0, i), boundary.vertices(1, i)});
  }
}

RoaBoundary read_boundary_csv(std::istream& is) {
  const auto rows = read_csv_numbers(is);
  RoaBoundary boundary;
  boundary.vertices.resize(2, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != 2) throw Error(ErrorCode::Io, "boundary rows need 2 columns");
    boundary.vertices(0, static_cast<Eigen::Index>(i)) = rows[i][0];
    boundary.vertices(1, static_cast<Eigen::Index>(i)) = rows[i][1];
  }
  if (boundary.vertices.cols() < 4 ||
      !boundary.vertices.col(0).isApprox(boundary.vertices.col(boundary.vertices.cols() - 1))) {
    throw Error(ErrorCode::Io, "boundary polyline must be closed");
  }
  return boundary;
}

}  // namespace roa
