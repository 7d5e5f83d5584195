#include "roacolearn/colearn.hpp"

#include <cmath>
#include <limits>

#include "roacolearn/error.hpp"

namespace roa {

namespace {

// Independent RNG streams, so that e.g. ROA growth is identical between a
// ball run and a gap run sharing a master seed.
enum Stream : std::uint64_t {
  kLyapunovInit = 1,
  kPretrain,
  kInitialLevel,
  kGap,
  kBall,
  kNoise,
  kDynamicsInit,
  kOde,
  kVolume,
};

}  // namespace

std::string to_string(SamplingMode mode) {
  return mode == SamplingMode::Ball ? "ball" : "roa";
}

SamplingMode parse_sampling_mode(const std::string& name) {
  if (name == "roa" || name == "roa-gap") return SamplingMode::RoaGap;
  if (name == "ball") return SamplingMode::Ball;
  throw Error(ErrorCode::Config, "unknown sampling mode '" + name + "'");
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::None: return "none";
    case StopReason::GapVolume: return "gap_volume";
    case StopReason::NoStableLabels: return "no_stable_labels";
    case StopReason::MaxStages: return "max_stages";
    case StopReason::Error: return "error";
  }
  return "?";
}

RunConfig::RunConfig() {
  growth.box = make_box({-3.0, -6.0}, {3.0, 6.0});
}

SystemSpec RunConfig::system_spec() const { return make_system(system, system_params); }

void RunConfig::validate() const {
  const SystemSpec spec = system_spec();
  integrator.validate();
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::Config, "noise sigma must be >= 0");
  lyapunov_arch.validate();
  dynamics_arch.validate();
  for (const MlpArch* arch : {&lyapunov_arch, &dynamics_arch}) {
    if (arch->input_dim() != spec.n || arch->output_dim() != spec.n) {
      throw Error(ErrorCode::Config, "network input/output widths must equal n");
    }
    if (arch->hidden_layers() < 1) {
      throw Error(ErrorCode::Config, "networks need at least one hidden layer");
    }
  }
  if (pretrain_q.rows() != spec.n || pretrain_q.cols() != spec.n) {
    throw Error(ErrorCode::Config, "pretraining Q must be n x n");
  }
  growth.validate();
  if (growth.box.dim() != spec.n) throw Error(ErrorCode::Config, "box dimension must equal n");
  learn.validate();
  if (!(kernel.lambda_phi >= 0.0)) throw Error(ErrorCode::Config, "lambda_phi must be >= 0");
  if (mode == SamplingMode::Ball && !(ball_radius > 0.0)) {
    throw Error(ErrorCode::Config, "ball radius must be positive");
  }
  if (ball_budget_factor < 1) throw Error(ErrorCode::Config, "ball budget factor must be >= 1");
  if (max_stages < 0) throw Error(ErrorCode::Config, "max stages must be >= 0");
  if (mse_resolution < 10) throw Error(ErrorCode::Config, "MSE grid must be at least 10x10");
}

nlohmann::json to_json(const RunConfig& cfg) {
  using nlohmann::json;
  std::vector<std::vector<double>> q;
  for (Eigen::Index i = 0; i < cfg.pretrain_q.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < cfg.pretrain_q.cols(); ++k) row.push_back(cfg.pretrain_q(i, k));
    q.push_back(row);
  }
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  return json{
      {"format", "roacolearn.run"},
      {"version", 1},
      {"system", {{"name", cfg.system}, {"params", cfg.system_params}}},
      {"integrator", {{"dt", cfg.integrator.dt}, {"steps", cfg.integrator.steps}}},
      {"noise_sigma", cfg.noise_sigma},
      {"networks",
       {{"lyapunov", {{"sizes", cfg.lyapunov_arch.sizes},
                      {"activation", to_string(cfg.lyapunov_arch.activation)}}},
        {"dynamics", {{"sizes", cfg.dynamics_arch.sizes},
                      {"activation", to_string(cfg.dynamics_arch.activation)}}},
        {"init_std", cfg.init_std}}},
      {"pretrain",
       {{"q", q},
        {"radius", cfg.pretrain.radius},
        {"iterations", cfg.pretrain.iterations},
        {"batch_size", cfg.pretrain.batch_size},
        {"learning_rate", cfg.pretrain.learning_rate}}},
      {"growth",
       {{"alpha", cfg.growth.alpha},
        {"lambda_theta", cfg.growth.lambda_theta},
        {"samples_per_stage", cfg.growth.samples_per_stage},
        {"volume_threshold", cfg.growth.volume_threshold},
        {"box", {{"lower", vec(cfg.growth.box.lower)}, {"upper", vec(cfg.growth.box.upper)}}},
        {"train_steps", cfg.growth.train_steps},
        {"learning_rate", cfg.growth.learning_rate},
        {"line_search_candidates", cfg.growth.line_search_candidates},
        {"volume_samples", cfg.growth.volume_samples},
        {"initial_radius", cfg.growth.initial_radius},
        {"initial_validation_samples", cfg.growth.initial_validation_samples},
        {"active_set", cfg.growth.active_set},
        {"decrease_margin", cfg.growth.decrease_margin},
        {"decrease_weight", cfg.growth.decrease_weight},
        {"pair_refresh", cfg.growth.pair_refresh},
        {"revert_on_regression", cfg.growth.revert_on_regression},
        {"stable_target", cfg.growth.stable_target},
        {"unstable_target", cfg.growth.unstable_target},
        {"classify_history", cfg.growth.classify_history},
        {"containment_grid", cfg.growth.containment_grid},
        {"unstable_margin", cfg.growth.unstable_margin}}},
      {"learn",
       {{"lambda_psi", cfg.learn.lambda_psi},
        {"epsilon", cfg.learn.epsilon},
        {"samples_per_trajectory", cfg.learn.samples_per_trajectory},
        {"epochs", cfg.learn.epochs},
        {"batch_size", cfg.learn.batch_size},
        {"learning_rate", cfg.learn.learning_rate},
        {"regularizer_samples", cfg.learn.regularizer_samples},
        {"regularizer_hinge", cfg.learn.regularizer_hinge}}},
      {"kernel", {{"bandwidth", cfg.kernel.bandwidth}, {"lambda_phi", cfg.kernel.lambda_phi}}},
      {"sampling",
       {{"mode", to_string(cfg.mode)},
        {"ball_radius", cfg.ball_radius},
        {"ball_budget_factor", cfg.ball_budget_factor}}},
      {"seed", cfg.seed},
      {"max_stages", cfg.max_stages},
      {"mse_resolution", cfg.mse_resolution},
  };
}

namespace {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::Config, path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Config, path_ + "." + key + ": " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.push_back(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const auto& s : seen_) known = known || s == key;
      if (!known) throw Error(ErrorCode::Config, "unknown key " + path_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void read_arch(Reader r, MlpArch& arch) {
  r.get("sizes", arch.sizes);
  std::string act = to_string(arch.activation);
  r.get("activation", act);
  arch.activation = parse_activation(act);
  r.finish();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  Reader root(j, "config");
  std::string format = "roacolearn.run";
  int version = 1;
  root.get("format", format);
  root.get("version", version);
  if (format != "roacolearn.run" || version != 1) {
    throw Error(ErrorCode::Config, "unsupported config format/version");
  }
  {
    Reader r = root.child("system");
    r.get("name", cfg.system);
    if (r.has("params")) cfg.system_params.clear();
    r.get("params", cfg.system_params);
    r.finish();
  }
  {
    Reader r = root.child("integrator");
    r.get("dt", cfg.integrator.dt);
    r.get("steps", cfg.integrator.steps);
    r.finish();
  }
  root.get("noise_sigma", cfg.noise_sigma);
  {
    Reader r = root.child("networks");
    read_arch(r.child("lyapunov"), cfg.lyapunov_arch);
    read_arch(r.child("dynamics"), cfg.dynamics_arch);
    r.get("init_std", cfg.init_std);
    r.finish();
  }
  {
    Reader r = root.child("pretrain");
    std::vector<std::vector<double>> q;
    r.get("q", q);
    if (!q.empty()) {
      cfg.pretrain_q.resize(static_cast<Eigen::Index>(q.size()), static_cast<Eigen::Index>(q.size()));
      for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i].size() != q.size()) throw Error(ErrorCode::Config, "pretrain.q must be square");
        for (std::size_t k = 0; k < q.size(); ++k) {
          cfg.pretrain_q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = q[i][k];
        }
      }
    }
    r.get("radius", cfg.pretrain.radius);
    r.get("iterations", cfg.pretrain.iterations);
    r.get("batch_size", cfg.pretrain.batch_size);
    r.get("learning_rate", cfg.pretrain.learning_rate);
    r.finish();
  }
  {
    Reader r = root.child("growth");
    r.get("alpha", cfg.growth.alpha);
    r.get("lambda_theta", cfg.growth.lambda_theta);
    r.get("samples_per_stage", cfg.growth.samples_per_stage);
    r.get("volume_threshold", cfg.growth.volume_threshold);
    {
      Reader b = r.child("box");
      std::vector<double> lower(cfg.growth.box.lower.data(),
                                cfg.growth.box.lower.data() + cfg.growth.box.lower.size());
      std::vector<double> upper(cfg.growth.box.upper.data(),
                                cfg.growth.box.upper.data() + cfg.growth.box.upper.size());
      b.get("lower", lower);
      b.get("upper", upper);
      b.finish();
      if (lower.size() != upper.size()) throw Error(ErrorCode::Config, "box bounds differ in size");
      cfg.growth.box = Box{to_vector(lower), to_vector(upper)};
      if ((cfg.growth.box.upper.array() <= cfg.growth.box.lower.array()).any()) {
        throw Error(ErrorCode::Config, "box upper bound must exceed lower bound");
      }
    }
    r.get("train_steps", cfg.growth.train_steps);
    r.get("learning_rate", cfg.growth.learning_rate);
    r.get("line_search_candidates", cfg.growth.line_search_candidates);
    r.get("volume_samples", cfg.growth.volume_samples);
    r.get("initial_radius", cfg.growth.initial_radius);
    r.get("initial_validation_samples", cfg.growth.initial_validation_samples);
    r.get("active_set", cfg.growth.active_set);
    r.get("decrease_margin", cfg.growth.decrease_margin);
    r.get("decrease_weight", cfg.growth.decrease_weight);
    r.get("pair_refresh", cfg.growth.pair_refresh);
    r.get("revert_on_regression", cfg.growth.revert_on_regression);
    r.get("stable_target", cfg.growth.stable_target);
    r.get("unstable_target", cfg.growth.unstable_target);
    r.get("classify_history", cfg.growth.classify_history);
    r.get("containment_grid", cfg.growth.containment_grid);
    r.get("unstable_margin", cfg.growth.unstable_margin);
    r.finish();
  }
  {
    Reader r = root.child("learn");
    r.get("lambda_psi", cfg.learn.lambda_psi);
    r.get("epsilon", cfg.learn.epsilon);
    r.get("samples_per_trajectory", cfg.learn.samples_per_trajectory);
    r.get("epochs", cfg.learn.epochs);
    r.get("batch_size", cfg.learn.batch_size);
    r.get("learning_rate", cfg.learn.learning_rate);
    r.get("regularizer_samples", cfg.learn.regularizer_samples);
    r.get("regularizer_hinge", cfg.learn.regularizer_hinge);
    r.finish();
  }
  {
    Reader r = root.child("kernel");
    r.get("bandwidth", cfg.kernel.bandwidth);
    r.get("lambda_phi", cfg.kernel.lambda_phi);
    r.finish();
  }
  {
    Reader r = root.child("sampling");
    std::string mode = to_string(cfg.mode);
    r.get("mode", mode);
    cfg.mode = parse_sampling_mode(mode);
    r.get("ball_radius", cfg.ball_radius);
    r.get("ball_budget_factor", cfg.ball_budget_factor);
    r.finish();
  }
  root.get("seed", cfg.seed);
  root.get("max_stages", cfg.max_stages);
  root.get("mse_resolution", cfg.mse_resolution);
  root.finish();
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const StageReport& r) {
  return {{"stage", r.stage},
          {"level_before", r.level_before},
          {"level", r.level},
          {"gap_volume", r.gap_volume},
          {"new_trajectories", r.new_trajectories},
          {"cumulative_trajectories", r.cumulative_trajectories},
          {"stable_labels", r.stable_labels},
          {"unstable_labels", r.unstable_labels},
          {"ode_mse", std::isfinite(r.ode_mse) ? nlohmann::json(r.ode_mse) : nlohmann::json()},
          {"decrease_violations", r.decrease_violations},
          {"level_shrunk", r.level_shrunk}};
}

std::vector<State> choose_initial_states(const RunConfig& cfg,
                                         const LyapunovModel& lyap, int count,
                                         Rng& rng) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "need at least one initial state");
  if (cfg.mode == SamplingMode::RoaGap) {
    return sample_gap(lyap, cfg.growth.alpha, count, cfg.growth.box, rng);
  }
  std::vector<State> out;
  out.reserve(count);
  for (int j = 0; j < count; ++j) out.push_back(uniform_in_ball(rng, lyap.anchor(), cfg.ball_radius));
  return out;
}

double choose_initial_level(const LyapunovModel& model, const SystemSpec& spec,
                            const RunConfig& cfg, Rng& rng) {
  double c = level_inside_ball(model, cfg.growth.initial_radius, 720, rng);
  for (int attempt = 0; attempt < 30; ++attempt) {
    LyapunovModel probe = model;
    probe.set_level(c);
    const auto samples = sample_level_set(probe, c, cfg.growth.initial_validation_samples,
                                          cfg.growth.box, rng);
    bool all_stable = true;
    for (const auto& x0 : samples) {
      // Each validation start must converge to the equilibrium; reaching the
      // level set itself would hold trivially at t = 0.
      if (!converges_to_equilibrium(spec, x0, cfg.integrator, 0.1 * cfg.growth.initial_radius)) {
        all_stable = false;
        break;
      }
    }
    if (all_stable) return c;
    c *= 0.5;
  }
  throw Error(ErrorCode::Precondition, "no initial level set validated as stable");
}

Trajectory clip_to_box(const Trajectory& traj, const Box& box) {
  Eigen::Index len = 0;
  while (len < traj.length() && box.contains(traj.clean.col(len))) ++len;
  if (len == traj.length()) return traj;
  len = std::max<Eigen::Index>(len, 1);
  Trajectory out = traj;
  out.clean = traj.clean.leftCols(len);
  out.noisy = traj.noisy.leftCols(len);
  out.times.resize(static_cast<std::size_t>(len));
  return out;
}

Eigen::MatrixXd interior_grid(const RoaBoundary& boundary, int resolution) {
  if (resolution < 10) throw Error(ErrorCode::InvalidArgument, "grid must be at least 10x10");
  const Eigen::Vector2d lo = boundary.lower();
  const Eigen::Vector2d hi = boundary.upper();
  std::vector<Eigen::Vector2d> inside;
  for (int i = 0; i < resolution; ++i) {
    for (int k = 0; k < resolution; ++k) {
      const Eigen::Vector2d p(lo.x() + (hi.x() - lo.x()) * (i + 0.5) / resolution,
                              lo.y() + (hi.y() - lo.y()) * (k + 0.5) / resolution);
      if (boundary.contains(p)) inside.push_back(p);
    }
  }
  Eigen::MatrixXd out(2, static_cast<Eigen::Index>(inside.size()));
  for (std::size_t j = 0; j < inside.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = inside[j];
  return out;
}

double compute_mse(const MlpParams& psi, const SystemSpec& spec,
                   const RoaBoundary& boundary, int resolution) {
  const Eigen::MatrixXd grid = interior_grid(boundary, resolution);
  if (grid.cols() == 0) {
    throw Error(ErrorCode::EmptyInterior, "no grid point falls inside the boundary");
  }
  return field_mse(psi, spec, grid);
}

LabeledSample oracle_label(const SystemSpec& spec, const IntegratorConfig& integrator,
                           const State& x0, const LyapunovModel& model, int stage) {
  LabeledSample s;
  s.x0 = x0;
  const Trajectory full = simulate(spec, x0, integrator, NoiseModel{}, stage);
  s.label = label_trajectory(full, model, model.level());
  s.trajectory = s.label == 1 ? truncate_at_level(full, model, model.level()) : full;
  return s;
}

RunResult run(const RunConfig& cfg) {
  RunResult result;
  result.config = cfg;
  try {
    cfg.validate();
    const SystemSpec spec = cfg.system_spec();
    const std::uint64_t seed = cfg.seed;

    if (spec.n == 2) {
      try {
        result.true_boundary = true_roa_boundary(spec);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoClosedOrbit) throw;
      }
    }

    Rng init_rng(derive_seed(seed, kLyapunovInit));
    LyapunovModel lyap =
        make_lyapunov_model(cfg.lyapunov_arch, spec.equilibrium, cfg.init_std, init_rng);
    Rng pretrain_rng(derive_seed(seed, kPretrain));
    lyap = pretrain_quadratic(lyap, cfg.pretrain_q, cfg.pretrain, pretrain_rng);
    Rng level_rng(derive_seed(seed, kInitialLevel));
    lyap.set_level(choose_initial_level(lyap, spec, cfg, level_rng));
    result.initial_lyapunov = lyap;
    result.lyapunov = lyap;

    Rng psi_rng(derive_seed(seed, kDynamicsInit));
    MlpParams psi = init_params(cfg.dynamics_arch, cfg.init_std, psi_rng);
    result.dynamics = psi;

    Rng gap_rng(derive_seed(seed, kGap));
    Rng ball_rng(derive_seed(seed, kBall));
    Rng ode_rng(derive_seed(seed, kOde));
    Rng volume_rng(derive_seed(seed, kVolume));

    const GrowthConfig& growth = cfg.growth;
    double volume = gap_volume(lyap, growth.alpha, growth.box, growth.volume_samples, volume_rng);
    result.initial_gap_volume = volume;
    const double threshold = growth.effective_volume_threshold();

    std::uint64_t trajectory_index = 0;
    for (int stage = 0;; ++stage) {
      if (stage >= cfg.max_stages) {
        result.stop = StopReason::MaxStages;
        break;
      }
      if (volume <= threshold) {
        result.stop = StopReason::GapVolume;
        break;
      }
      StageReport report;
      report.stage = stage;
      report.level_before = lyap.level();

      const auto gap_states =
          sample_gap(lyap, growth.alpha, growth.samples_per_stage, growth.box, gap_rng);
      std::vector<State> starts = gap_states;
      if (cfg.mode == SamplingMode::Ball) {
        starts = choose_initial_states(
            cfg, lyap, growth.samples_per_stage * cfg.ball_budget_factor, ball_rng);
      }

      std::vector<Trajectory> fresh;
      fresh.reserve(starts.size());
      for (const auto& x0 : starts) {
        NoiseModel noise{cfg.noise_sigma, derive_seed(seed, kNoise, trajectory_index++)};
        fresh.push_back(clip_to_box(simulate(spec, x0, cfg.integrator, noise, stage), growth.box));
      }
      result.bundle.append(fit_all(fresh, cfg.kernel, cfg.noise_sigma));
      result.trajectories.insert(result.trajectories.end(), fresh.begin(), fresh.end());
      result.gap_starts.insert(result.gap_starts.end(), gap_states.begin(), gap_states.end());

      psi = train_ode(psi, result.bundle, stage, &lyap, growth.box, cfg.learn, ode_rng,
                      &result.curve, static_cast<long>(result.curve.size()));
      result.dynamics = psi;

      const Labeler labeler = [&](const State& x0, const LyapunovModel& model) {
        return oracle_label(spec, cfg.integrator, x0, model, stage);
      };
      GrowthStage grown = expand_roa(lyap, gap_states, labeler, growth, result.labeled);
      lyap = grown.model;
      result.lyapunov = lyap;

      std::vector<Eigen::MatrixXd> observed;
      observed.reserve(result.labeled.size());
      for (const auto& s : result.labeled) observed.push_back(s.trajectory.clean);
      report.level = lyap.level();
      report.level_shrunk = grown.search.shrunk;
      report.decrease_violations = count_decrease_violations(lyap, lyap.level(), observed);
      report.stable_labels = grown.stable_labels;
      report.unstable_labels = grown.unstable_labels;
      report.new_trajectories = static_cast<int>(fresh.size());
      report.cumulative_trajectories = static_cast<int>(result.trajectories.size());
      report.ode_mse = result.true_boundary
                           ? compute_mse(psi, spec, *result.true_boundary, cfg.mse_resolution)
                           : std::numeric_limits<double>::quiet_NaN();
      volume = gap_volume(lyap, growth.alpha, growth.box, growth.volume_samples, volume_rng);
      report.gap_volume = volume;
      result.reports.push_back(report);
      result.snapshots.push_back({lyap, psi});

      if (grown.converged) {
        result.stop = StopReason::NoStableLabels;
        break;
      }
    }
  } catch (const Error& e) {
    result.stop = StopReason::Error;
    result.diagnostic = std::string(to_string(e.code())) + ": " + e.what();
  }
  return result;
}

}  // namespace roa
