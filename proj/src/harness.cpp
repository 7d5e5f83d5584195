#include "roacolearn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "roacolearn/error.hpp"
#include "roacolearn/io.hpp"

namespace roa {

namespace fs = std::filesystem;

std::string to_string(Method method) {
  switch (method) {
    case Method::Ball: return "ball";
    case Method::Roa: return "roa";
    case Method::RoaReg: return "roa+reg";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "ball") return Method::Ball;
  if (name == "roa") return Method::Roa;
  if (name == "roa+reg") return Method::RoaReg;
  throw Error(ErrorCode::Config, "unknown method '" + name + "' (ball|roa|roa+reg)");
}

RunConfig configure_method(const RunConfig& base, Method method) {
  RunConfig cfg = base;
  switch (method) {
    case Method::Ball:
      cfg.mode = SamplingMode::Ball;
      cfg.learn.lambda_psi = 0.0;
      break;
    case Method::Roa:
      cfg.mode = SamplingMode::RoaGap;
      cfg.learn.lambda_psi = 0.0;
      break;
    case Method::RoaReg:
      cfg.mode = SamplingMode::RoaGap;
      if (!(cfg.learn.lambda_psi > 0.0)) cfg.learn.lambda_psi = LearnConfig{}.lambda_psi;
      break;
  }
  return cfg;
}

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

ComparisonTable run_comparison(const RunConfig& base,
                               const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "comparison needs at least one seed");
  const SystemSpec spec = base.system_spec();
  const RoaBoundary boundary = true_roa_boundary(spec);
  ComparisonTable table;
  const Method methods[] = {Method::Ball, Method::Roa, Method::RoaReg};
  for (std::uint64_t seed : seeds) {
    for (Method method : methods) {
      RunConfig cfg = configure_method(base, method);
      cfg.seed = seed;
      ComparisonRow row;
      row.seed = seed;
      row.method = method;
      const RunResult result = run(cfg);
      row.trajectories = static_cast<int>(result.trajectories.size());
      row.stages = static_cast<int>(result.reports.size());
      if (!result.ok()) {
        row.error = result.diagnostic;
        row.mse = std::numeric_limits<double>::quiet_NaN();
      } else {
        try {
          row.mse = compute_mse(result.dynamics, spec, boundary, cfg.mse_resolution);
        } catch (const Error& e) {
          row.error = e.what();
          row.mse = std::numeric_limits<double>::quiet_NaN();
        }
      }
      table.rows.push_back(row);
    }
  }
  for (Method method : methods) {
    std::vector<double> trajs;
    std::vector<double> mses;
    for (const auto& row : table.rows) {
      if (row.method != method || !row.error.empty()) continue;
      trajs.push_back(row.trajectories);
      mses.push_back(row.mse);
    }
    table.medians.push_back({method, median(trajs), median(mses)});
  }
  return table;
}

void write_comparison(const ComparisonTable& table, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream rows;
  rows << "seed,method,trajectories,stages,mse,error\n";
  for (const auto& r : table.rows) {
    rows << r.seed << ',' << to_string(r.method) << ',' << r.trajectories << ',' << r.stages
         << ',' << format_number(r.mse) << ',' << r.error << '\n';
  }
  write_text_file(dir / "comparison.csv", rows.str());
  std::ostringstream med;
  med << "method,trajectories,mse\n";
  for (const auto& m : table.medians) {
    med << to_string(m.method) << ',' << format_number(m.trajectories) << ','
        << format_number(m.mse) << '\n';
  }
  write_text_file(dir / "comparison_median.csv", med.str());
}

void write_vector_field_csv(std::ostream& os, const Box& box, int resolution,
                            const std::function<State(const State&)>& field) {
  if (box.dim() != 2) throw Error(ErrorCode::DimensionMismatch, "vector-field export is planar only");
  if (resolution < 2) throw Error(ErrorCode::InvalidArgument, "resolution must be >= 2");
  CsvWriter csv(os, {"x1", "x2", "f1", "f2"});
  for (int i = 0; i < resolution; ++i) {
    for (int k = 0; k < resolution; ++k) {
      State x(2);
      x << box.lower[0] + (box.upper[0] - box.lower[0]) * i / (resolution - 1),
          box.lower[1] + (box.upper[1] - box.lower[1]) * k / (resolution - 1);
      const State f = field(x);
      csv.row({x[0], x[1], f[0], f[1]});
    }
  }
}

namespace {

std::string stage_name(const char* prefix, int k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%02d%s", prefix, k, ext);
  return buf;
}

nlohmann::json lyapunov_json(const LyapunovModel& m) {
  nlohmann::json j = to_json(m.theta());
  j["level"] = m.level();
  j["anchor"] = std::vector<double>(m.anchor().data(), m.anchor().data() + m.anchor().size());
  return j;
}

}  // namespace

void export_plots(const RunResult& result, const fs::path& dir, const ExportConfig& cfg) {
  try {
    fs::create_directories(dir / "trajectories");
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::Io, e.what());
  }
  const RunConfig& rc = result.config;
  const SystemSpec spec = rc.system_spec();
  write_text_file(dir / "manifest.json", to_json(rc).dump(2) + "\n");

  nlohmann::json stages = nlohmann::json::array();
  for (const auto& r : result.reports) stages.push_back(to_json(r));
  nlohmann::json summary{{"stages", stages},
                         {"stop_reason", to_string(result.stop)},
                         {"diagnostic", result.diagnostic},
                         {"initial_level", result.initial_lyapunov.level()},
                         {"initial_gap_volume", result.initial_gap_volume},
                         {"final_level", result.lyapunov.level()},
                         {"trajectories", result.trajectories.size()}};
  if (result.true_boundary) summary["true_roa_area"] = result.true_boundary->area();
  write_text_file(dir / "stages.json", summary.dump(2) + "\n");

  const bool planar = spec.n == 2;
  if (planar) {
    std::ostringstream raster;
    write_level_raster_csv(raster, result.initial_lyapunov, rc.growth.box, cfg.raster_resolution);
    write_text_file(dir / "level_set_initial.csv", raster.str());
    for (std::size_t k = 0; k < result.snapshots.size(); ++k) {
      std::ostringstream os;
      write_level_raster_csv(os, result.snapshots[k].lyapunov, rc.growth.box, cfg.raster_resolution);
      write_text_file(dir / stage_name("level_set_stage_", static_cast<int>(k), ".csv"), os.str());
    }
    std::ostringstream truth;
    write_vector_field_csv(truth, rc.growth.box, cfg.field_resolution,
                           [&](const State& x) { return eval_field(spec, x); });
    write_text_file(dir / "field_true.csv", truth.str());
    std::ostringstream learned;
    write_vector_field_csv(learned, rc.growth.box, cfg.field_resolution,
                           [&](const State& x) { return State(forward(result.dynamics, x)); });
    write_text_file(dir / "field_learned.csv", learned.str());
    if (result.true_boundary) {
      std::ostringstream b;
      write_boundary_csv(b, *result.true_boundary);
      write_text_file(dir / "roa_boundary.csv", b.str());
    }
  }

  std::ostringstream index;
  {
    std::vector<std::string> header{"id", "stage", "diverged", "samples"};
    for (int i = 1; i <= spec.n; ++i) header.push_back("x0_" + std::to_string(i));
    CsvWriter csv(index, header);
    for (std::size_t j = 0; j < result.trajectories.size(); ++j) {
      const auto& t = result.trajectories[j];
      std::vector<double> row{static_cast<double>(j), static_cast<double>(t.stage),
                              t.diverged ? 1.0 : 0.0, static_cast<double>(t.length())};
      for (Eigen::Index i = 0; i < t.x0.size(); ++i) row.push_back(t.x0[i]);
      csv.row(row);
      std::ostringstream os;
      write_trajectory_csv(os, t);
      write_text_file(dir / "trajectories" / ("traj_" + std::to_string(j) + ".csv"), os.str());
    }
  }
  write_text_file(dir / "trajectories" / "index.csv", index.str());

  std::ostringstream curve;
  {
    CsvWriter csv(curve, {"epoch", "gm", "reg", "total"});
    for (const auto& p : result.curve) {
      csv.row({static_cast<double>(p.epoch), p.gm, p.reg, p.total});
    }
  }
  write_text_file(dir / "training_curve.csv", curve.str());
  write_text_file(dir / "lyapunov.json", lyapunov_json(result.lyapunov).dump() + "\n");
  write_text_file(dir / "dynamics.json", to_json(result.dynamics).dump() + "\n");
  if (cfg.interpolants) {
    write_text_file(dir / "interpolants.json", to_json(result.bundle).dump() + "\n");
  }
}

RoaBoundary export_truth(const RunConfig& cfg, const fs::path& dir) {
  const RoaBoundary boundary = true_roa_boundary(cfg.system_spec());
  fs::create_directories(dir);
  std::ostringstream os;
  write_boundary_csv(os, boundary);
  write_text_file(dir / "roa_boundary.csv", os.str());
  nlohmann::json info{{"system", cfg.system},
                      {"params", cfg.system_params},
                      {"area", boundary.area()},
                      {"vertices", boundary.vertices.cols()},
                      {"lower", {boundary.lower().x(), boundary.lower().y()}},
                      {"upper", {boundary.upper().x(), boundary.upper().y()}}};
  write_text_file(dir / "truth.json", info.dump(2) + "\n");
  return boundary;
}

namespace {

// Max relative error between an analytic gradient and central differences
// of `loss` over the flat parameter vector.
template <typename LossFn>
double fd_relative_error(MlpParams params, const Eigen::VectorXd& analytic, LossFn&& loss) {
  const Eigen::VectorXd base = params.flatten();
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Eigen::VectorXd p = base;
    p[i] += h;
    params.assign(p);
    const double up = loss(params);
    p[i] -= 2 * h;
    params.assign(p);
    const double down = loss(params);
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

CheckResult check(const std::string& name, bool passed, const std::string& detail) {
  return {name, passed, detail};
}

}  // namespace

std::vector<CheckResult> run_checks(const RunConfig& cfg) {
  cfg.validate();
  std::vector<CheckResult> out;
  const SystemSpec spec = cfg.system_spec();
  Rng rng(derive_seed(cfg.seed, 0xc4ec));

  {
    State x = spec.equilibrium;
    double drift = 0.0;
    for (int t = 0; t < cfg.integrator.steps; ++t) {
      x = rk4_step(spec, x, cfg.integrator.dt, t);
      drift = std::max(drift, (x - spec.equilibrium).norm());
    }
    out.push_back(check("fixed point preserved", drift <= 1e-9, "max drift " + format_number(drift)));
  }
  {
    const SystemSpec osc = make_system("vdp", {{"gamma", 0.0}});
    State x(2);
    x << 1.0, 0.0;
    const int steps = static_cast<int>(std::round(2.0 * 3.14159265358979323846 / 0.01));
    for (int t = 0; t < steps; ++t) x = rk4_step(osc, x, 0.01, t);
    const double drift = std::abs(x.squaredNorm() - 1.0);
    out.push_back(check("harmonic energy drift per period", drift < 1e-6, format_number(drift)));
  }
  {
    State x0(2);
    x0 << 1.0, 0.5;
    const IntegratorConfig ic{0.01, 200};
    const Trajectory a = simulate(spec, x0, ic, {0.05, 7});
    const Trajectory b = simulate(spec, x0, ic, {0.05, 7});
    out.push_back(check("noise determinism", a.noisy == b.noisy, ""));
  }
  {
    MlpParams p = init_params(cfg.lyapunov_arch, 0.5, rng);
    State x = Box{spec.equilibrium.array() - 1.0, spec.equilibrium.array() + 1.0}.sample(rng);
    const Eigen::VectorXd up = Eigen::VectorXd::Random(p.arch.output_dim());
    const Gradients g = backward(p, x, up);
    const double err = fd_relative_error(p, g.params.flatten(), [&](const MlpParams& q) {
      return up.dot(forward(q, x));
    });
    out.push_back(check("network parameter gradients", err < 1e-4, "max rel err " + format_number(err)));
  }
  {
    LyapunovModel v(init_params(cfg.lyapunov_arch, 0.5, rng), spec.equilibrium, 1.0);
    const double at_anchor = v.value(spec.equilibrium);
    State x = Box{spec.equilibrium.array() - 1.0, spec.equilibrium.array() + 1.0}.sample(rng);
    const State g = v.gradient(x);
    double worst = 0.0;
    for (int i = 0; i < spec.n; ++i) {
      State a = x, b = x;
      a[i] += 1e-5;
      b[i] -= 1e-5;
      const double fd = (v.value(a) - v.value(b)) / 2e-5;
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
    out.push_back(check("V anchored at equilibrium", at_anchor == 0.0, format_number(at_anchor)));
    out.push_back(check("grad_x V finite differences", worst < 1e-4, "max rel err " + format_number(worst)));
  }
  {
    std::vector<double> times;
    std::vector<double> values;
    for (int i = 0; i < 50; ++i) {
      times.push_back(2.0 * 3.14159265358979323846 * i / 49.0);
      values.push_back(std::sin(times.back()));
    }
    const Interpolant interp = fit_interpolant(times, values, 0.5, 1e-8, 0.0);
    double worst = 0.0;
    for (int k = 0; k <= 200; ++k) {
      const double t = 0.5 + (2.0 * 3.14159265358979323846 - 1.0) * k / 200.0;
      worst = std::max(worst, std::abs(interp.derivative(t) - std::cos(t)));
    }
    out.push_back(check("interpolant derivative vs cos", worst < 0.05, format_number(worst)));
  }
  {
    LyapunovModel v(init_params(cfg.lyapunov_arch, 0.3, rng), spec.equilibrium, 0.0);
    v.set_level(v.value(spec.equilibrium + State::Constant(spec.n, 0.5)));
    std::vector<LabeledSample> samples;
    for (int j = 0; j < 4; ++j) {
      LabeledSample s;
      s.x0 = Box{spec.equilibrium.array() - 1.0, spec.equilibrium.array() + 1.0}.sample(rng);
      s.label = j % 2 ? 1 : -1;
      s.trajectory = simulate(spec, s.x0, {0.01, 50}, {});
      samples.push_back(s);
    }
    const GrowthLoss gl = growth_loss(v, samples, 0.1);
    const double err = fd_relative_error(v.theta(), gl.grads.flatten(), [&](const MlpParams& q) {
      LyapunovModel w(q, v.anchor(), v.level());
      return growth_loss(w, samples, 0.1).loss;
    });
    out.push_back(check("growth-loss gradients", err < 1e-4, "max rel err " + format_number(err)));
  }
  return out;
}

}  // namespace roa
