#include "roacolearn/interpolant.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "roacolearn/error.hpp"

namespace roa {

namespace {

// Beyond this many bandwidths a kernel term is below 2e-22 and skipped.
constexpr double kWindow = 10.0;

}  // namespace

double rbf_kernel(double a, double b, double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "kernel bandwidth must be > 0");
  const double d = a - b;
  return std::exp(-d * d / (2.0 * sigma * sigma));
}

double Interpolant::value(double t) const {
  const double reach = kWindow * bandwidth;
  auto lo = std::lower_bound(centers.begin(), centers.end(), t - reach);
  auto hi = std::upper_bound(lo, centers.end(), t + reach);
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  double sum = 0.0;
  for (auto it = lo; it != hi; ++it) {
    const double d = t - *it;
    sum += weights[it - centers.begin()] * std::exp(-d * d * inv);
  }
  return sum;
}

double Interpolant::derivative(double t) const {
  const double reach = kWindow * bandwidth;
  auto lo = std::lower_bound(centers.begin(), centers.end(), t - reach);
  auto hi = std::upper_bound(lo, centers.end(), t + reach);
  const double s2 = bandwidth * bandwidth;
  const double inv = 1.0 / (2.0 * s2);
  double sum = 0.0;
  for (auto it = lo; it != hi; ++it) {
    const double d = t - *it;
    sum += weights[it - centers.begin()] * (-d / s2) * std::exp(-d * d * inv);
  }
  return sum;
}

double default_bandwidth(std::span<const double> times) {
  if (times.size() < 2) return 1.0;
  std::vector<double> gaps(times.size() - 1);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) gaps[i] = times[i + 1] - times[i];
  auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
  std::nth_element(gaps.begin(), mid, gaps.end());
  return 5.0 * *mid;
}

struct InterpolantFitter::Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double ridge = 0.0;
};

InterpolantFitter::InterpolantFitter(const KernelConfig& cfg, double noise_sigma)
    : cfg_(cfg), noise_sigma_(noise_sigma) {
  if (!(cfg_.lambda_phi >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda_phi must be >= 0");
  }
  if (!(noise_sigma_ >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  }
}

const InterpolantFitter::Factor& InterpolantFitter::factor_for(
    std::span<const double> times, double bandwidth) {
  if (factor_ && bandwidth == cached_bandwidth_ &&
      std::equal(times.begin(), times.end(), cached_times_.begin(), cached_times_.end())) {
    return *factor_;
  }
  const auto m = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd gram(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    gram(i, i) = 1.0;
    for (Eigen::Index k = 0; k < i; ++k) {
      const double v = rbf_kernel(times[i], times[k], bandwidth);
      gram(i, k) = v;
      gram(k, i) = v;
    }
  }
  const double ridge = noise_sigma_ > 0.0
                           ? cfg_.lambda_phi * noise_sigma_ * noise_sigma_
                           : cfg_.lambda_phi;
  auto factor = std::make_shared<Factor>();
  factor->ridge = ridge;
  bool ok = false;
  // Jitter escalation 0, 1e-10, ..., 1e-6 on the diagonal.
  for (double jitter = 0.0; jitter <= 1e-6 * 1.0001;
       jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0) {
    Eigen::MatrixXd system = gram;
    system.diagonal().array() += ridge + jitter;
    factor->llt.compute(system);
    if (factor->llt.info() == Eigen::Success) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    throw Error(ErrorCode::Conditioning,
                "kernel system is singular even with 1e-6 jitter; "
                "increase lambda_phi (currently " + std::to_string(cfg_.lambda_phi) + ")");
  }
  cached_times_.assign(times.begin(), times.end());
  cached_bandwidth_ = bandwidth;
  factor_ = std::move(factor);
  return *factor_;
}

Interpolant InterpolantFitter::fit(std::span<const double> times,
                                   std::span<const double> values) {
  Eigen::MatrixXd obs(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) obs(0, static_cast<Eigen::Index>(i)) = values[i];
  return fit_all_dims(times, obs).front();
}

std::vector<Interpolant> InterpolantFitter::fit_all_dims(
    std::span<const double> times, const Eigen::MatrixXd& observations) {
  if (times.empty() || static_cast<Eigen::Index>(times.size()) != observations.cols()) {
    throw Error(ErrorCode::InvalidArgument, "need one observation per sample time");
  }
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    if (!(times[i + 1] > times[i])) {
      throw Error(ErrorCode::InvalidArgument, "sample times must be strictly increasing");
    }
  }
  const double bandwidth = cfg_.bandwidth > 0.0 ? cfg_.bandwidth : default_bandwidth(times);
  const Factor& factor = factor_for(times, bandwidth);
  const Eigen::MatrixXd weights = factor.llt.solve(observations.transpose());
  if (!weights.allFinite()) {
    throw Error(ErrorCode::Conditioning, "kernel solve produced non-finite weights; "
                                         "increase lambda_phi");
  }
  std::vector<Interpolant> out(static_cast<std::size_t>(observations.rows()));
  for (Eigen::Index s = 0; s < observations.rows(); ++s) {
    out[s].centers.assign(times.begin(), times.end());
    out[s].weights = weights.col(s);
    out[s].bandwidth = bandwidth;
  }
  return out;
}

Interpolant fit_interpolant(std::span<const double> times,
                            std::span<const double> values, double bandwidth,
                            double lambda_phi, double noise_sigma) {
  if (times.size() != values.size() || times.empty()) {
    throw Error(ErrorCode::InvalidArgument, "need as many values as times (>= 1)");
  }
  if (!(bandwidth > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be > 0");
  InterpolantFitter fitter({.bandwidth = bandwidth, .lambda_phi = lambda_phi}, noise_sigma);
  return fitter.fit(times, values);
}

std::size_t InterpolantBundle::size() const {
  std::size_t count = 0;
  for (const auto& dims : interpolants) count += dims.size();
  return count;
}

Eigen::VectorXd InterpolantBundle::state(std::size_t j, double t) const {
  const auto& dims = interpolants.at(j);
  Eigen::VectorXd x(static_cast<Eigen::Index>(dims.size()));
  for (std::size_t s = 0; s < dims.size(); ++s) x[static_cast<Eigen::Index>(s)] = dims[s].value(t);
  return x;
}

Eigen::VectorXd InterpolantBundle::derivative(std::size_t j, double t) const {
  const auto& dims = interpolants.at(j);
  Eigen::VectorXd dx(static_cast<Eigen::Index>(dims.size()));
  for (std::size_t s = 0; s < dims.size(); ++s) {
    dx[static_cast<Eigen::Index>(s)] = dims[s].derivative(t);
  }
  return dx;
}

void InterpolantBundle::append(InterpolantBundle&& other) {
  auto move_all = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()),
               std::make_move_iterator(src.end()));
  };
  move_all(interpolants, other.interpolants);
  move_all(stages, other.stages);
  move_all(span_begin, other.span_begin);
  move_all(span_end, other.span_end);
}

InterpolantBundle fit_all(std::span<const Trajectory> trajectories,
                          const KernelConfig& cfg, double noise_sigma) {
  if (trajectories.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no trajectories to interpolate");
  }
  InterpolantFitter fitter(cfg, noise_sigma);
  InterpolantBundle bundle;
  for (std::size_t j = 0; j < trajectories.size(); ++j) {
    const Trajectory& traj = trajectories[j];
    try {
      bundle.interpolants.push_back(fitter.fit_all_dims(traj.times, traj.noisy));
    } catch (const Error& e) {
      throw Error(e.code(), "trajectory " + std::to_string(j) + ": " + e.what());
    }
    bundle.stages.push_back(traj.stage);
    bundle.span_begin.push_back(traj.times.front());
    bundle.span_end.push_back(traj.times.back());
  }
  return bundle;
}

nlohmann::json to_json(const InterpolantBundle& bundle) {
  nlohmann::json trajs = nlohmann::json::array();
  for (std::size_t j = 0; j < bundle.trajectories(); ++j) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& interp : bundle.interpolants[j]) {
      dims.push_back({{"bandwidth", interp.bandwidth},
                      {"centers", interp.centers},
                      {"weights", std::vector<double>(interp.weights.data(),
                                                      interp.weights.data() + interp.weights.size())}});
    }
    trajs.push_back({{"stage", bundle.stages[j]},
                     {"span", {bundle.span_begin[j], bundle.span_end[j]}},
                     {"dims", dims}});
  }
  return {{"format", "roacolearn.interpolants"}, {"version", 1}, {"trajectories", trajs}};
}

InterpolantBundle bundle_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "roacolearn.interpolants" || j.at("version") != 1) {
      throw Error(ErrorCode::Config, "not an interpolant bundle (version 1)");
    }
    InterpolantBundle bundle;
    for (const auto& tj : j.at("trajectories")) {
      std::vector<Interpolant> dims;
      for (const auto& dj : tj.at("dims")) {
        Interpolant interp;
        interp.bandwidth = dj.at("bandwidth").get<double>();
        interp.centers = dj.at("centers").get<std::vector<double>>();
        const auto w = dj.at("weights").get<std::vector<double>>();
        if (w.size() != interp.centers.size()) {
          throw Error(ErrorCode::Config, "centers and weights differ in length");
        }
        interp.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
        dims.push_back(std::move(interp));
      }
      bundle.interpolants.push_back(std::move(dims));
      bundle.stages.push_back(tj.at("stage").get<int>());
      bundle.span_begin.push_back(tj.at("span").at(0).get<double>());
      bundle.span_end.push_back(tj.at("span").at(1).get<double>());
    }
    return bundle;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed bundle: ") + e.what());
  }
}

}  // namespace roa
