#include "roacolearn/nnet.hpp"

#include <cmath>

#include "roacolearn/error.hpp"

namespace roa {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity" || name == "linear") return Activation::Identity;
  throw Error(ErrorCode::Config, "unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Identity:
      return "identity";
  }
  return "?";
}

void MlpArch::validate() const {
  if (sizes.size() < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "architecture needs at least input and output widths");
  }
  for (int w : sizes) {
    if (w < 1) throw Error(ErrorCode::InvalidArgument, "layer width must be >= 1");
  }
}

MlpParams MlpParams::zeros(const MlpArch& arch) {
  arch.validate();
  MlpParams p;
  p.arch = arch;
  for (std::size_t l = 0; l + 1 < arch.sizes.size(); ++l) {
    p.layers.push_back({Eigen::MatrixXd::Zero(arch.sizes[l + 1], arch.sizes[l]),
                        Eigen::VectorXd::Zero(arch.sizes[l + 1])});
  }
  return p;
}

Eigen::Index MlpParams::parameter_count() const {
  Eigen::Index count = 0;
  for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
  return count;
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index k = 0;
  for (const auto& layer : layers) {
    flat.segment(k, layer.weight.size()) = layer.weight.reshaped();
    k += layer.weight.size();
    flat.segment(k, layer.bias.size()) = layer.bias;
    k += layer.bias.size();
  }
  return flat;
}

void MlpParams::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "flat parameter vector has wrong size");
  }
  Eigen::Index k = 0;
  for (auto& layer : layers) {
    layer.weight.reshaped() = flat.segment(k, layer.weight.size());
    k += layer.weight.size();
    layer.bias = flat.segment(k, layer.bias.size());
    k += layer.bias.size();
  }
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.rows() != other.layers[l].weight.rows() ||
        layers[l].weight.cols() != other.layers[l].weight.cols() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

MlpParams& MlpParams::operator+=(const MlpParams& other) {
  if (!same_shape(other)) {
    throw Error(ErrorCode::DimensionMismatch, "parameter shapes differ");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

MlpParams& MlpParams::operator*=(double s) {
  for (auto& layer : layers) {
    layer.weight *= s;
    layer.bias *= s;
  }
  return *this;
}

void MlpParams::set_zero() {
  for (auto& layer : layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

bool MlpParams::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

MlpParams init_params(const MlpArch& arch, double std, Rng& rng) {
  if (!(std > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "init std must be positive");
  }
  MlpParams p = MlpParams::zeros(arch);
  for (auto& layer : p.layers) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = std * standard_normal(rng);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] = std * standard_normal(rng);
    }
  }
  return p;
}

namespace {

void check_input(const MlpParams& params, Eigen::Index rows) {
  if (params.layers.empty()) {
    throw Error(ErrorCode::InvalidArgument, "network has no layers");
  }
  if (rows != params.layers.front().weight.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "input has " + std::to_string(rows) + " rows, network expects " +
                    std::to_string(params.layers.front().weight.cols()));
  }
}

void activate(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::Tanh) z = z.array().tanh();
}

// Multiplies `grad` in place by the activation derivative, given the
// activation output `a`.
void activate_backward(Activation act, const Eigen::MatrixXd& a,
                       Eigen::MatrixXd& grad) {
  if (act == Activation::Tanh) grad.array() *= 1.0 - a.array().square();
}

}  // namespace

ForwardTape forward_tape(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  check_input(params, inputs.rows());
  ForwardTape tape;
  tape.activations.reserve(params.layers.size() + 1);
  tape.activations.push_back(inputs);
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * tape.activations.back();
    z.colwise() += layer.bias;
    if (l != last) activate(params.arch.activation, z);
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

Eigen::MatrixXd forward(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  check_input(params, inputs.rows());
  Eigen::MatrixXd a = inputs;
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    if (l != last) activate(params.arch.activation, z);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x) {
  return forward(params, Eigen::MatrixXd(x)).col(0);
}

void backward(const MlpParams& params, const ForwardTape& tape,
              const Eigen::MatrixXd& upstream, MlpParams* param_grads,
              Eigen::MatrixXd* input_grads) {
  if (tape.activations.size() != params.layers.size() + 1 ||
      upstream.rows() != tape.output().rows() ||
      upstream.cols() != tape.output().cols()) {
    throw Error(ErrorCode::DimensionMismatch, "upstream does not match forward output");
  }
  if (param_grads && !param_grads->same_shape(params)) {
    throw Error(ErrorCode::DimensionMismatch, "gradient accumulator has wrong shape");
  }
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& input = tape.activations[l];
    if (param_grads) {
      param_grads->layers[l].weight.noalias() += delta * input.transpose();
      param_grads->layers[l].bias += delta.rowwise().sum();
    }
    if (l == 0 && !input_grads) break;
    Eigen::MatrixXd next = params.layers[l].weight.transpose() * delta;
    if (l > 0) activate_backward(params.arch.activation, input, next);
    delta = std::move(next);
  }
  if (input_grads) *input_grads = std::move(delta);
}

Gradients backward(const MlpParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& upstream) {
  const ForwardTape tape = forward_tape(params, Eigen::MatrixXd(x));
  Gradients g{MlpParams::zeros(params.arch), Eigen::VectorXd()};
  Eigen::MatrixXd input;
  backward(params, tape, Eigen::MatrixXd(upstream), &g.params, &input);
  g.input = input.col(0);
  return g;
}

Adam::Adam(const MlpArch& arch, AdamConfig config)
    : config_(config), m_(MlpParams::zeros(arch)), v_(MlpParams::zeros(arch)) {
  if (!(config_.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  }
}

void Adam::step(MlpParams& params, const MlpParams& grads) {
  if (!params.same_shape(m_) || !grads.same_shape(m_)) {
    throw Error(ErrorCode::DimensionMismatch, "optimizer shape mismatch");
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight, m_.layers[l].weight, v_.layers[l].weight,
           grads.layers[l].weight);
    update(params.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias,
           grads.layers[l].bias);
  }
}

nlohmann::json to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      std::vector<double> row(layer.weight.cols());
      for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) row[k] = layer.weight(i, k);
      w.push_back(row);
    }
    layers.push_back({{"weight", w},
                      {"bias", std::vector<double>(layer.bias.data(),
                                                   layer.bias.data() + layer.bias.size())}});
  }
  return {{"format", "roacolearn.mlp"},
          {"version", kCheckpointVersion},
          {"arch",
           {{"sizes", params.arch.sizes},
            {"activation", to_string(params.arch.activation)}}},
          {"layers", layers}};
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "roacolearn.mlp") {
      throw Error(ErrorCode::Config, "not an MLP checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::Config, "unsupported checkpoint version");
    }
    MlpArch arch;
    arch.sizes = j.at("arch").at("sizes").get<std::vector<int>>();
    arch.activation = parse_activation(j.at("arch").at("activation").get<std::string>());
    MlpParams p = MlpParams::zeros(arch);
    const auto& layers = j.at("layers");
    if (layers.size() != p.layers.size()) {
      throw Error(ErrorCode::Config, "checkpoint layer count mismatch");
    }
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& layer = p.layers[l];
      const auto& w = layers[l].at("weight");
      if (static_cast<Eigen::Index>(w.size()) != layer.weight.rows()) {
        throw Error(ErrorCode::Config, "checkpoint weight shape mismatch");
      }
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
        const auto row = w[i].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != layer.weight.cols()) {
          throw Error(ErrorCode::Config, "checkpoint weight shape mismatch");
        }
        for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) layer.weight(i, k) = row[k];
      }
      const auto bias = layers[l].at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(bias.size()) != layer.bias.size()) {
        throw Error(ErrorCode::Config, "checkpoint bias shape mismatch");
      }
      layer.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), layer.bias.size());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace roa
