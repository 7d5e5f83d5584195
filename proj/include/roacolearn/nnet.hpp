#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "roacolearn/random.hpp"

namespace roa {

enum class Activation { Tanh, Identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

struct MlpArch {
  std::vector<int> sizes;  // input, hidden..., output
  Activation activation = Activation::Tanh;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  int hidden_layers() const { return static_cast<int>(sizes.size()) - 2; }
  void validate() const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// Weights and biases of a multilayer perceptron. Also used as the container
// for parameter gradients and optimizer moments, which share its shape.
struct MlpParams {
  MlpArch arch;
  std::vector<DenseLayer> layers;

  static MlpParams zeros(const MlpArch& arch);

  Eigen::Index parameter_count() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  bool same_shape(const MlpParams& other) const;

  MlpParams& operator+=(const MlpParams& other);
  MlpParams& operator*=(double s);
  void set_zero();
  bool all_finite() const;
};

// Every weight and bias i.i.d. N(0, std^2).
MlpParams init_params(const MlpArch& arch, double std, Rng& rng);

Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x);
// Columns of `inputs` are independent samples.
Eigen::MatrixXd forward(const MlpParams& params, const Eigen::MatrixXd& inputs);

// Activations recorded during a batched forward pass.
struct ForwardTape {
  std::vector<Eigen::MatrixXd> activations;  // layer inputs, then the output

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardTape forward_tape(const MlpParams& params, const Eigen::MatrixXd& inputs);

// Reverse pass for upstream^T * forward(params, inputs) summed over columns.
// Parameter gradients are accumulated into `param_grads` when non-null;
// per-column input gradients are written to `input_grads` when non-null.
void backward(const MlpParams& params, const ForwardTape& tape,
              const Eigen::MatrixXd& upstream, MlpParams* param_grads,
              Eigen::MatrixXd* input_grads);

struct Gradients {
  MlpParams params;
  Eigen::VectorXd input;
};

Gradients backward(const MlpParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& upstream);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam state; step() descends along the supplied loss gradient.
class Adam {
 public:
  Adam(const MlpArch& arch, AdamConfig config = {});

  void step(MlpParams& params, const MlpParams& grads);

  const AdamConfig& config() const { return config_; }
  long steps_taken() const { return steps_; }
  const MlpParams& first_moment() const { return m_; }
  const MlpParams& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  MlpParams m_;
  MlpParams v_;
  long steps_ = 0;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace roa
