#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/trace.hpp"

namespace mds {

// Q-network shape. The n x d feature window runs through an LSTM one slot at a
// time; the n action bits are concatenated onto the last hidden state and the
// result goes through tanh dense layers into a linear output of size 2.
// recurrent_hidden == 0 drops the LSTM and feeds the flat encoding to the dense stack.
struct NetworkSpec {
  std::size_t window = 8;
  std::size_t feature_dim = 4;
  std::size_t recurrent_hidden = 32;
  std::vector<std::size_t> dense{32};
  std::size_t outputs = 2;

  std::size_t encoding_size() const { return window * feature_dim + window; }
  std::size_t head_input() const;
  std::size_t param_count() const;
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& s);
void from_json(const nlohmann::json& j, NetworkSpec& s);

class NetworkParams {
 public:
  NetworkParams() = default;
  NetworkParams(NetworkSpec spec, std::vector<double> weights);

  static NetworkParams zeros(const NetworkSpec& spec);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per weight matrix; biases likewise.
  static NetworkParams random(const NetworkSpec& spec, std::mt19937_64& rng);

  const NetworkSpec& spec() const { return spec_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  std::size_t size() const { return weights_.size(); }

  NetworkParams clone() const { return *this; }
  bool all_finite() const;
  bool operator==(const NetworkParams&) const = default;

 private:
  NetworkSpec spec_;
  std::vector<double> weights_;
};

struct GradientBundle {
  std::vector<double> params;
  std::vector<double> input;
};

using QValues = std::array<double, 2>;

// Flattens a state into the network encoding (feature slots, then action bits).
void encode_state(const DetectionState& state, std::span<double> out);
std::vector<double> encode_state(const DetectionState& state);

// Batched forward/backward with cached activations. Columns are samples.
class BatchNetwork {
 public:
  explicit BatchNetwork(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }

  // inputs: encoding_size x B. Returns outputs x B; activations are cached for backward().
  const Eigen::MatrixXd& forward(const NetworkParams& params, const Eigen::MatrixXd& inputs);

  // dq: outputs x B gradient of the loss w.r.t. the last forward's outputs.
  // Adds the parameter gradient into param_grad; writes input gradients when requested.
  void backward(const NetworkParams& params, const Eigen::MatrixXd& dq, std::span<double> param_grad,
                Eigen::MatrixXd* input_grad = nullptr);

 private:
  NetworkSpec spec_;
  std::size_t batch_ = 0;
  Eigen::MatrixXd inputs_;
  std::vector<Eigen::MatrixXd> h_, c_, gi_, gf_, gg_, go_, tc_;
  std::vector<Eigen::MatrixXd> layer_in_;  // input of each dense layer and of the output layer
  Eigen::MatrixXd out_;
};

QValues forward(const NetworkParams& params, const DetectionState& state);

// Gradient of 0.5 * (Q(s, action) - td_target)^2 w.r.t. params and the state encoding.
GradientBundle backward(const NetworkParams& params, const DetectionState& state, int action,
                        double td_target);

// Worst relative error of `analytic` against central differences of the same loss,
// over every parameter and every encoding slot. Relative to the numeric value with
// a 1e-6 floor so vanishing gradients do not dominate.
double compare_gradients(const NetworkParams& params, const DetectionState& state, int action,
                         double td_target, double step, const GradientBundle& analytic);
double grad_check(const NetworkParams& params, const DetectionState& state, int action,
                  double td_target, double step);

// Rescales g in place so its L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<double> g, double max_norm);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.001;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, std::size_t param_count);
  // Clips `grad` and applies one update to params.
  void step(NetworkParams& params, std::span<double> grad);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// Versioned JSON checkpoint: spec, weights at 17 significant digits, optional rng state.
std::string checkpoint_json(const NetworkParams& params, const std::string& rng_state = "",
                            const nlohmann::json& extra = nullptr);
struct Checkpoint {
  NetworkParams params;
  std::string rng_state;
  nlohmann::json extra;
};
Checkpoint parse_checkpoint(const std::string& text);

}  // namespace mds
