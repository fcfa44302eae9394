#include "mds/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mds/error.hpp"

namespace mds {

namespace {

using Eigen::MatrixXd;
using ConstMap = Eigen::Map<const MatrixXd>;
using MutMap = Eigen::Map<MatrixXd>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

struct Block {
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

struct Layout {
  // LSTM (only when recurrent_hidden > 0)
  Block wx{}, wh{}, b{};
  std::vector<Block> dense_w, dense_b;
  Block out_w{}, out_b{};
  std::size_t total = 0;

  explicit Layout(const NetworkSpec& s) {
    std::size_t off = 0;
    auto take = [&](std::size_t r, std::size_t c) {
      Block blk{off, r, c};
      off += r * c;
      return blk;
    };
    const std::size_t h = s.recurrent_hidden;
    if (h > 0) {
      wx = take(4 * h, s.feature_dim);
      wh = take(4 * h, h);
      b = take(4 * h, 1);
    }
    std::size_t in = s.head_input();
    for (std::size_t width : s.dense) {
      dense_w.push_back(take(width, in));
      dense_b.push_back(take(width, 1));
      in = width;
    }
    out_w = take(s.outputs, in);
    out_b = take(s.outputs, 1);
    total = off;
  }
};

ConstMap cmap(std::span<const double> w, const Block& b) {
  return ConstMap(w.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
}
MutMap mmap(std::span<double> w, const Block& b) {
  return MutMap(w.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
}
ConstVec cvec(std::span<const double> w, const Block& b) {
  return ConstVec(w.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}
MutVec mvec(std::span<double> w, const Block& b) {
  return MutVec(w.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}

// Vectorized through Eigen's packet exp; std::exp per element dominated the runtime.
template <typename Derived>
void sigmoid_into(const Eigen::MatrixBase<Derived>& z, MatrixXd& out) {
  out = ((-z.array()).exp() + 1.0).inverse().matrix();
}

template <typename Derived>
void tanh_into(const Eigen::MatrixBase<Derived>& z, MatrixXd& out) {
  // tanh(x) = 2 / (1 + exp(-2x)) - 1, clamped so exp cannot overflow.
  out = (2.0 * ((-2.0 * z.array().max(-40.0).min(40.0)).exp() + 1.0).inverse() - 1.0).matrix();
}

double half_sq_loss(const NetworkParams& params, const std::vector<double>& enc, int action, double y) {
  BatchNetwork net(params.spec());
  Eigen::MatrixXd in = Eigen::Map<const Eigen::MatrixXd>(enc.data(), static_cast<Eigen::Index>(enc.size()), 1);
  const auto& q = net.forward(params, in);
  const double e = q(action, 0) - y;
  return 0.5 * e * e;
}

}  // namespace

std::size_t NetworkSpec::head_input() const {
  return recurrent_hidden > 0 ? recurrent_hidden + window : encoding_size();
}

std::size_t NetworkSpec::param_count() const { return Layout(*this).total; }

void NetworkSpec::validate() const {
  if (window == 0 || feature_dim == 0) throw ShapeError("network window and feature_dim must be >= 1");
  if (outputs != 2) throw ShapeError("network output size must be 2");
  for (auto w : dense) {
    if (w == 0) throw ShapeError("dense layer sizes must be >= 1");
  }
}

void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"window", s.window},
       {"feature_dim", s.feature_dim},
       {"recurrent_hidden", s.recurrent_hidden},
       {"dense", s.dense},
       {"outputs", s.outputs}};
}

void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.window = j.at("window").get<std::size_t>();
  s.feature_dim = j.at("feature_dim").get<std::size_t>();
  s.recurrent_hidden = j.at("recurrent_hidden").get<std::size_t>();
  s.dense = j.at("dense").get<std::vector<std::size_t>>();
  s.outputs = j.at("outputs").get<std::size_t>();
  s.validate();
}

NetworkParams::NetworkParams(NetworkSpec spec, std::vector<double> weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  if (weights_.size() != spec_.param_count()) {
    throw ShapeError("weight vector has " + std::to_string(weights_.size()) + " entries, spec needs " +
                     std::to_string(spec_.param_count()));
  }
}

NetworkParams NetworkParams::zeros(const NetworkSpec& spec) {
  return NetworkParams(spec, std::vector<double>(spec.param_count(), 0.0));
}

NetworkParams NetworkParams::random(const NetworkSpec& spec, std::mt19937_64& rng) {
  NetworkParams p = zeros(spec);
  Layout layout(spec);
  auto fill = [&](const Block& blk, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < blk.size(); ++i) p.weights_[blk.offset + i] = u(rng);
  };
  if (spec.recurrent_hidden > 0) {
    const std::size_t fan = spec.feature_dim + spec.recurrent_hidden;
    fill(layout.wx, fan);
    fill(layout.wh, fan);
    fill(layout.b, fan);
  }
  for (std::size_t l = 0; l < layout.dense_w.size(); ++l) {
    fill(layout.dense_w[l], layout.dense_w[l].cols);
    fill(layout.dense_b[l], layout.dense_w[l].cols);
  }
  fill(layout.out_w, layout.out_w.cols);
  fill(layout.out_b, layout.out_w.cols);
  return p;
}

bool NetworkParams::all_finite() const {
  return std::all_of(weights_.begin(), weights_.end(), [](double w) { return std::isfinite(w); });
}

void encode_state(const DetectionState& state, std::span<double> out) {
  if (out.size() != state.encoding_size()) throw ShapeError("encoding buffer has wrong size");
  auto f = state.features();
  std::copy(f.begin(), f.end(), out.begin());
  auto a = state.actions();
  for (std::size_t i = 0; i < a.size(); ++i) out[f.size() + i] = static_cast<double>(a[i]);
}

std::vector<double> encode_state(const DetectionState& state) {
  std::vector<double> out(state.encoding_size());
  encode_state(state, out);
  return out;
}

BatchNetwork::BatchNetwork(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  h_.resize(spec_.window + 1);
  c_.resize(spec_.window + 1);
  gi_.resize(spec_.window);
  gf_.resize(spec_.window);
  gg_.resize(spec_.window);
  go_.resize(spec_.window);
  tc_.resize(spec_.window);
  layer_in_.resize(spec_.dense.size() + 1);
}

const Eigen::MatrixXd& BatchNetwork::forward(const NetworkParams& params, const Eigen::MatrixXd& inputs) {
  if (!(params.spec() == spec_)) throw ShapeError("params do not match network spec");
  if (static_cast<std::size_t>(inputs.rows()) != spec_.encoding_size()) {
    throw ShapeError("input rows " + std::to_string(inputs.rows()) + " != encoding size " +
                     std::to_string(spec_.encoding_size()));
  }
  const Layout layout(spec_);
  const auto w = params.weights();
  batch_ = static_cast<std::size_t>(inputs.cols());
  inputs_ = inputs;
  const auto B = static_cast<Eigen::Index>(batch_);
  const auto n = static_cast<Eigen::Index>(spec_.window);
  const auto d = static_cast<Eigen::Index>(spec_.feature_dim);
  const auto H = static_cast<Eigen::Index>(spec_.recurrent_hidden);

  if (H > 0) {
    const auto wx = cmap(w, layout.wx);
    const auto wh = cmap(w, layout.wh);
    const auto b = cvec(w, layout.b);
    h_[0].setZero(H, B);
    c_[0].setZero(H, B);
    MatrixXd z(4 * H, B);
    for (Eigen::Index t = 0; t < n; ++t) {
      z.noalias() = wx * inputs_.middleRows(t * d, d);
      z.noalias() += wh * h_[t];
      z.colwise() += b;
      auto& gi = gi_[t];
      auto& gf = gf_[t];
      auto& gg = gg_[t];
      auto& go = go_[t];
      sigmoid_into(z.topRows(H), gi);
      sigmoid_into(z.middleRows(H, H), gf);
      tanh_into(z.middleRows(2 * H, H), gg);
      sigmoid_into(z.bottomRows(H), go);
      c_[t + 1] = gf.cwiseProduct(c_[t]) + gi.cwiseProduct(gg);
      tanh_into(c_[t + 1], tc_[t]);
      h_[t + 1] = go.cwiseProduct(tc_[t]);
    }
    layer_in_[0].resize(H + n, B);
    layer_in_[0].topRows(H) = h_[n];
    layer_in_[0].bottomRows(n) = inputs_.bottomRows(n);
  } else {
    layer_in_[0] = inputs_;
  }

  for (std::size_t l = 0; l < spec_.dense.size(); ++l) {
    MatrixXd z = cmap(w, layout.dense_w[l]) * layer_in_[l];
    z.colwise() += cvec(w, layout.dense_b[l]);
    tanh_into(z, layer_in_[l + 1]);
  }
  out_.noalias() = cmap(w, layout.out_w) * layer_in_.back();
  out_.colwise() += cvec(w, layout.out_b);
  if (!out_.allFinite()) throw NumericFailure("non-finite Q-values in forward pass");
  return out_;
}

void BatchNetwork::backward(const NetworkParams& params, const Eigen::MatrixXd& dq,
                            std::span<double> param_grad, Eigen::MatrixXd* input_grad) {
  if (param_grad.size() != params.size()) throw ShapeError("gradient buffer has wrong size");
  if (dq.rows() != static_cast<Eigen::Index>(spec_.outputs) ||
      dq.cols() != static_cast<Eigen::Index>(batch_)) {
    throw ShapeError("output gradient does not match the last forward batch");
  }
  const Layout layout(spec_);
  const auto w = params.weights();
  const auto n = static_cast<Eigen::Index>(spec_.window);
  const auto d = static_cast<Eigen::Index>(spec_.feature_dim);
  const auto H = static_cast<Eigen::Index>(spec_.recurrent_hidden);
  const auto B = static_cast<Eigen::Index>(batch_);

  mmap(param_grad, layout.out_w).noalias() += dq * layer_in_.back().transpose();
  mvec(param_grad, layout.out_b) += dq.rowwise().sum();
  MatrixXd du = cmap(w, layout.out_w).transpose() * dq;

  for (std::size_t l = spec_.dense.size(); l-- > 0;) {
    const MatrixXd& act = layer_in_[l + 1];
    MatrixXd dz = du.cwiseProduct((1.0 - act.array().square()).matrix());
    mmap(param_grad, layout.dense_w[l]).noalias() += dz * layer_in_[l].transpose();
    mvec(param_grad, layout.dense_b[l]) += dz.rowwise().sum();
    du = cmap(w, layout.dense_w[l]).transpose() * dz;
  }

  if (H == 0) {
    if (input_grad) *input_grad = du;
    if (!du.allFinite()) throw NumericFailure("non-finite gradient");
    return;
  }

  if (input_grad) {
    input_grad->resize(static_cast<Eigen::Index>(spec_.encoding_size()), B);
    input_grad->bottomRows(n) = du.bottomRows(n);
  }
  const auto wx = cmap(w, layout.wx);
  const auto wh = cmap(w, layout.wh);
  auto gwx = mmap(param_grad, layout.wx);
  auto gwh = mmap(param_grad, layout.wh);
  auto gb = mvec(param_grad, layout.b);

  MatrixXd dh = du.topRows(H);
  MatrixXd dc = MatrixXd::Zero(H, B);
  MatrixXd dz(4 * H, B);
  for (Eigen::Index t = n; t-- > 0;) {
    const auto& gi = gi_[t];
    const auto& gf = gf_[t];
    const auto& gg = gg_[t];
    const auto& go = go_[t];
    const auto& tc = tc_[t];
    dc.array() += dh.array() * go.array() * (1.0 - tc.array().square());
    dz.topRows(H) = (dc.array() * gg.array() * gi.array() * (1.0 - gi.array())).matrix();
    dz.middleRows(H, H) = (dc.array() * c_[t].array() * gf.array() * (1.0 - gf.array())).matrix();
    dz.middleRows(2 * H, H) = (dc.array() * gi.array() * (1.0 - gg.array().square())).matrix();
    dz.bottomRows(H) = (dh.array() * tc.array() * go.array() * (1.0 - go.array())).matrix();
    gwx.noalias() += dz * inputs_.middleRows(t * d, d).transpose();
    gwh.noalias() += dz * h_[t].transpose();
    gb += dz.rowwise().sum();
    if (input_grad) input_grad->middleRows(t * d, d).noalias() = wx.transpose() * dz;
    dh.noalias() = wh.transpose() * dz;
    dc = dc.cwiseProduct(gf);
  }
  if (input_grad && !input_grad->allFinite()) throw NumericFailure("non-finite input gradient");
}

QValues forward(const NetworkParams& params, const DetectionState& state) {
  if (!params.all_finite()) throw NumericFailure("non-finite network weights");
  const auto& s = params.spec();
  if (state.window() != s.window || state.dim() != s.feature_dim) {
    throw ShapeError("state shape does not match network spec");
  }
  BatchNetwork net(s);
  auto enc = encode_state(state);
  Eigen::MatrixXd in = Eigen::Map<Eigen::MatrixXd>(enc.data(), static_cast<Eigen::Index>(enc.size()), 1);
  const auto& q = net.forward(params, in);
  return {q(0, 0), q(1, 0)};
}

GradientBundle backward(const NetworkParams& params, const DetectionState& state, int action,
                        double td_target) {
  if (!std::isfinite(td_target)) throw NumericFailure("non-finite TD target");
  if (action != 0 && action != 1) throw ShapeError("action must be 0 or 1");
  const auto& s = params.spec();
  if (state.window() != s.window || state.dim() != s.feature_dim) {
    throw ShapeError("state shape does not match network spec");
  }
  BatchNetwork net(s);
  auto enc = encode_state(state);
  Eigen::MatrixXd in = Eigen::Map<Eigen::MatrixXd>(enc.data(), static_cast<Eigen::Index>(enc.size()), 1);
  const auto& q = net.forward(params, in);
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(2, 1);
  dq(action, 0) = q(action, 0) - td_target;
  GradientBundle g;
  g.params.assign(params.size(), 0.0);
  Eigen::MatrixXd ig;
  net.backward(params, dq, g.params, &ig);
  g.input.assign(ig.data(), ig.data() + ig.size());
  return g;
}

double compare_gradients(const NetworkParams& params, const DetectionState& state, int action,
                         double td_target, double step, const GradientBundle& analytic) {
  if (!(step > 0.0)) throw ShapeError("finite-difference step must be positive");
  constexpr double kFloor = 1e-6;
  double worst = 0.0;
  auto rel = [&](double a, double num) { return std::abs(a - num) / std::max(std::abs(num), kFloor); };

  const auto enc = encode_state(state);
  NetworkParams probe = params;
  auto pw = probe.weights();
  for (std::size_t i = 0; i < pw.size(); ++i) {
    const double orig = pw[i];
    pw[i] = orig + step;
    const double lp = half_sq_loss(probe, enc, action, td_target);
    pw[i] = orig - step;
    const double lm = half_sq_loss(probe, enc, action, td_target);
    pw[i] = orig;
    worst = std::max(worst, rel(analytic.params.at(i), (lp - lm) / (2.0 * step)));
  }
  auto x = enc;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double lp = half_sq_loss(params, x, action, td_target);
    x[i] = orig - step;
    const double lm = half_sq_loss(params, x, action, td_target);
    x[i] = orig;
    worst = std::max(worst, rel(analytic.input.at(i), (lp - lm) / (2.0 * step)));
  }
  return worst;
}

double grad_check(const NetworkParams& params, const DetectionState& state, int action,
                  double td_target, double step) {
  return compare_gradients(params, state, action, td_target, step,
                           backward(params, state, action, td_target));
}

double clip_grad_norm(std::span<double> g, double max_norm) {
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericFailure("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& v : g) v *= s;
  }
  return norm;
}

Optimizer::Optimizer(OptimizerConfig config, std::size_t param_count) : config_(config) {
  if (config_.kind == OptimizerKind::Adam) {
    m_.assign(param_count, 0.0);
    v_.assign(param_count, 0.0);
  }
}

void Optimizer::step(NetworkParams& params, std::span<double> grad) {
  clip_grad_norm(grad, config_.clip_norm);
  auto w = params.weights();
  if (grad.size() != w.size()) throw ShapeError("gradient size does not match params");
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.learning_rate * grad[i];
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
    w[i] -= config_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
  }
}

std::string checkpoint_json(const NetworkParams& params, const std::string& rng_state,
                            const nlohmann::json& extra) {
  nlohmann::json head = {{"format", "mds-checkpoint"}, {"version", 1}, {"spec", params.spec()},
                         {"rng_state", rng_state}};
  if (!extra.is_null()) head["extra"] = extra;
  std::string text = head.dump();
  text.pop_back();  // reopen the object to append the weight array
  text += ",\"weights\":[";
  char buf[40];
  bool first = true;
  for (double v : params.weights()) {
    if (!first) text += ',';
    first = false;
    std::snprintf(buf, sizeof buf, "%.17g", v);
    text += buf;
  }
  text += "]}";
  return text;
}

Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint", std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "mds-checkpoint" || j.value("version", 0) != 1) {
    throw Error("checkpoint", "unsupported checkpoint format/version");
  }
  Checkpoint c;
  c.params = NetworkParams(j.at("spec").get<NetworkSpec>(), j.at("weights").get<std::vector<double>>());
  c.rng_state = j.value("rng_state", "");
  if (j.contains("extra")) c.extra = j.at("extra");
  return c;
}

}  // namespace mds
