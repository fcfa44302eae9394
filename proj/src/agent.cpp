#include "mds/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "mds/error.hpp"

namespace mds {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const char* scope_name(WindowScope s) { return s == WindowScope::PerSender ? "per_sender" : "stream"; }

WindowScope scope_from(const std::string& s) {
  if (s == "per_sender") return WindowScope::PerSender;
  if (s == "stream") return WindowScope::Stream;
  throw ConfigError("window_scope must be per_sender or stream");
}

void copy_state_into(const DetectionState& s, double* col) {
  auto f = s.features();
  std::copy(f.begin(), f.end(), col);
  auto a = s.actions();
  for (std::size_t i = 0; i < a.size(); ++i) col[f.size() + i] = a[i];
}

}  // namespace

void RewardConfig::validate() const {
  if (!(a > b && b > 0 && d > c && c > 0)) throw ConfigError("reward constants need a > b > 0 and d > c > 0");
}

double reward(int action, int label, const RewardConfig& cfg) {
  double r;
  if (action == 1) r = label == 1 ? cfg.a : -cfg.c;
  else r = label == 1 ? -cfg.d : cfg.b;
  return cfg.inverted ? -r : r;
}

double EpsilonSchedule::at(std::size_t episode, std::size_t total_episodes) const {
  const double horizon = decay_fraction * static_cast<double>(total_episodes);
  const double e = static_cast<double>(episode);
  if (horizon <= 0 || e >= horizon) return end;
  return start + (end - start) * e / horizon;
}

void AgentConfig::validate() const {
  if (!(gamma > 0 && gamma < 1)) throw ConfigError("gamma must lie in (0, 1)");
  reward.validate();
  if (minibatch == 0 || replay_capacity <= minibatch) throw ConfigError("replay capacity must exceed the minibatch");
  if (target_sync == 0 || train_every == 0) throw ConfigError("target_sync and train_every must be >= 1");
  if (!(epsilon.start >= 0 && epsilon.start <= 1 && epsilon.end >= 0 && epsilon.end <= 1)) {
    throw ConfigError("epsilon values must lie in [0, 1]");
  }
  if (!(optimizer.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  network.validate();
}

void to_json(nlohmann::json& j, const AgentConfig& c) {
  j = {{"gamma", c.gamma},
       {"epsilon_start", c.epsilon.start},
       {"epsilon_end", c.epsilon.end},
       {"epsilon_decay_fraction", c.epsilon.decay_fraction},
       {"minibatch", c.minibatch},
       {"replay_capacity", c.replay_capacity},
       {"target_sync", c.target_sync},
       {"train_every", c.train_every},
       {"reward", {{"a", c.reward.a}, {"b", c.reward.b}, {"c", c.reward.c}, {"d", c.reward.d}}},
       {"optimizer",
        {{"kind", c.optimizer.kind == OptimizerKind::Sgd ? "sgd" : "adam"},
         {"learning_rate", c.optimizer.learning_rate},
         {"clip_norm", c.optimizer.clip_norm}}},
       {"network", c.network},
       {"window_scope", scope_name(c.scope)}};
}

void from_json(const nlohmann::json& j, AgentConfig& c) {
  auto get = [&](const nlohmann::json& obj, const char* key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  get(j, "gamma", c.gamma);
  get(j, "epsilon_start", c.epsilon.start);
  get(j, "epsilon_end", c.epsilon.end);
  get(j, "epsilon_decay_fraction", c.epsilon.decay_fraction);
  get(j, "minibatch", c.minibatch);
  get(j, "replay_capacity", c.replay_capacity);
  get(j, "target_sync", c.target_sync);
  get(j, "train_every", c.train_every);
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    get(r, "a", c.reward.a);
    get(r, "b", c.reward.b);
    get(r, "c", c.reward.c);
    get(r, "d", c.reward.d);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.contains("kind")) {
      auto k = o.at("kind").get<std::string>();
      if (k == "sgd") c.optimizer.kind = OptimizerKind::Sgd;
      else if (k == "adam") c.optimizer.kind = OptimizerKind::Adam;
      else throw ConfigError("optimizer kind must be sgd or adam");
    }
    get(o, "learning_rate", c.optimizer.learning_rate);
    get(o, "clip_norm", c.optimizer.clip_norm);
  }
  if (j.contains("network")) {
    const auto& n = j.at("network");
    get(n, "window", c.network.window);
    get(n, "feature_dim", c.network.feature_dim);
    get(n, "recurrent_hidden", c.network.recurrent_hidden);
    get(n, "dense", c.network.dense);
  }
  if (j.contains("window_scope")) c.scope = scope_from(j.at("window_scope").get<std::string>());
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(Experience e) {
  ++writes_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
    return;
  }
  items_[next_] = std::move(e);
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Experience*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (items_.empty()) throw Error("agent", "sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Experience*> out(n);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

void ReplayBuffer::clear() {
  items_.clear();
  next_ = 0;
}

DetectionEnv::DetectionEnv(std::vector<BsmRecord> records, const FeatureConfig& features,
                           const Standardizer& standardizer, std::size_t window, WindowScope scope)
    : records_(std::move(records)), window_(window), dim_(features.layout.dim()) {
  if (records_.empty()) throw Error("agent", "environment trace is empty");
  if (window_ == 0) throw ShapeError("window must be >= 1");
  if (standardizer.dim() != dim_) throw ShapeError("standardizer does not match the feature layout");
  auto rows = extract_features(records_, features);
  rows_.reserve(rows.size() * dim_);
  for (auto& r : rows) {
    standardizer.apply_inplace(r);
    rows_.insert(rows_.end(), r.values.begin(), r.values.end());
  }
  std::unordered_map<std::string, std::size_t> ids;
  key_.resize(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (scope == WindowScope::Stream) {
      key_[i] = 0;
      continue;
    }
    auto [it, fresh] = ids.emplace(records_[i].pseudo_id, ids.size());
    key_[i] = it->second;
  }
  keys_ = scope == WindowScope::Stream ? 1 : ids.size();
}

std::span<const double> DetectionEnv::features(std::size_t i) const {
  return std::span<const double>(rows_).subspan(i * dim_, dim_);
}

std::vector<std::size_t> DetectionEnv::natural_order() const {
  std::vector<std::size_t> order(records_.size());
  std::iota(order.begin(), order.end(), 0);
  return order;
}

std::vector<std::size_t> DetectionEnv::episode_order(std::mt19937_64& rng) const {
  const std::uint64_t salt = rng();
  std::unordered_map<std::string, std::uint64_t> sender_hash;
  struct Key {
    std::int64_t bucket;
    std::uint64_t shuffle;
    std::size_t index;
  };
  std::vector<Key> keys(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, fresh] = sender_hash.emplace(records_[i].true_sender_id, 0);
    if (fresh) it->second = std::hash<std::string>{}(records_[i].true_sender_id);
    const auto bucket = static_cast<std::int64_t>(std::floor(records_[i].recv_time));
    keys[i] = {bucket, mix64(salt ^ mix64(it->second ^ mix64(static_cast<std::uint64_t>(bucket)))), i};
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.bucket != b.bucket) return a.bucket < b.bucket;
    if (a.shuffle != b.shuffle) return a.shuffle < b.shuffle;
    return a.index < b.index;
  });
  std::vector<std::size_t> order(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) order[i] = keys[i].index;
  return order;
}

EnvCursor::EnvCursor(const DetectionEnv& env, std::vector<std::size_t> order)
    : env_(&env), order_(std::move(order)), windows_(env.keys_), last_action_(env.keys_, 0) {
  load();
}

void EnvCursor::load() {
  if (done()) return;
  const std::size_t i = order_[pos_];
  const std::size_t k = env_->key_[i];
  if (windows_[k].window() == 0) windows_[k] = DetectionState(env_->window_, env_->dim_);
  current_ = windows_[k];
  push_state_inplace(current_, env_->features(i), last_action_[k]);
}

void EnvCursor::act(int action) {
  const std::size_t k = env_->key_[order_[pos_]];
  windows_[k] = current_;
  last_action_[k] = static_cast<std::uint8_t>(action);
  ++pos_;
  load();
}

int greedy_action(const QValues& q) { return q[1] > q[0] ? 1 : 0; }

int select_action(const NetworkParams& params, const DetectionState& state, double epsilon, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) return u(rng) < 0.5 ? 0 : 1;
  return greedy_action(forward(params, state));
}

double td_target(double r, const DetectionState& s_next, const NetworkParams& target_params, double gamma,
                 bool terminal) {
  if (terminal) return r;
  auto q = forward(target_params, s_next);
  return r + gamma * std::max(q[0], q[1]);
}

DqnAgent::DqnAgent(AgentConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      rng_(seed),
      replay_(config_.replay_capacity),
      online_net_(config_.network),
      target_net_(config_.network),
      single_net_(config_.network) {
  config_.validate();
  online_ = NetworkParams::random(config_.network, rng_);
  target_ = online_;
  optimizer_ = Optimizer(config_.optimizer, online_.size());
  single_in_.resize(static_cast<Eigen::Index>(config_.network.encoding_size()), 1);
  grad_.assign(online_.size(), 0.0);
}

void DqnAgent::set_params(const NetworkParams& p) {
  if (!(p.spec() == config_.network)) throw ShapeError("params do not match the agent's network");
  online_ = p;
  target_ = p;
}

QValues DqnAgent::q_values(const DetectionState& state) {
  copy_state_into(state, single_in_.data());
  const auto& q = single_net_.forward(online_, single_in_);
  return {q(0, 0), q(1, 0)};
}

int DqnAgent::act(const DetectionState& state, double epsilon) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng_) < epsilon) return u(rng_) < 0.5 ? 0 : 1;
  return greedy_action(q_values(state));
}

void DqnAgent::encode_batch(const std::vector<const Experience*>& batch, bool next, Eigen::MatrixXd& out) const {
  out.resize(static_cast<Eigen::Index>(config_.network.encoding_size()), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    copy_state_into(next ? batch[b]->s_next : batch[b]->s, out.col(static_cast<Eigen::Index>(b)).data());
  }
}

void DqnAgent::assess(const std::vector<const Experience*>& batch, std::vector<double>& q_sa, std::vector<double>& y) {
  encode_batch(batch, false, in_s_);
  encode_batch(batch, true, in_next_);
  const auto& qn = target_net_.forward(target_, in_next_);
  const auto& q = online_net_.forward(online_, in_s_);
  q_sa.resize(batch.size());
  y.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    const auto& e = *batch[b];
    y[b] = e.terminal ? e.r : e.r + config_.gamma * std::max(qn(0, col), qn(1, col));
    q_sa[b] = q(e.a, col);
  }
}

double DqnAgent::train_step(const std::vector<const Experience*>& batch, std::vector<double>* q_sa_out,
                            std::vector<double>* y_out) {
  if (batch.empty()) throw Error("agent", "train_step on an empty minibatch");
  std::vector<double> q_sa, y;
  assess(batch, q_sa, y);  // leaves the online activations cached for backward
  const auto n = static_cast<double>(batch.size());
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(batch.size()));
  double loss = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double e = q_sa[b] - y[b];
    if (!std::isfinite(e)) throw NumericFailure("non-finite TD error");
    loss += 0.5 * e * e;
    dq(batch[b]->a, static_cast<Eigen::Index>(b)) = e / n;
  }
  std::fill(grad_.begin(), grad_.end(), 0.0);
  online_net_.backward(online_, dq, grad_);
  optimizer_.step(online_, grad_);
  if (!online_.all_finite()) throw NumericFailure("training produced non-finite weights");
  ++steps_;
  if (steps_ % config_.target_sync == 0) target_ = online_;
  if (q_sa_out) *q_sa_out = std::move(q_sa);
  if (y_out) *y_out = std::move(y);
  return loss / n;
}

void DqnAgent::install_hook(std::shared_ptr<ObservationHook> hook) {
  if (hook_) throw Error("adversary", "an observation hook is already installed");
  hook_ = std::move(hook);
}

EpisodeStats DqnAgent::run_episode(const DetectionEnv& env, std::size_t episode, std::size_t total_episodes,
                                   std::mt19937_64& order_rng, StepTrainer* trainer) {
  if (env.window() != config_.network.window || env.dim() != config_.network.feature_dim) {
    throw ShapeError("environment does not match the agent's network");
  }
  EpisodeStats stats;
  stats.episode = episode;
  stats.epsilon = config_.epsilon.at(episode, total_episodes);
  EnvCursor cur(env, env.episode_order(order_rng));
  DetectionState s = hook_ ? hook_->first(cur.state()) : cur.state();
  double loss_sum = 0;
  std::size_t step = 0;
  while (!cur.done()) {
    const int label = cur.label();
    const int a = act(s, stats.epsilon);
    const double r = reward(a, label, config_.reward);
    stats.cumulative_reward += r;
    stats.counts.add(a, label);
    const bool terminal = cur.last();
    cur.act(a);
    Experience e;
    e.a = a;
    e.r = r;
    e.label = label;
    e.terminal = terminal;
    if (terminal) {
      e.s_next = s;
    } else {
      e.s_next = hook_ ? hook_->next(s, a, r, label, cur.state()) : cur.state();
    }
    e.s = std::move(s);
    s = e.s_next;
    ++step;
    const bool due = step % config_.train_every == 0;
    if (trainer) {
      trainer->store(*this, std::move(e));
      if (due) {
        if (auto loss = trainer->train(*this)) {
          loss_sum += *loss;
          ++stats.train_steps;
        }
      }
    } else {
      replay_.push(std::move(e));
      if (due && replay_.size() >= config_.minibatch) {
        loss_sum += train_step(replay_.sample(config_.minibatch, rng_));
        ++stats.train_steps;
      }
    }
  }
  stats.mean_loss = stats.train_steps ? loss_sum / static_cast<double>(stats.train_steps) : 0.0;
  return stats;
}

double greedy_return(const NetworkParams& params, const DetectionEnv& env, const std::vector<std::size_t>& order,
                     const RewardConfig& rewards, ConfusionCounts* counts) {
  const auto& spec = params.spec();
  if (env.window() != spec.window || env.dim() != spec.feature_dim) {
    throw ShapeError("environment does not match the policy's network");
  }
  if (!params.all_finite()) throw NumericFailure("non-finite policy weights");
  BatchNetwork net(spec);
  Eigen::MatrixXd in(static_cast<Eigen::Index>(spec.encoding_size()), 1);
  EnvCursor cur(env, order);
  double total = 0;
  ConfusionCounts c;
  while (!cur.done()) {
    copy_state_into(cur.state(), in.data());
    const auto& q = net.forward(params, in);
    const int a = greedy_action({q(0, 0), q(1, 0)});
    total += reward(a, cur.label(), rewards);
    c.add(a, cur.label());
    cur.act(a);
  }
  if (counts) *counts = c;
  return total;
}

ConfusionCounts evaluate(const NetworkParams& params, const DetectionEnv& env) {
  ConfusionCounts c;
  greedy_return(params, env, env.natural_order(), RewardConfig{}, &c);
  return c;
}

DetectionEnv Policy::environment(std::vector<BsmRecord> records) const {
  return DetectionEnv(std::move(records), features, standardizer, params.spec().window, scope);
}

std::string policy_checkpoint(const Policy& policy, const std::string& rng_state, const nlohmann::json& extra) {
  nlohmann::json meta = {{"features", policy.features},
                         {"standardizer", policy.standardizer},
                         {"window_scope", scope_name(policy.scope)}};
  if (!extra.is_null()) meta["info"] = extra;
  return checkpoint_json(policy.params, rng_state, meta);
}

Policy parse_policy_checkpoint(const std::string& text, nlohmann::json* extra) {
  auto c = parse_checkpoint(text);
  if (!c.extra.is_object() || !c.extra.contains("features")) {
    throw Error("checkpoint", "checkpoint carries no feature pipeline");
  }
  Policy p;
  p.params = std::move(c.params);
  p.features = c.extra.at("features").get<FeatureConfig>();
  p.standardizer = c.extra.at("standardizer").get<Standardizer>();
  p.scope = scope_from(c.extra.value("window_scope", "per_sender"));
  if (extra) *extra = c.extra.value("info", nlohmann::json());
  return p;
}

std::string episodes_csv(const std::vector<EpisodeStats>& stats) {
  const bool phased = std::any_of(stats.begin(), stats.end(), [](const EpisodeStats& s) { return !s.phase.empty(); });
  std::ostringstream out;
  out << "episode,cumulative_reward,epsilon,tp,tn,fp,fn" << (phased ? ",phase" : "") << '\n';
  char buf[64];
  for (const auto& s : stats) {
    out << s.episode << ',';
    std::snprintf(buf, sizeof buf, "%.6f", s.cumulative_reward);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6f", s.epsilon);
    out << buf << ',' << s.counts.tp << ',' << s.counts.tn << ',' << s.counts.fp << ',' << s.counts.fn;
    if (phased) out << ',' << s.phase;
    out << '\n';
  }
  return out.str();
}

}  // namespace mds
