#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/features.hpp"
#include "mds/nn.hpp"
#include "mds/trace.hpp"

namespace mds {

struct RewardConfig {
  double a = 1.0;  // true positive
  double b = 0.5;  // true negative
  double c = 0.5;  // false positive penalty
  double d = 1.0;  // false negative penalty
  // Adversarial mapping: every reward is negated.
  bool inverted = false;

  void validate() const;
  bool operator==(const RewardConfig&) const = default;
};

double reward(int action, int label, const RewardConfig& config);

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  double decay_fraction = 0.6;  // of the episode budget

  double at(std::size_t episode, std::size_t total_episodes) const;
  bool operator==(const EpsilonSchedule&) const = default;
};

enum class WindowScope { PerSender, Stream };

struct AgentConfig {
  double gamma = 0.995;
  EpsilonSchedule epsilon;
  std::size_t minibatch = 32;
  std::size_t replay_capacity = 50000;
  std::size_t target_sync = 500;
  std::size_t train_every = 1;  // environment steps per gradient step
  RewardConfig reward;
  OptimizerConfig optimizer;
  NetworkSpec network;
  WindowScope scope = WindowScope::PerSender;

  void validate() const;
  bool operator==(const AgentConfig&) const = default;
};

void to_json(nlohmann::json& j, const AgentConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, AgentConfig& c);

struct Experience {
  DetectionState s;
  int a = 0;
  double r = 0.0;
  DetectionState s_next;
  bool terminal = false;
  int label = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50000);

  void push(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t writes() const { return writes_; }
  const Experience& at(std::size_t i) const { return items_[i]; }
  // Uniform with replacement over the current occupancy.
  std::vector<const Experience*> sample(std::size_t n, std::mt19937_64& rng) const;
  void clear();

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::uint64_t writes_ = 0;
  std::vector<Experience> items_;
};

// A trace prepared for one feature pipeline: standardized rows per record and
// the identity key that selects the sliding window each record lands in.
class DetectionEnv {
 public:
  DetectionEnv(std::vector<BsmRecord> records, const FeatureConfig& features, const Standardizer& standardizer,
               std::size_t window, WindowScope scope);

  std::size_t size() const { return records_.size(); }
  std::size_t window() const { return window_; }
  std::size_t dim() const { return dim_; }
  const BsmRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<BsmRecord>& records() const { return records_; }
  std::span<const double> features(std::size_t i) const;

  // Recorded order.
  std::vector<std::size_t> natural_order() const;
  // Records grouped into one-second buckets; inside a bucket senders are
  // shuffled while each sender keeps its own message order.
  std::vector<std::size_t> episode_order(std::mt19937_64& rng) const;

 private:
  friend class EnvCursor;
  std::vector<BsmRecord> records_;
  std::size_t window_, dim_;
  std::vector<double> rows_;
  std::vector<std::size_t> key_;
  std::size_t keys_ = 0;
};

// Walks an order over an environment, maintaining per-key windows.
class EnvCursor {
 public:
  EnvCursor(const DetectionEnv& env, std::vector<std::size_t> order);

  bool done() const { return pos_ >= order_.size(); }
  std::size_t index() const { return order_[pos_]; }
  bool last() const { return pos_ + 1 == order_.size(); }
  int label() const { return env_->record(index()).label; }
  // True observation for the current record (its window with the new row pushed).
  const DetectionState& state() const { return current_; }
  // Commits the action for the current record and moves on.
  void act(int action);

 private:
  void load();
  const DetectionEnv* env_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::vector<DetectionState> windows_;
  std::vector<std::uint8_t> last_action_;
  DetectionState current_;
};

struct EpisodeStats {
  std::size_t episode = 0;
  double cumulative_reward = 0.0;
  double epsilon = 0.0;
  ConfusionCounts counts;
  std::size_t train_steps = 0;
  double mean_loss = 0.0;
  std::string phase;  // empty for plain runs
};

// Lets an observer rewrite what the agent sees. Installed by adversaries.
class ObservationHook {
 public:
  virtual ~ObservationHook() = default;
  virtual DetectionState first(const DetectionState& true_state) = 0;
  // Called once per step with the observed transition start and the true next state.
  virtual DetectionState next(const DetectionState& s, int action, double reward, int label,
                              const DetectionState& true_next) = 0;
};

class DqnAgent;

// Decides where a fresh transition goes and what a gradient step trains on.
// The default (no trainer) is plain DQN on the agent's replay buffer.
class StepTrainer {
 public:
  virtual ~StepTrainer() = default;
  virtual void store(DqnAgent& agent, Experience e) = 0;
  // Returns the loss, or nullopt when there was nothing to train on yet.
  virtual std::optional<double> train(DqnAgent& agent) = 0;
};

int greedy_action(const QValues& q);  // ties go to action 0
int select_action(const NetworkParams& params, const DetectionState& state, double epsilon, std::mt19937_64& rng);
double td_target(double r, const DetectionState& s_next, const NetworkParams& target_params, double gamma,
                 bool terminal);

class DqnAgent {
 public:
  DqnAgent(AgentConfig config, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }
  const NetworkParams& params() const { return online_; }
  const NetworkParams& target_params() const { return target_; }
  void set_params(const NetworkParams& p);
  std::uint64_t step_count() const { return steps_; }
  ReplayBuffer& replay() { return replay_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::mt19937_64& rng() { return rng_; }

  int act(const DetectionState& state, double epsilon);
  QValues q_values(const DetectionState& state);

  // Q_theta(s, a) and the TD target y for each sample, without training.
  void assess(const std::vector<const Experience*>& batch, std::vector<double>& q_sa, std::vector<double>& y);
  // One optimizer step on the mean of 0.5 (Q(s,a) - y)^2. Returns the pre-step loss.
  // q_sa / y, when given, receive the values the update was computed from.
  double train_step(const std::vector<const Experience*>& batch, std::vector<double>* q_sa_out = nullptr,
                    std::vector<double>* y_out = nullptr);

  // Observation hooks; installing a second one is rejected.
  void install_hook(std::shared_ptr<ObservationHook> hook);
  void remove_hook() { hook_.reset(); }
  bool has_hook() const { return hook_ != nullptr; }

  // One training pass over the environment. `order_rng` shuffles the interleaving.
  EpisodeStats run_episode(const DetectionEnv& env, std::size_t episode, std::size_t total_episodes,
                           std::mt19937_64& order_rng, StepTrainer* trainer = nullptr);

 private:
  void encode_batch(const std::vector<const Experience*>& batch, bool next, Eigen::MatrixXd& out) const;

  AgentConfig config_;
  std::mt19937_64 rng_;
  NetworkParams online_, target_;
  Optimizer optimizer_;
  ReplayBuffer replay_;
  std::uint64_t steps_ = 0;
  std::shared_ptr<ObservationHook> hook_;
  BatchNetwork online_net_, target_net_, single_net_;
  Eigen::MatrixXd single_in_, in_s_, in_next_;
  std::vector<double> grad_;
};

// Greedy pass in recorded order: no learning, no buffer writes.
ConfusionCounts evaluate(const NetworkParams& params, const DetectionEnv& env);
// Greedy return under `rewards` over one pass in the given order.
double greedy_return(const NetworkParams& params, const DetectionEnv& env, const std::vector<std::size_t>& order,
                     const RewardConfig& rewards, ConfusionCounts* counts = nullptr);

// A trained network with the feature pipeline it expects.
struct Policy {
  NetworkParams params;
  FeatureConfig features;
  Standardizer standardizer;
  WindowScope scope = WindowScope::PerSender;

  DetectionEnv environment(std::vector<BsmRecord> records) const;
};

std::string policy_checkpoint(const Policy& policy, const std::string& rng_state = "",
                              const nlohmann::json& extra = nullptr);
Policy parse_policy_checkpoint(const std::string& text, nlohmann::json* extra = nullptr);

std::string episodes_csv(const std::vector<EpisodeStats>& stats);

}  // namespace mds
