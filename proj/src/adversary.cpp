#include "mds/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mds/error.hpp"

namespace mds {

void FlipConfig::validate() const {
  if (!(zeta > 0 && zeta <= 1)) throw ConfigError("zeta must lie in (0, 1]");
}

FlipResult flip_labels(const std::vector<BsmRecord>& records, const FlipConfig& config) {
  config.validate();
  std::set<std::string> bad;
  for (const auto& r : records) {
    if (r.label == 1) bad.insert(r.true_sender_id);
  }
  if (bad.empty()) throw Error("adversary", "label flipping needs at least one misbehaving vehicle");
  std::vector<std::string> ids(bad.begin(), bad.end());
  const auto m = static_cast<double>(ids.size());
  // The epsilon keeps products like 0.05 * 100 from rounding up to 6.
  auto k = static_cast<std::size_t>(std::ceil(config.zeta * m - 1e-9));
  k = std::clamp<std::size_t>(k, 1, ids.size());
  std::mt19937_64 rng(config.rng_seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  const std::set<std::string> chosen(ids.begin(), ids.end());

  FlipResult out;
  out.records = records;
  for (auto& r : out.records) {
    if (r.label == 1 && chosen.count(r.true_sender_id)) {
      r.label = 0;
      ++out.flipped_records;
    }
  }
  out.flipped_vehicles = std::move(ids);
  return out;
}

void InductionConfig::validate() const {
  if (!(epsilon_fgsm > 0)) throw ConfigError("epsilon_fgsm must be positive");
  if (!(replica_fraction > 0 && replica_fraction < 1)) throw ConfigError("replica_fraction must lie in (0, 1)");
  if (policy_episodes == 0) throw ConfigError("policy_episodes must be >= 1");
}

AdversarialPolicy build_adversarial_policy(const std::vector<BsmRecord>& victim_records, const Policy& pipeline,
                                           const InductionConfig& induction, AgentConfig agent) {
  induction.validate();
  if (victim_records.empty()) throw Error("adversary", "victim slice is empty");
  const auto n = static_cast<std::size_t>(std::floor(induction.replica_fraction * static_cast<double>(victim_records.size())));
  if (n == 0) throw Error("adversary", "replica fraction selects no records");
  std::vector<BsmRecord> slice(victim_records.begin(), victim_records.begin() + static_cast<std::ptrdiff_t>(n));
  agent.reward.inverted = true;
  DetectionEnv env = pipeline.environment(std::move(slice));
  DqnAgent adv(agent, induction.rng_seed);
  std::mt19937_64 order_rng(induction.rng_seed ^ 0x5bd1e995ULL);
  AdversarialPolicy out;
  for (std::size_t e = 0; e < induction.policy_episodes; ++e) {
    out.history.push_back(adv.run_episode(env, e, induction.policy_episodes, order_rng));
  }
  out.params = adv.params();
  out.records_used = n;
  return out;
}

std::vector<double> craft_perturbation(const NetworkParams& replica, const DetectionState& s, int a_adv,
                                       double epsilon) {
  if (a_adv != 0 && a_adv != 1) throw ShapeError("adversarial action must be 0 or 1");
  const auto& spec = replica.spec();
  if (s.window() != spec.window || s.dim() != spec.feature_dim) throw ShapeError("state does not match replica");
  BatchNetwork net(spec);
  auto enc = encode_state(s);
  Eigen::MatrixXd in = Eigen::Map<Eigen::MatrixXd>(enc.data(), static_cast<Eigen::Index>(enc.size()), 1);
  const Eigen::MatrixXd q = net.forward(replica, in);
  const double scale = std::max(std::abs(q(0, 0)), std::abs(q(1, 0)));
  Eigen::MatrixXd dq(2, 1);
  dq(0, 0) = q(0, 0) - (a_adv == 0 ? scale : 0.0);
  dq(1, 0) = q(1, 0) - (a_adv == 1 ? scale : 0.0);
  std::vector<double> unused(replica.size(), 0.0);
  Eigen::MatrixXd grad;
  net.backward(replica, dq, unused, &grad);
  if (!grad.allFinite()) throw NumericFailure("non-finite input gradient while crafting");
  std::vector<double> delta(enc.size(), 0.0);
  const std::size_t feature_slots = s.window() * s.dim();
  for (std::size_t i = 0; i < feature_slots; ++i) {
    const double g = grad(static_cast<Eigen::Index>(i), 0);
    delta[i] = g > 0 ? -epsilon : (g < 0 ? epsilon : 0.0);
  }
  return delta;
}

DetectionState apply_perturbation(const DetectionState& s, const std::vector<double>& delta) {
  if (delta.size() != s.encoding_size()) throw ShapeError("perturbation has the wrong size");
  DetectionState out = s;
  auto f = out.features();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += delta[i];
  return out;
}

PolicyInduction::PolicyInduction(NetworkParams adversarial_policy, AgentConfig replica_config,
                                 const InductionConfig& config)
    : pi_adv_(std::move(adversarial_policy)),
      replicas_((config.validate(), replica_config), config.rng_seed ^ 0x9e3779b97f4a7c15ULL),
      config_(config) {
  if (!(pi_adv_.spec() == replica_config.network)) throw ShapeError("adversarial policy does not match the victim");
}

DetectionState PolicyInduction::perturb(const DetectionState& true_state) {
  const int a_adv = greedy_action(forward(pi_adv_, true_state));
  last_delta_ = craft_perturbation(replicas_.target_params(), true_state, a_adv, config_.epsilon_fgsm);
  double m = 0;
  for (double v : last_delta_) m = std::max(m, std::abs(v));
  ++stats_.perturbed_states;
  stats_.adversarial_ones += static_cast<std::size_t>(a_adv);
  stats_.max_abs_delta = std::max(stats_.max_abs_delta, m);
  delta_sum_ += m;
  stats_.mean_abs_delta = delta_sum_ / static_cast<double>(stats_.perturbed_states);
  return apply_perturbation(true_state, last_delta_);
}

DetectionState PolicyInduction::first(const DetectionState& true_state) { return perturb(true_state); }

DetectionState PolicyInduction::next(const DetectionState& s, int action, double reward_value, int label,
                                     const DetectionState& true_next) {
  DetectionState observed = perturb(true_next);
  Experience e;
  e.s = s;
  e.a = action;
  e.r = reward_value;
  e.s_next = observed;
  e.label = label;
  replicas_.replay().push(std::move(e));
  ++steps_;
  const auto& cfg = replicas_.config();
  if (replicas_.replay().size() >= cfg.minibatch && steps_ % cfg.train_every == 0) {
    replicas_.train_step(replicas_.replay().sample(cfg.minibatch, replicas_.rng()));
    ++stats_.replica_updates;
  }
  return observed;
}

nlohmann::json flip_manifest(const FlipConfig& config, const FlipResult& result) {
  return {{"attack", "label-flip"},
          {"zeta", config.zeta},
          {"rng_seed", config.rng_seed},
          {"flipped_vehicles", result.flipped_vehicles},
          {"flipped_records", result.flipped_records}};
}

nlohmann::json induction_manifest(const InductionConfig& config, const AdversarialPolicy& policy,
                                  const InductionStats& stats) {
  return {{"attack", "policy-induction"},
          {"epsilon_fgsm", config.epsilon_fgsm},
          {"replica_fraction", config.replica_fraction},
          {"policy_records", policy.records_used},
          {"policy_episodes", config.policy_episodes},
          {"rng_seed", config.rng_seed},
          {"perturbed_states", stats.perturbed_states},
          {"adversarial_action_one_share",
           stats.perturbed_states ? static_cast<double>(stats.adversarial_ones) / static_cast<double>(stats.perturbed_states)
                                  : 0.0},
          {"max_abs_delta", stats.max_abs_delta},
          {"mean_abs_delta", stats.mean_abs_delta},
          {"replica_updates", stats.replica_updates}};
}

}  // namespace mds
