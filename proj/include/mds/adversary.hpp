#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/agent.hpp"

namespace mds {

struct FlipConfig {
  double zeta = 0.05;
  std::uint64_t rng_seed = 1;
  void validate() const;
};

struct FlipResult {
  std::vector<BsmRecord> records;
  std::vector<std::string> flipped_vehicles;  // sorted
  std::size_t flipped_records = 0;
};

// Relabels every record of ceil(zeta * M) uniformly chosen misbehaving vehicles
// as genuine. attack_type is left intact for bookkeeping.
FlipResult flip_labels(const std::vector<BsmRecord>& records, const FlipConfig& config);

struct InductionConfig {
  double epsilon_fgsm = 0.05;      // in standardized feature units
  double replica_fraction = 0.1;   // share of the victim's records used for the adversarial policy
  std::size_t policy_episodes = 20;
  std::uint64_t rng_seed = 1;
  void validate() const;
};

struct AdversarialPolicy {
  NetworkParams params;
  std::size_t records_used = 0;
  std::vector<EpisodeStats> history;
};

// Trains a DQN exactly like a detector but with every reward negated, on the
// first floor(fraction * N) records of the victim's trace.
AdversarialPolicy build_adversarial_policy(const std::vector<BsmRecord>& victim_records, const Policy& pipeline,
                                           const InductionConfig& induction, AgentConfig agent);

// delta = -eps * sign(grad_x J) with J = 0.5 * |Q(s) - t|^2 and t the one-hot of
// a_adv scaled by max|Q(s)|: one signed step that moves Q(s) toward preferring
// a_adv. Only feature slots are perturbed; sign(0) = 0. Result has encoding size.
std::vector<double> craft_perturbation(const NetworkParams& replica, const DetectionState& s, int a_adv,
                                       double epsilon);
DetectionState apply_perturbation(const DetectionState& s, const std::vector<double>& delta);

struct InductionStats {
  std::size_t perturbed_states = 0;
  std::size_t adversarial_ones = 0;  // how often pi_adv asked for action 1
  double max_abs_delta = 0.0;
  double mean_abs_delta = 0.0;
  std::size_t replica_updates = 0;
};

// Observation hook that poisons a victim's training with FGSM perturbations
// crafted on replica networks, which themselves learn from what the victim sees.
class PolicyInduction : public ObservationHook {
 public:
  PolicyInduction(NetworkParams adversarial_policy, AgentConfig replica_config, const InductionConfig& config);

  DetectionState first(const DetectionState& true_state) override;
  DetectionState next(const DetectionState& s, int action, double reward, int label,
                      const DetectionState& true_next) override;

  const InductionStats& stats() const { return stats_; }
  const DqnAgent& replicas() const { return replicas_; }
  // The last perturbation injected (encoding size).
  const std::vector<double>& last_delta() const { return last_delta_; }

 private:
  DetectionState perturb(const DetectionState& true_state);

  NetworkParams pi_adv_;
  DqnAgent replicas_;  // online = Q', target = the replica target network
  InductionConfig config_;
  InductionStats stats_;
  std::vector<double> last_delta_;
  double delta_sum_ = 0.0;
  std::size_t steps_ = 0;
};

nlohmann::json flip_manifest(const FlipConfig& config, const FlipResult& result);
nlohmann::json induction_manifest(const InductionConfig& config, const AdversarialPolicy& policy,
                                  const InductionStats& stats);

}  // namespace mds
