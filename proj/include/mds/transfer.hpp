#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/agent.hpp"

namespace mds {

struct TransferConfig {
  std::size_t probe_episodes = 10;        // N_e
  double trust_threshold = 0.8;           // T_th
  std::size_t buffer_capacity = 50000;    // experience buffer S~
  double selection_fraction = 0.4;        // share of target episodes using experience selection
  double own_sample_fraction = 0.25;      // target's own share of each S~ refill
  std::uint64_t rng_seed = 1;

  void validate() const;
  std::size_t selection_episodes(std::size_t total_episodes) const;
};

void to_json(nlohmann::json& j, const TransferConfig& c);
void from_json(const nlohmann::json& j, TransferConfig& c);

// Sum over N_e greedy passes of the policy on the target's probe records,
// scored with the target's reward constants. Each pass reshuffles the interleaving.
double probe_return(const Policy& source, const std::vector<BsmRecord>& probe_records, std::size_t episodes,
                    const RewardConfig& target_rewards, std::uint64_t seed);

struct TrustEntry {
  std::string source;
  double raw_return = 0.0;
  double scaled = 0.0;
  double trust = 0.0;
  std::size_t rank = 0;  // 1 = most trusted
  bool selected = false;
};

struct TrustReport {
  std::vector<TrustEntry> entries;  // input order
  double threshold = 0.0;
  std::vector<std::size_t> selected_indices() const;
};

TrustReport rank_sources(const std::vector<double>& returns, double threshold,
                         const std::vector<std::string>& names = {});
nlohmann::json trust_report_json(const TrustReport& report, const nlohmann::json& seeds = nullptr);

// Trust-proportional shares of `buffer_size`, largest remainder so the counts sum exactly.
std::vector<std::size_t> sample_allocation(const std::vector<double>& trusts, std::size_t buffer_size,
                                           std::vector<double>* eta = nullptr);

// How the target sees the world: its pipeline and reward constants.
struct TargetView {
  FeatureConfig features;
  Standardizer standardizer;
  std::size_t window = 8;
  WindowScope scope = WindowScope::PerSender;
  RewardConfig rewards;
  double gamma = 0.995;
};

struct CollectedSamples {
  std::vector<Experience> experiences;
  std::size_t shortfall = 0;
};

// Runs the source's greedy policy over its own records (its own pipeline picks
// the actions) and records the transitions in the target's feature layout with
// rewards recomputed by the target's constants against the records' labels.
CollectedSamples collect_source_samples(const Policy& source, const std::vector<BsmRecord>& source_records,
                                        std::size_t count, const TargetView& target, std::mt19937_64& rng);

struct SelectionOutcome {
  std::vector<std::size_t> kept;       // positions within the batch
  std::vector<std::size_t> discarded;
  std::vector<double> q_sa, y;
};

// Keeps a transition iff Q_theta(s, a) >= y, y from the agent's target network.
SelectionOutcome experience_selection(DqnAgent& agent, const std::vector<const Experience*>& batch);

struct SourceFeed {
  std::string name;
  Policy policy;
  std::vector<BsmRecord> records;
  double trust = 1.0;
};

struct SelectionAudit {
  std::uint64_t minibatches = 0;      // minibatches actually trained on
  std::uint64_t samples_trained = 0;
  std::uint64_t samples_discarded = 0;
  std::uint64_t violations = 0;       // kept samples found with Q < y right before the update
  std::uint64_t source_samples = 0;
  std::uint64_t source_shortfall = 0;
};

struct TransferRun {
  std::vector<EpisodeStats> episodes;
  SelectionAudit audit;
  NetworkParams params;
};

// Selection phase (S~ refilled each episode from the selected sources plus the
// target's own transitions, minibatches filtered by experience_selection), then
// plain DQN on the target's replay buffer. With no sources this is exactly the
// tabula rasa run.
TransferRun train_target(DqnAgent& agent, const DetectionEnv& target_env, const std::vector<SourceFeed>& sources,
                         const TargetView& view, const TransferConfig& config, std::size_t episodes,
                         std::mt19937_64& order_rng);

std::string transfer_run_csv(const TransferRun& run);

}  // namespace mds
