#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/adversary.hpp"
#include "mds/agent.hpp"
#include "mds/synthgen.hpp"
#include "mds/transfer.hpp"

namespace mds {

struct MetricsRow {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  // Undefined ratios (no predicted / no actual positives) are reported as 0 with the flag cleared.
  bool precision_defined = true;
  bool recall_defined = true;
  ConfusionCounts counts;
};

MetricsRow metrics(const ConfusionCounts& counts);
nlohmann::json metrics_json(const MetricsRow& row);

enum class Scenario { SC1, SC2, SC3 };
enum class AdversaryKind { None, Flip, Induction };

std::string_view to_string(Scenario s);
std::optional<Scenario> scenario_from_string(std::string_view s);
std::string_view to_string(AdversaryKind k);
std::optional<AdversaryKind> adversary_from_string(std::string_view s);

// One transfer run: the roster is two genuine sources plus a third whose
// training is poisoned by `malicious` (None keeps it genuine).
struct TransferVariant {
  AdversaryKind malicious = AdversaryKind::Flip;
  double threshold = 0.5;

  std::string name() const;  // e.g. "flip@0.5"
  static TransferVariant parse(const std::string& text);
  bool operator==(const TransferVariant&) const = default;
};

// Where one role's records come from: a CSV trace when `trace` is set, else synthesis.
struct DataSource {
  GenConfig gen;
  std::optional<std::filesystem::path> trace;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::SC1;
  std::uint64_t seed = 1;

  DataSource sources;  // split by time into one slice per source
  DataSource target;   // split into training and probe slices
  DataSource test;
  double probe_fraction = 0.2;
  double split_tolerance = 0.05;

  FeatureConfig source_features;
  FeatureConfig target_features;
  AgentConfig agent;  // feature_dim is set per role from the layouts
  std::size_t source_count = 3;
  std::size_t source_episodes = 30;
  std::size_t target_episodes = 60;

  TransferConfig transfer;
  FlipConfig flip;
  InductionConfig induction;
  std::vector<TransferVariant> variants;
  bool concurrent_sources = true;

  void validate() const;
  AgentConfig agent_for(const FeatureConfig& features) const;
  static ScenarioConfig preset(Scenario s);
};

// Starts from the preset of the scenario named in `j` and overrides what is present.
ScenarioConfig scenario_from_json(const nlohmann::json& j);
ScenarioConfig load_scenario_config(const std::filesystem::path& path);
nlohmann::json scenario_to_json(const ScenarioConfig& c);

// Seeds for the independent pieces of a run, derived from the global seed and a tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

struct ScenarioData {
  std::vector<std::vector<BsmRecord>> sources;
  std::vector<BsmRecord> target_train;
  std::vector<BsmRecord> target_probe;
  std::vector<BsmRecord> test;
  nlohmann::json splits;
};

ScenarioData prepare_data(const ScenarioConfig& config);

struct TrainedSource {
  std::string name;
  std::size_t slot = 0;
  AdversaryKind adversary = AdversaryKind::None;
  Policy policy;
  std::vector<BsmRecord> records;  // as the source saw them (flipped labels included)
  std::vector<EpisodeStats> history;
  nlohmann::json manifest;         // attack manifest; null for genuine sources
};

// Trains the detector of source `slot` on `records`, poisoned as requested.
TrainedSource train_source(const ScenarioConfig& config, std::size_t slot, const std::vector<BsmRecord>& records,
                           AdversaryKind adversary);

double final_fraction_mean(const std::vector<EpisodeStats>& history, double fraction);

struct RunResult {
  std::string name;
  std::optional<TransferVariant> variant;  // unset for the baseline
  std::optional<TrustReport> trust;
  TransferRun run;
  MetricsRow test;
};

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<TrainedSource> sources;
  std::map<std::string, double> probe_returns;
  RunResult baseline;
  std::vector<RunResult> variants;
  nlohmann::json splits;
};

// Full pipeline. When `out_dir` is given, artifacts are written as each stage
// finishes, so a failure leaves what was already produced.
ScenarioResult run_scenario(const ScenarioConfig& config,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// 1-based episode at which `run` first reaches `best`, if ever.
std::optional<std::size_t> episodes_to_reach(const std::vector<EpisodeStats>& run, double best);
double best_return(const std::vector<EpisodeStats>& run);

inline constexpr int kSummaryVersion = 1;
// Stable, versioned, free of timing data.
nlohmann::json summary_json(const ScenarioResult& result);

struct Report {
  std::string text;        // human-readable tables
  std::string curves_csv;  // episode, one cumulative-reward column per run
  std::string metrics_csv; // Table III shape
  std::string speedup_csv; // Table II shape
};

// Throws Error("harness") listing every missing field of an incomplete summary.
Report report(const nlohmann::json& summary);

void write_artifacts(const ScenarioResult& result, const std::filesystem::path& out_dir);

// Exit code for a failure raised at `stage`.
int exit_code_for_stage(const std::string& stage);

}  // namespace mds
