#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mds/trace.hpp"

namespace mds {

// Canonical field -> JSON key path (dot-separated). Defaults follow VeReMi.
struct FieldMapping {
  std::map<std::string, std::string> keys{
      {"type", "type"},           {"recv_time", "rcvTime"},     {"send_time", "sendTime"},
      {"sender", "sender"},       {"pseudo", "senderPseudo"},   {"message_id", "messageID"},
      {"pos", "pos"},             {"spd", "spd"},               {"acl", "acl"},
      {"hed", "hed"},             {"attacker_type", "attackerType"}};
  int reception_type = 3;
  int truth_type = 4;
  double tolerance = 1e-6;
  double max_skip_fraction = 0.10;

  const std::string& key(const std::string& canonical) const;
  void validate() const;
};

// Reads mapping.toml: a [fields] table plus optional reception_type,
// truth_type, tolerance and max_skip_fraction.
FieldMapping mapping_from_json(const nlohmann::json& j);

struct IngestDiagnostics {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
  std::map<std::string, std::size_t> skipped;  // reason -> count

  std::size_t skipped_total() const;
  nlohmann::json to_json() const;
};

// Joins every reception entry in log_dir with the ground truth by message id
// and labels it. Exceeding the skip budget throws IngestError.
std::vector<BsmRecord> parse_dataset(const std::filesystem::path& log_dir,
                                     const std::filesystem::path& ground_truth_file,
                                     const FieldMapping& mapping, IngestDiagnostics* diagnostics = nullptr);

// (misbehaving, genuine) fractions over distinct true senders.
std::pair<double, double> class_ratio(const std::vector<BsmRecord>& records);

struct SplitPlan {
  std::vector<std::string> roles;
  std::vector<double> fractions;
  double ratio_tolerance = 0.05;

  void validate() const;
};

struct SplitResult {
  std::vector<std::vector<BsmRecord>> slices;  // plan order
  std::vector<std::string> moved_vehicles;     // vehicles relocated to restore class ratios
};

// Contiguous time slices in plan order, then whole-vehicle swaps wherever a
// slice's vehicle-level class ratio is off by more than the tolerance.
SplitResult split_by_time(const std::vector<BsmRecord>& records, const SplitPlan& plan);

// role -> file manifest written next to the per-role CSVs.
nlohmann::json splits_manifest(const SplitPlan& plan, const SplitResult& split,
                               const std::vector<std::string>& files);

}  // namespace mds
