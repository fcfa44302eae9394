#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mds/trace.hpp"

namespace mds {

struct GenConfig {
  std::size_t n_vehicles = 60;
  double misbehaving_fraction = 0.3;
  double duration = 120.0;
  double genuine_bsm_period = 1.0;
  double dos_period = 0.1;
  // Assigned round-robin to the misbehaving vehicles.
  std::vector<AttackType> attack_types{AttackType::RandomPosition};

  Vec3 constant_pos_offset{50.0, 50.0, 0.0};
  double random_pos_offset = 100.0;  // uniform in [-r, r] per planar axis
  Vec3 constant_spd_offset{5.0, 5.0, 0.0};
  double random_spd_offset = 10.0;

  double road_half_extent = 250.0;   // genuine motion stays in this square
  double sim_half_extent = 1500.0;   // box for random / constant positions
  double min_speed = 5.0;
  double max_speed = 30.0;
  double speed_box = 40.0;           // random speeds per planar axis
  double max_accel = 3.0;
  double accel_change_prob = 0.2;    // per simulation tick
  double min_latency = 0.0005;
  double max_latency = 0.002;

  std::uint64_t rng_seed = 1;

  // Throws ConfigError when infeasible.
  void validate() const;
  std::size_t misbehaving_count() const;
  bool uses_dos() const;
  bool operator==(const GenConfig&) const = default;
};

void to_json(nlohmann::json& j, const GenConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, GenConfig& c);

struct GeneratedTrace {
  std::vector<BsmRecord> records;  // sorted by recv_time
  std::vector<BsmRecord> truth;    // same order; what the sender really did
  std::vector<std::uint64_t> message_ids;
};

GeneratedTrace generate(const GenConfig& config);

// Uniformly picks a message among the first `available` of `pool` and re-stamps it.
// The kinematics are copied verbatim; identity and times come from the caller.
BsmRecord replay_pool(const std::vector<BsmRecord>& pool, std::size_t available, std::mt19937_64& rng,
                      double send_time, double recv_time, const std::string& sender,
                      const std::string& pseudo, AttackType type);
inline BsmRecord replay_pool(const std::vector<BsmRecord>& pool, std::mt19937_64& rng, double send_time,
                             double recv_time, const std::string& sender, const std::string& pseudo,
                             AttackType type) {
  return replay_pool(pool, pool.size(), rng, send_time, recv_time, sender, pseudo, type);
}

// Counts per label / attack type and vehicles per class.
nlohmann::json generation_manifest(const GenConfig& config, const GeneratedTrace& trace);

// Writes VeReMi-style newline-delimited JSON logs (one file per sender, type 3
// reception entries) and a ground-truth file (type 4 entries with attackerType).
void export_veremi(const GeneratedTrace& trace, const std::filesystem::path& log_dir,
                   const std::filesystem::path& ground_truth_file);

// VeReMi-extension attacker codes.
int veremi_attacker_code(AttackType t);

}  // namespace mds
