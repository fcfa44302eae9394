#include "mds/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <tuple>

#include "mds/error.hpp"
#include "mds/trace_io.hpp"

namespace mds {

namespace {

constexpr double kMicro = 1e6;

double grid6(double v) {
  double r = std::round(v * kMicro) / kMicro;
  return r == 0.0 ? 0.0 : r;
}

Vec3 grid6(const Vec3& v) { return {grid6(v[0]), grid6(v[1]), grid6(v[2])}; }

std::int64_t to_micros(double seconds) { return std::llround(seconds * kMicro); }

Vec3 vec_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

struct Kinematics {
  Vec3 pos, spd, acl, hed;
};

// Piecewise-constant acceleration inside a reflecting square, sampled every tick.
std::vector<Kinematics> simulate_vehicle(const GenConfig& c, std::size_t ticks, double dt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double R = c.road_half_extent;
  double x = (2 * unit(rng) - 1) * R, y = (2 * unit(rng) - 1) * R;
  double angle = unit(rng) * 2 * std::numbers::pi;
  double speed = c.min_speed + unit(rng) * (c.max_speed - c.min_speed);
  double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
  double ax = 0, ay = 0;
  std::vector<Kinematics> out;
  out.reserve(ticks);
  for (std::size_t k = 0; k < ticks; ++k) {
    if (unit(rng) < c.accel_change_prob) {
      double mag = unit(rng) * c.max_accel;
      double dir = unit(rng) * 2 * std::numbers::pi;
      ax = mag * std::cos(dir);
      ay = mag * std::sin(dir);
    }
    double nvx = vx + ax * dt, nvy = vy + ay * dt;
    double ns = std::hypot(nvx, nvy);
    double clamped = std::clamp(ns, c.min_speed, c.max_speed);
    if (ns > 0 && clamped != ns) {
      nvx *= clamped / ns;
      nvy *= clamped / ns;
    }
    const double eax = (nvx - vx) / dt, eay = (nvy - vy) / dt;
    vx = nvx;
    vy = nvy;
    x += vx * dt;
    y += vy * dt;
    if (x > R || x < -R) {
      x = (x > R ? 2 * R : -2 * R) - x;
      vx = -vx;
      ax = -ax;
    }
    if (y > R || y < -R) {
      y = (y > R ? 2 * R : -2 * R) - y;
      vy = -vy;
      ay = -ay;
    }
    const double s = std::hypot(vx, vy);
    Kinematics kin;
    kin.pos = grid6(Vec3{x, y, 0.0});
    kin.spd = grid6(Vec3{vx, vy, 0.0});
    kin.acl = grid6(Vec3{eax, eay, 0.0});
    kin.hed = grid6(Vec3{vx / s, vy / s, 0.0});
    out.push_back(kin);
  }
  return out;
}

struct Draft {
  std::int64_t recv_us;
  std::size_t vehicle;
  std::size_t seq;
  BsmRecord record;
  BsmRecord truth;
};

}  // namespace

std::size_t GenConfig::misbehaving_count() const {
  return static_cast<std::size_t>(std::llround(misbehaving_fraction * static_cast<double>(n_vehicles)));
}

bool GenConfig::uses_dos() const {
  return std::any_of(attack_types.begin(), attack_types.end(), is_dos_variant);
}

void GenConfig::validate() const {
  if (!(misbehaving_fraction > 0.0 && misbehaving_fraction < 1.0)) {
    throw ConfigError("misbehaving_fraction must lie in (0, 1)");
  }
  const auto m = misbehaving_count();
  if (m == 0 || m >= n_vehicles) {
    throw ConfigError("n_vehicles=" + std::to_string(n_vehicles) + " with misbehaving_fraction=" +
                      std::to_string(misbehaving_fraction) + " leaves a class without vehicles");
  }
  if (!(duration > 0)) throw ConfigError("duration must be positive");
  if (!(dos_period > 0 && dos_period < genuine_bsm_period)) {
    throw ConfigError("dos_period must be positive and below genuine_bsm_period");
  }
  const double ratio = genuine_bsm_period / dos_period;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ConfigError("genuine_bsm_period must be a whole multiple of dos_period");
  }
  if (attack_types.empty()) throw ConfigError("attack_types must not be empty");
  for (auto t : attack_types) {
    if (t == AttackType::Genuine) throw ConfigError("attack_types must not contain Genuine");
  }
  if (!(road_half_extent > 0 && sim_half_extent >= road_half_extent)) {
    throw ConfigError("position bounds are degenerate");
  }
  if (!(min_speed > 0 && max_speed > min_speed && speed_box > 0 && max_accel > 0)) {
    throw ConfigError("speed/acceleration bounds are degenerate");
  }
  if (!(random_pos_offset > 0 && random_spd_offset > 0)) throw ConfigError("random offsets must be positive");
  if (!(min_latency >= 0 && max_latency >= min_latency)) throw ConfigError("latency bounds are degenerate");
  if (!(accel_change_prob >= 0 && accel_change_prob <= 1)) throw ConfigError("accel_change_prob must be in [0,1]");
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  std::vector<std::string> types;
  for (auto t : c.attack_types) types.emplace_back(to_string(t));
  j = {{"n_vehicles", c.n_vehicles},
       {"misbehaving_fraction", c.misbehaving_fraction},
       {"duration", c.duration},
       {"genuine_bsm_period", c.genuine_bsm_period},
       {"dos_period", c.dos_period},
       {"attack_types", types},
       {"constant_pos_offset", c.constant_pos_offset},
       {"random_pos_offset", c.random_pos_offset},
       {"constant_spd_offset", c.constant_spd_offset},
       {"random_spd_offset", c.random_spd_offset},
       {"road_half_extent", c.road_half_extent},
       {"sim_half_extent", c.sim_half_extent},
       {"min_speed", c.min_speed},
       {"max_speed", c.max_speed},
       {"speed_box", c.speed_box},
       {"max_accel", c.max_accel},
       {"accel_change_prob", c.accel_change_prob},
       {"min_latency", c.min_latency},
       {"max_latency", c.max_latency},
       {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  auto num = [&](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  if (j.contains("n_vehicles")) c.n_vehicles = j.at("n_vehicles").get<std::size_t>();
  num("misbehaving_fraction", c.misbehaving_fraction);
  num("duration", c.duration);
  num("genuine_bsm_period", c.genuine_bsm_period);
  num("dos_period", c.dos_period);
  if (j.contains("attack_types")) {
    c.attack_types.clear();
    for (const auto& name : j.at("attack_types")) {
      auto t = attack_type_from_string(name.get<std::string>());
      if (!t) throw ConfigError("unknown attack type '" + name.get<std::string>() + "'");
      c.attack_types.push_back(*t);
    }
  }
  if (j.contains("constant_pos_offset")) c.constant_pos_offset = vec_from_json(j.at("constant_pos_offset"));
  num("random_pos_offset", c.random_pos_offset);
  if (j.contains("constant_spd_offset")) c.constant_spd_offset = vec_from_json(j.at("constant_spd_offset"));
  num("random_spd_offset", c.random_spd_offset);
  num("road_half_extent", c.road_half_extent);
  num("sim_half_extent", c.sim_half_extent);
  num("min_speed", c.min_speed);
  num("max_speed", c.max_speed);
  num("speed_box", c.speed_box);
  num("max_accel", c.max_accel);
  num("accel_change_prob", c.accel_change_prob);
  num("min_latency", c.min_latency);
  num("max_latency", c.max_latency);
  if (j.contains("rng_seed")) c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

BsmRecord replay_pool(const std::vector<BsmRecord>& pool, std::size_t available, std::mt19937_64& rng,
                      double send_time, double recv_time, const std::string& sender,
                      const std::string& pseudo, AttackType type) {
  if (available == 0 || available > pool.size()) throw ConfigError("replay pool is empty");
  std::uniform_int_distribution<std::size_t> pick(0, available - 1);
  BsmRecord r = pool[pick(rng)];
  r.send_time = send_time;
  r.recv_time = recv_time;
  r.true_sender_id = sender;
  r.pseudo_id = pseudo;
  r.label = 1;
  r.attack_type = type;
  return r;
}

GeneratedTrace generate(const GenConfig& c) {
  c.validate();
  std::mt19937_64 master(c.rng_seed);
  const std::int64_t tick_us = to_micros(c.dos_period);
  const std::int64_t period_us = to_micros(c.genuine_bsm_period);
  const std::int64_t duration_us = to_micros(c.duration);
  const std::size_t ticks_per_bsm = static_cast<std::size_t>(period_us / tick_us);
  const double dt = static_cast<double>(tick_us) / kMicro;

  std::vector<std::size_t> order(c.n_vehicles);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), master);
  std::vector<AttackType> role(c.n_vehicles, AttackType::Genuine);
  const std::size_t m = c.misbehaving_count();
  for (std::size_t k = 0; k < m; ++k) role[order[k]] = c.attack_types[k % c.attack_types.size()];

  std::vector<std::uint64_t> seeds(c.n_vehicles);
  for (auto& s : seeds) s = master();

  std::vector<Draft> drafts;
  std::vector<std::vector<Kinematics>> paths(c.n_vehicles);
  std::vector<std::int64_t> start_us(c.n_vehicles);
  std::vector<std::mt19937_64> rngs;
  rngs.reserve(c.n_vehicles);
  for (std::size_t v = 0; v < c.n_vehicles; ++v) {
    rngs.emplace_back(seeds[v]);
    std::uniform_int_distribution<std::int64_t> t0(0, period_us - 1);
    start_us[v] = t0(rngs[v]);
    const std::size_t ticks =
        start_us[v] < duration_us ? static_cast<std::size_t>((duration_us - 1 - start_us[v]) / tick_us) + 1 : 0;
    paths[v] = simulate_vehicle(c, ticks, dt, rngs[v]);
  }

  auto stamp = [&](std::size_t v, std::size_t k) {
    std::uniform_int_distribution<std::int64_t> lat(to_micros(c.min_latency), to_micros(c.max_latency));
    const std::int64_t send = start_us[v] + static_cast<std::int64_t>(k) * tick_us;
    return std::pair{send, send + lat(rngs[v])};
  };
  auto base_record = [&](std::size_t v, std::size_t k, std::int64_t send, std::int64_t recv) {
    BsmRecord r;
    r.send_time = static_cast<double>(send) / kMicro;
    r.recv_time = static_cast<double>(recv) / kMicro;
    r.true_sender_id = "v" + std::to_string(v);
    r.pseudo_id = "p" + std::to_string(v);
    const auto& kin = paths[v][k];
    r.pos = kin.pos;
    r.spd = kin.spd;
    r.acl = kin.acl;
    r.hed = kin.hed;
    return r;
  };

  // Honest traffic first; it is also the replay pool for disruptive senders.
  std::vector<BsmRecord> pool;
  for (std::size_t v = 0; v < c.n_vehicles; ++v) {
    if (role[v] != AttackType::Genuine) continue;
    for (std::size_t k = 0, seq = 0; k < paths[v].size(); k += ticks_per_bsm, ++seq) {
      auto [send, recv] = stamp(v, k);
      BsmRecord r = base_record(v, k, send, recv);
      pool.push_back(r);
      drafts.push_back({recv, v, seq, r, r});
    }
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const BsmRecord& a, const BsmRecord& b) { return a.send_time < b.send_time; });

  for (std::size_t v = 0; v < c.n_vehicles; ++v) {
    const AttackType type = role[v];
    if (type == AttackType::Genuine) continue;
    auto& rng = rngs[v];
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sym = [&](double r) { return (2 * unit(rng) - 1) * r; };
    auto random_offset = [&](double r) {
      Vec3 o{};
      do {
        o = grid6(Vec3{sym(r), sym(r), 0.0});
      } while (o[0] == 0.0 && o[1] == 0.0);
      return o;
    };
    // A parked-looking point inside the road area, so only its frozen trajectory gives it away.
    const Vec3 fixed_pos = grid6(Vec3{sym(c.road_half_extent), sym(c.road_half_extent), 0.0});
    const Vec3 fixed_spd = grid6(Vec3{sym(c.speed_box), sym(c.speed_box), 0.0});
    const std::size_t step = is_dos_variant(type) ? 1 : ticks_per_bsm;
    for (std::size_t k = 0, seq = 0; k < paths[v].size(); k += step, ++seq) {
      auto [send, recv] = stamp(v, k);
      const BsmRecord truth = base_record(v, k, send, recv);
      BsmRecord r = truth;
      if (is_sybil_variant(type)) r.pseudo_id = "p" + std::to_string(v) + "s" + std::to_string(seq);
      auto add = [](const Vec3& a, const Vec3& b) { return grid6(Vec3{a[0] + b[0], a[1] + b[1], a[2] + b[2]}); };
      switch (type) {
        case AttackType::ConstantPosition: r.pos = fixed_pos; break;
        case AttackType::ConstantPositionOffset: r.pos = add(truth.pos, c.constant_pos_offset); break;
        case AttackType::RandomPosition:
          r.pos = grid6(Vec3{sym(c.sim_half_extent), sym(c.sim_half_extent), 0.0});
          break;
        case AttackType::RandomPositionOffset: r.pos = add(truth.pos, random_offset(c.random_pos_offset)); break;
        case AttackType::ConstantSpeed: r.spd = fixed_spd; break;
        case AttackType::ConstantSpeedOffset: r.spd = add(truth.spd, c.constant_spd_offset); break;
        case AttackType::RandomSpeed: r.spd = grid6(Vec3{sym(c.speed_box), sym(c.speed_box), 0.0}); break;
        case AttackType::RandomSpeedOffset: r.spd = add(truth.spd, random_offset(c.random_spd_offset)); break;
        case AttackType::DoSRandom:
        case AttackType::DoSRandomSybil: {
          r.pos = grid6(Vec3{sym(c.sim_half_extent), sym(c.sim_half_extent), 0.0});
          r.spd = grid6(Vec3{sym(c.speed_box), sym(c.speed_box), 0.0});
          r.acl = grid6(Vec3{sym(c.max_accel), sym(c.max_accel), 0.0});
          const double dir = unit(rng) * 2 * std::numbers::pi;
          r.hed = grid6(Vec3{std::cos(dir), std::sin(dir), 0.0});
          break;
        }
        case AttackType::Disruptive:
        case AttackType::DoSDisruptive:
        case AttackType::DoSDisruptiveSybil: {
          auto avail = static_cast<std::size_t>(
              std::lower_bound(pool.begin(), pool.end(), r.send_time,
                               [](const BsmRecord& p, double t) { return p.send_time < t; }) -
              pool.begin());
          if (avail > 0) {
            r = replay_pool(pool, avail, rng, r.send_time, r.recv_time, r.true_sender_id, r.pseudo_id, type);
          }
          break;
        }
        default: break;  // plain DoS transmits true content at flooding rate
      }
      r.label = 1;
      r.attack_type = type;
      BsmRecord t = truth;
      t.pseudo_id = r.pseudo_id;
      t.label = 1;
      t.attack_type = type;
      drafts.push_back({recv, v, seq, r, t});
    }
  }

  std::sort(drafts.begin(), drafts.end(), [](const Draft& a, const Draft& b) {
    return std::tie(a.recv_us, a.vehicle, a.seq) < std::tie(b.recv_us, b.vehicle, b.seq);
  });
  GeneratedTrace out;
  out.records.reserve(drafts.size());
  out.truth.reserve(drafts.size());
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    out.records.push_back(std::move(drafts[i].record));
    out.truth.push_back(std::move(drafts[i].truth));
    out.message_ids.push_back(i + 1);
  }
  return out;
}

nlohmann::json generation_manifest(const GenConfig& config, const GeneratedTrace& trace) {
  std::map<std::string, std::size_t> per_attack;
  std::size_t ones = 0;
  std::map<std::string, bool> vehicles;
  for (const auto& r : trace.records) {
    ++per_attack[std::string(to_string(r.attack_type))];
    ones += static_cast<std::size_t>(r.label);
    vehicles[r.true_sender_id] = vehicles[r.true_sender_id] || r.label == 1;
  }
  std::size_t bad = 0;
  for (const auto& [id, misbehaving] : vehicles) bad += misbehaving ? 1 : 0;
  return {{"rng_seed", config.rng_seed},
          {"records", trace.records.size()},
          {"labels", {{"genuine", trace.records.size() - ones}, {"misbehavior", ones}}},
          {"vehicles", {{"total", vehicles.size()}, {"misbehaving", bad}, {"genuine", vehicles.size() - bad}}},
          {"attack_types", per_attack}};
}

int veremi_attacker_code(AttackType t) {
  switch (t) {
    case AttackType::Genuine: return 0;
    case AttackType::ConstantPosition: return 1;
    case AttackType::ConstantPositionOffset: return 2;
    case AttackType::RandomPosition: return 3;
    case AttackType::RandomPositionOffset: return 4;
    case AttackType::ConstantSpeed: return 5;
    case AttackType::ConstantSpeedOffset: return 6;
    case AttackType::RandomSpeed: return 7;
    case AttackType::RandomSpeedOffset: return 8;
    case AttackType::Disruptive: return 10;
    case AttackType::DoS: return 13;
    case AttackType::DoSRandom: return 14;
    case AttackType::DoSDisruptive: return 15;
    case AttackType::DoSRandomSybil: return 18;
    case AttackType::DoSDisruptiveSybil: return 19;
  }
  return -1;
}

void export_veremi(const GeneratedTrace& trace, const std::filesystem::path& log_dir,
                   const std::filesystem::path& ground_truth_file) {
  std::filesystem::create_directories(log_dir);
  std::map<std::string, std::string> logs;
  std::string truth;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    const auto& t = trace.truth[i];
    nlohmann::json line = {{"type", 3},          {"rcvTime", r.recv_time}, {"sendTime", r.send_time},
                           {"sender", r.true_sender_id}, {"senderPseudo", r.pseudo_id},
                           {"messageID", trace.message_ids[i]},
                           {"pos", r.pos},       {"spd", r.spd},           {"acl", r.acl},
                           {"hed", r.hed}};
    logs[r.true_sender_id] += line.dump() + "\n";
    nlohmann::json gt = {{"type", 4},          {"sendTime", t.send_time}, {"sender", t.true_sender_id},
                         {"senderPseudo", t.pseudo_id}, {"messageID", trace.message_ids[i]},
                         {"pos", t.pos},       {"spd", t.spd},            {"acl", t.acl},
                         {"hed", t.hed},       {"attackerType", veremi_attacker_code(r.attack_type)}};
    truth += gt.dump() + "\n";
  }
  for (const auto& [sender, text] : logs) write_file_atomic(log_dir / ("traceJSON-" + sender + ".json"), text);
  write_file_atomic(ground_truth_file, truth);
}

}  // namespace mds
