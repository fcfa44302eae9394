#include <map>
#include <set>

#include "doctest.h"
#include "mds/error.hpp"
#include "mds/synthgen.hpp"

using namespace mds;

namespace {

GenConfig small(AttackType t, std::size_t n = 10, double duration = 30.0) {
  GenConfig c;
  c.n_vehicles = n;
  c.duration = duration;
  c.attack_types = {t};
  return c;
}

std::map<std::string, std::vector<const BsmRecord*>> by_sender(const std::vector<BsmRecord>& records) {
  std::map<std::string, std::vector<const BsmRecord*>> out;
  for (const auto& r : records) out[r.true_sender_id].push_back(&r);
  return out;
}

}  // namespace

TEST_CASE("misbehaving fraction 0.3 of 10 vehicles gives 3 misbehaving vehicles") {
  auto cfg = small(AttackType::RandomPosition);
  CHECK(cfg.misbehaving_count() == 3);
  auto trace = generate(cfg);
  std::set<std::string> bad, all;
  for (const auto& r : trace.records) {
    all.insert(r.true_sender_id);
    if (r.label) bad.insert(r.true_sender_id);
  }
  CHECK(all.size() == 10);
  CHECK(bad.size() == 3);
}

TEST_CASE("ConstantPosition attackers repeat one position vector") {
  auto trace = generate(small(AttackType::ConstantPosition));
  std::size_t attackers = 0;
  for (const auto& [sender, msgs] : by_sender(trace.records)) {
    if (msgs.front()->attack_type != AttackType::ConstantPosition) continue;
    ++attackers;
    for (const auto* m : msgs) CHECK(m->pos == msgs.front()->pos);
  }
  CHECK(attackers == 3);
}

TEST_CASE("DoS attackers send ten times as often as genuine vehicles") {
  auto cfg = small(AttackType::DoS, 2, 60.0);
  cfg.misbehaving_fraction = 0.5;
  auto trace = generate(cfg);
  std::size_t dos = 0, genuine = 0;
  for (const auto& r : trace.records) (r.label ? dos : genuine) += 1;
  CHECK(genuine == doctest::Approx(60).epsilon(0.05));
  CHECK(dos == doctest::Approx(600).epsilon(0.05));
}

TEST_CASE("DoSRandomSybil changes pseudonym on every message") {
  auto trace = generate(small(AttackType::DoSRandomSybil, 10, 10.0));
  for (const auto& [sender, msgs] : by_sender(trace.records)) {
    if (msgs.front()->attack_type != AttackType::DoSRandomSybil) continue;
    for (std::size_t i = 1; i < msgs.size(); ++i) CHECK(msgs[i]->pseudo_id != msgs[i - 1]->pseudo_id);
  }
}

TEST_CASE("labels mark exactly the messages that diverge from the truth") {
  auto trace = generate(small(AttackType::RandomSpeedOffset));
  REQUIRE(trace.records.size() == trace.truth.size());
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    const auto& t = trace.truth[i];
    const bool differs = r.pos != t.pos || r.spd != t.spd || r.acl != t.acl || r.hed != t.hed;
    CHECK(r.label == (differs ? 1 : 0));
  }
}

TEST_CASE("plain DoS sends true content and is still labelled") {
  auto cfg = small(AttackType::DoS);
  auto trace = generate(cfg);
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    if (trace.records[i].attack_type == AttackType::DoS) {
      CHECK(trace.records[i].label == 1);
      CHECK(trace.records[i].pos == trace.truth[i].pos);
    }
  }
}

TEST_CASE("generation is deterministic, sorted and valid") {
  auto cfg = small(AttackType::DoSDisruptive);
  auto a = generate(cfg);
  auto b = generate(cfg);
  CHECK(a.records == b.records);
  for (std::size_t i = 1; i < a.records.size(); ++i) CHECK(a.records[i - 1].recv_time <= a.records[i].recv_time);
  for (const auto& r : a.records) CHECK_NOTHROW(validate(r));
  cfg.rng_seed = 2;
  CHECK(generate(cfg).records != a.records);
}

TEST_CASE("infeasible configurations are rejected") {
  auto cfg = small(AttackType::RandomPosition);
  cfg.misbehaving_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small(AttackType::RandomPosition);
  cfg.attack_types = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small(AttackType::DoS);
  cfg.dos_period = 0.3;  // not an integer divisor of the beacon period
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("replay from a singleton pool copies kinematics with a new timestamp") {
  BsmRecord m;
  m.pos = {1, 2, 3};
  m.spd = {4, 5, 6};
  m.hed = {1, 0, 0};
  m.send_time = 1.0;
  m.recv_time = 1.001;
  std::mt19937_64 rng(1);
  auto r = replay_pool({m}, rng, 7.0, 7.001, "v9", "p9", AttackType::Disruptive);
  CHECK(r.pos == m.pos);
  CHECK(r.spd == m.spd);
  CHECK(r.send_time == 7.0);
  CHECK(r.recv_time == 7.001);
  CHECK(r.true_sender_id == "v9");
}

TEST_CASE("replay draws uniformly from the pool") {
  std::vector<BsmRecord> pool(4);
  for (int i = 0; i < 4; ++i) pool[i].pos = {static_cast<double>(i), 0, 0};
  std::mt19937_64 rng(5);
  std::map<double, int> counts;
  double last = -1;
  for (int k = 0; k < 1000; ++k) {
    auto r = replay_pool(pool, rng, k * 0.1, k * 0.1 + 0.001, "v", "p", AttackType::Disruptive);
    CHECK(r.recv_time > last);
    last = r.recv_time;
    ++counts[r.pos[0]];
  }
  for (const auto& [x, n] : counts) CHECK(std::abs(n - 250) <= 60);
  CHECK_THROWS_AS(replay_pool({}, rng, 0, 0, "v", "p", AttackType::Disruptive), ConfigError);
}

TEST_CASE("Disruptive replays only messages sent earlier by honest vehicles") {
  auto trace = generate(small(AttackType::Disruptive));
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    if (r.attack_type != AttackType::Disruptive || !r.label) continue;
    bool found = false;
    for (const auto& g : trace.records) {
      if (g.label == 0 && g.send_time < r.send_time && g.pos == r.pos && g.spd == r.spd) {
        found = true;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("config round-trips through JSON") {
  auto cfg = small(AttackType::ConstantSpeed);
  cfg.attack_types.push_back(AttackType::DoSRandom);
  nlohmann::json j = cfg;
  GenConfig back;
  from_json(j, back);
  CHECK(back == cfg);
  auto m = generation_manifest(cfg, generate(cfg));
  CHECK(m["vehicles"]["misbehaving"] == 3);
}
