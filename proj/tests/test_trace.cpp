#include <random>
#include <sstream>

#include "doctest.h"
#include "mds/error.hpp"
#include "mds/features.hpp"
#include "mds/trace.hpp"
#include "mds/trace_io.hpp"

using namespace mds;

namespace {

BsmRecord make_record(Vec3 pos, Vec3 spd, Vec3 acl, Vec3 hed) {
  BsmRecord r;
  r.recv_time = 1.5;
  r.send_time = 1.25;
  r.true_sender_id = "v1";
  r.pseudo_id = "p1";
  r.pos = pos;
  r.spd = spd;
  r.acl = acl;
  r.hed = hed;
  return r;
}

double grid6(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return std::round(u(rng) * 1e6) / 1e6;
}

}  // namespace

TEST_CASE("featurize returns the four Euclidean norms") {
  CHECK(featurize(make_record({3, 4, 0}, {0, 0, 0}, {0, 0, 0}, {1, 0, 0})).values ==
        std::vector<double>{5, 0, 0, 1});
  CHECK(featurize(make_record({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 0})).values ==
        std::vector<double>{0, 0, 0, 0});
  auto f = featurize(make_record({1, 2, 2}, {2, 3, 6}, {1, 0, 0}, {0, 1, 0}));
  CHECK(f.values[0] == doctest::Approx(3.0));
  CHECK(f.values[1] == doctest::Approx(7.0));
  CHECK(f.values[2] == doctest::Approx(1.0));
  CHECK(f.values[3] == doctest::Approx(1.0));
}

TEST_CASE("featurize rejects non-finite input") {
  auto r = make_record({std::nan(""), 0, 0}, {0, 0, 0}, {0, 0, 0}, {1, 0, 0});
  CHECK_THROWS_AS(featurize(r), RejectedRecord);
  r.pos = {0, 0, 0};
  r.acl[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(featurize(r), RejectedRecord);
}

TEST_CASE("featurize ignores sign flips of the kinematic vectors") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto r = make_record({grid6(rng, -500, 500), grid6(rng, -500, 500), 0},
                         {grid6(rng, -30, 30), grid6(rng, -30, 30), 0},
                         {grid6(rng, -3, 3), grid6(rng, -3, 3), 0}, {grid6(rng, -1, 1), 0, 0});
    auto flipped = r;
    for (auto& c : flipped.pos) c = -c;
    for (auto& c : flipped.spd) c = -c;
    CHECK(featurize(flipped) == featurize(r));
  }
}

TEST_CASE("push_state shifts both windows") {
  SUBCASE("window of one is a full replacement") {
    DetectionState s(1, 2);
    auto next = push_state(s, FeatureVector{{4.0, 5.0}}, 1);
    CHECK(std::vector<double>(next.features().begin(), next.features().end()) == std::vector<double>{4, 5});
    CHECK(next.actions()[0] == 1);
  }
  SUBCASE("action window shift") {
    DetectionState s(3, 1);
    s.actions()[1] = 1;  // [0,1,0]
    auto next = push_state(s, FeatureVector{{0.0}}, 1);
    CHECK(std::vector<int>(next.actions().begin(), next.actions().end()) == std::vector<int>{1, 0, 1});
  }
  SUBCASE("FIFO feature shift") {
    DetectionState s(2, 1);
    s = push_state(s, FeatureVector{{1.0}}, 0);
    s = push_state(s, FeatureVector{{2.0}}, 0);
    s = push_state(s, FeatureVector{{3.0}}, 0);
    CHECK(std::vector<double>(s.features().begin(), s.features().end()) == std::vector<double>{2, 3});
  }
  SUBCASE("dimension mismatch") {
    DetectionState s(2, 2);
    CHECK_THROWS_AS(push_state(s, FeatureVector{{1.0}}, 0), ShapeError);
  }
}

TEST_CASE("n pushes erase the initial padding") {
  std::mt19937_64 rng(11);
  const std::size_t n = 5, d = 3;
  DetectionState a(n, d), b(n, d);
  for (std::size_t i = 0; i < n * d; ++i) b.features()[i] = grid6(rng, -9, 9);
  for (std::size_t i = 0; i < n; ++i) b.actions()[i] = static_cast<std::uint8_t>(i % 2);
  for (std::size_t k = 0; k < n; ++k) {
    FeatureVector x{{grid6(rng, 0, 1), grid6(rng, 0, 1), grid6(rng, 0, 1)}};
    int act = static_cast<int>(k % 3 == 0);
    a = push_state(a, x, act);
    b = push_state(b, x, act);
  }
  CHECK(a == b);
}

TEST_CASE("confusion counts bookkeeping") {
  ConfusionCounts c;
  c.add(1, 1);
  c.add(0, 0);
  c.add(1, 0);
  c.add(0, 1);
  c.add(0, 1);
  CHECK(c.tp == 1);
  CHECK(c.tn == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 2);
  CHECK(c.total() == 5);
}

TEST_CASE("record validation") {
  auto r = make_record({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {1, 0, 0});
  CHECK_NOTHROW(validate(r));
  r.label = 0;
  r.attack_type = AttackType::DoS;
  CHECK_THROWS_AS(validate(r), RejectedRecord);
  r.attack_type = AttackType::Genuine;
  r.recv_time = 1.0;  // before send_time
  CHECK_THROWS_AS(validate(r), RejectedRecord);
}

TEST_CASE("attack type names are stable and round-trip") {
  CHECK(to_string(AttackType::DoSRandomSybil) == "DoSRandomSybil");
  CHECK(to_string(AttackType::ConstantPositionOffset) == "ConstantPositionOffset");
  for (auto t : all_attack_types()) CHECK(attack_type_from_string(to_string(t)) == t);
  CHECK_FALSE(attack_type_from_string("GridSybil").has_value());
}

TEST_CASE("canonical CSV round-trips records on the 6-decimal grid") {
  std::mt19937_64 rng(42);
  std::vector<BsmRecord> recs;
  std::int64_t micros = 0;
  std::uniform_int_distribution<std::int64_t> step(0, 500000), lag(0, 10000);
  for (int i = 0; i < 300; ++i) {
    BsmRecord r;
    micros += step(rng);
    r.send_time = static_cast<double>(micros) / 1e6;
    r.recv_time = static_cast<double>(micros + lag(rng)) / 1e6;
    r.true_sender_id = "veh" + std::to_string(i % 17);
    r.pseudo_id = "ps" + std::to_string(i);
    for (Vec3* v : {&r.pos, &r.spd, &r.acl, &r.hed}) {
      for (double& c : *v) c = grid6(rng, -1500, 1500);
    }
    auto types = all_attack_types();
    r.attack_type = types[static_cast<std::size_t>(i) % types.size()];
    r.label = r.attack_type == AttackType::Genuine ? 0 : 1;
    recs.push_back(r);
  }
  std::stringstream ss;
  write_trace_csv(ss, recs);
  CHECK(read_trace_csv(ss) == recs);
}

TEST_CASE("CSV formatting is fixed at 6 decimals") {
  auto r = make_record({3, 4, 0}, {0, 0, 0}, {0, 0, 0}, {1, 0, 0});
  r.pos[2] = -0.0;
  CHECK(format_trace_row(r) ==
        "1.500000,1.250000,v1,p1,3.000000,4.000000,0.000000,0.000000,0.000000,0.000000,"
        "0.000000,0.000000,0.000000,1.000000,0.000000,0.000000,0,Genuine");
  CHECK_THROWS_AS(parse_trace_row("1,2,3"), RejectedRecord);
}

TEST_CASE("inter-arrival feature is tracked per pseudonym and capped") {
  std::vector<BsmRecord> recs;
  auto add = [&](double t, const char* ps) {
    auto r = make_record({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {1, 0, 0});
    r.send_time = t;
    r.recv_time = t;
    r.pseudo_id = ps;
    recs.push_back(r);
  };
  add(0.0, "a");
  add(0.1, "b");
  add(0.2, "a");
  add(3.0, "a");
  FeatureConfig cfg{FeatureLayout::only(FeatureKind::InterArrival), 1.0};
  auto rows = extract_features(recs, cfg);
  CHECK(rows[0].values[0] == 1.0);
  CHECK(rows[1].values[0] == 1.0);
  CHECK(rows[2].values[0] == doctest::Approx(0.2));
  CHECK(rows[3].values[0] == 1.0);
}

TEST_CASE("standardizer uses training statistics and survives constant features") {
  std::vector<FeatureVector> rows{{{1.0, 5.0}}, {{3.0, 5.0}}};
  auto s = Standardizer::fit(rows);
  CHECK(s.mean() == std::vector<double>{2.0, 5.0});
  CHECK(s.scale()[0] == doctest::Approx(1.0));
  CHECK(s.scale()[1] == 1.0);
  auto z = s.apply(FeatureVector{{4.0, 5.0}});
  CHECK(z.values[0] == doctest::Approx(2.0));
  CHECK(z.values[1] == 0.0);
  nlohmann::json j = s;
  CHECK(j.get<Standardizer>() == s);
}
