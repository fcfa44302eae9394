#pragma once

#include <string>
#include <vector>

#include "mds/agent.hpp"

namespace fixtures {

inline mds::BsmRecord record(double t, const std::string& sender, int label, double x) {
  mds::BsmRecord r;
  r.recv_time = t + 0.001;
  r.send_time = t;
  r.true_sender_id = sender;
  r.pseudo_id = "p" + sender;
  r.pos = {x, 0.0, 0.0};
  r.spd = {10.0, 0.0, 0.0};
  r.hed = {1.0, 0.0, 0.0};
  r.label = label;
  r.attack_type = label ? mds::AttackType::RandomPosition : mds::AttackType::Genuine;
  return r;
}

// `vehicles` senders, `per_vehicle` messages each, one per second; the first
// `bad` senders misbehave and sit far away (|pos| = 1000), the rest near (10).
inline std::vector<mds::BsmRecord> toy_trace(std::size_t vehicles = 10, std::size_t bad = 3,
                                             std::size_t per_vehicle = 10) {
  std::vector<mds::BsmRecord> out;
  for (std::size_t k = 0; k < per_vehicle; ++k) {
    for (std::size_t v = 0; v < vehicles; ++v) {
      const int label = v < bad ? 1 : 0;
      out.push_back(record(static_cast<double>(k) + 0.01 * static_cast<double>(v), "v" + std::to_string(v), label,
                           label ? 1000.0 : 10.0));
    }
  }
  return out;
}

inline mds::FeatureConfig position_only() {
  mds::FeatureConfig f;
  f.layout = mds::FeatureLayout::only(mds::FeatureKind::Position);
  return f;
}

inline mds::NetworkSpec linear_spec() {
  mds::NetworkSpec spec;
  spec.window = 1;
  spec.feature_dim = 1;
  spec.recurrent_hidden = 0;
  spec.dense = {};
  return spec;
}

// Flat 1x1 network with q = [-k x, k x]: picks 1 exactly when x > 0.
inline mds::NetworkParams threshold_params(double k = 1.0) {
  auto p = mds::NetworkParams::zeros(linear_spec());
  p.weights()[0] = -k;
  p.weights()[1] = k;
  return p;
}

// Position-only pipeline centred between the toy classes, so threshold_params
// is an oracle (or, negated, always wrong).
inline mds::Policy toy_policy(double k = 1.0) {
  mds::Policy p;
  p.params = threshold_params(k);
  p.features = position_only();
  p.standardizer = mds::Standardizer({500.0}, {1.0});
  return p;
}

inline mds::AgentConfig toy_agent_config() {
  mds::AgentConfig c;
  c.network = linear_spec();
  c.minibatch = 8;
  c.replay_capacity = 1000;
  c.target_sync = 50;
  return c;
}

}  // namespace fixtures
