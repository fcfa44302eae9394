#include "mds/trace.hpp"

#include <algorithm>
#include <cmath>

#include "mds/error.hpp"

namespace mds {

double norm2(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

namespace {

constexpr std::array<std::string_view, kAttackTypeCount> kAttackNames = {
    "Genuine",       "ConstantPosition", "ConstantPositionOffset", "RandomPosition",
    "RandomPositionOffset", "ConstantSpeed", "ConstantSpeedOffset", "RandomSpeed",
    "RandomSpeedOffset", "Disruptive",    "DoS",                    "DoSRandom",
    "DoSDisruptive", "DoSRandomSybil",    "DoSDisruptiveSybil",
};

constexpr std::array<std::string_view, 5> kFeatureNames = {"pos", "spd", "acl", "hed", "iat"};

bool finite3(const Vec3& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

}  // namespace

std::string_view to_string(AttackType t) { return kAttackNames[static_cast<std::size_t>(t)]; }

std::optional<AttackType> attack_type_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kAttackNames.size(); ++i) {
    if (kAttackNames[i] == s) return static_cast<AttackType>(i);
  }
  return std::nullopt;
}

const std::array<AttackType, kAttackTypeCount>& all_attack_types() {
  static const auto types = [] {
    std::array<AttackType, kAttackTypeCount> out{};
    for (std::size_t i = 0; i < kAttackTypeCount; ++i) out[i] = static_cast<AttackType>(i);
    return out;
  }();
  return types;
}

bool is_dos_variant(AttackType t) {
  switch (t) {
    case AttackType::DoS:
    case AttackType::DoSRandom:
    case AttackType::DoSDisruptive:
    case AttackType::DoSRandomSybil:
    case AttackType::DoSDisruptiveSybil:
      return true;
    default:
      return false;
  }
}

bool is_sybil_variant(AttackType t) {
  return t == AttackType::DoSRandomSybil || t == AttackType::DoSDisruptiveSybil;
}

bool is_position_variant(AttackType t) {
  return t == AttackType::ConstantPosition || t == AttackType::ConstantPositionOffset ||
         t == AttackType::RandomPosition || t == AttackType::RandomPositionOffset;
}

bool is_speed_variant(AttackType t) {
  return t == AttackType::ConstantSpeed || t == AttackType::ConstantSpeedOffset ||
         t == AttackType::RandomSpeed || t == AttackType::RandomSpeedOffset;
}

void validate(const BsmRecord& r) {
  if (!std::isfinite(r.recv_time) || !std::isfinite(r.send_time) || !finite3(r.pos) ||
      !finite3(r.spd) || !finite3(r.acl) || !finite3(r.hed)) {
    throw RejectedRecord("non-finite field in record from sender " + r.true_sender_id);
  }
  if (r.send_time < 0.0 || r.recv_time < r.send_time) {
    throw RejectedRecord("timestamps violate recv_time >= send_time >= 0");
  }
  if (r.label != 0 && r.label != 1) throw RejectedRecord("label must be 0 or 1");
  if (r.label == 0 && r.attack_type != AttackType::Genuine) {
    throw RejectedRecord("genuine label with attack type " + std::string(to_string(r.attack_type)));
  }
}

std::string_view to_string(FeatureKind k) { return kFeatureNames[static_cast<std::size_t>(k)]; }

std::optional<FeatureKind> feature_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kFeatureNames.size(); ++i) {
    if (kFeatureNames[i] == s) return static_cast<FeatureKind>(i);
  }
  return std::nullopt;
}

bool FeatureLayout::has(FeatureKind k) const {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

FeatureLayout FeatureLayout::kinematic() { return FeatureLayout{}; }

FeatureLayout FeatureLayout::kinematic_with_timing() {
  FeatureLayout l;
  l.kinds.push_back(FeatureKind::InterArrival);
  return l;
}

FeatureLayout FeatureLayout::only(FeatureKind k) { return FeatureLayout{{k}}; }

FeatureVector featurize(const BsmRecord& record) {
  if (!finite3(record.pos) || !finite3(record.spd) || !finite3(record.acl) ||
      !finite3(record.hed)) {
    throw RejectedRecord("non-finite kinematics in record from sender " + record.true_sender_id);
  }
  return FeatureVector{{norm2(record.pos), norm2(record.spd), norm2(record.acl), norm2(record.hed)}};
}

DetectionState::DetectionState(std::size_t window, std::size_t dim)
    : window_(window), dim_(dim), features_(window * dim, 0.0), actions_(window, 0) {
  if (window == 0 || dim == 0) throw ShapeError("detection state needs window >= 1 and dim >= 1");
}

std::span<const double> DetectionState::slot(std::size_t i) const {
  return std::span<const double>(features_).subspan(i * dim_, dim_);
}

void push_state_inplace(DetectionState& state, std::span<const double> x, int a_prev) {
  if (x.size() != state.dim()) {
    throw ShapeError("feature dimension " + std::to_string(x.size()) + " does not match state dimension " +
                     std::to_string(state.dim()));
  }
  auto f = state.features();
  const std::size_t d = state.dim();
  std::copy(f.begin() + static_cast<std::ptrdiff_t>(d), f.end(), f.begin());
  std::copy(x.begin(), x.end(), f.end() - static_cast<std::ptrdiff_t>(d));
  auto a = state.actions();
  std::copy(a.begin() + 1, a.end(), a.begin());
  a.back() = static_cast<std::uint8_t>(a_prev != 0 ? 1 : 0);
}

DetectionState push_state(const DetectionState& prev, std::span<const double> x, int a_prev) {
  DetectionState next = prev;
  push_state_inplace(next, x, a_prev);
  return next;
}

void ConfusionCounts::add(int action, int label) {
  if (action == 1 && label == 1) ++tp;
  else if (action == 0 && label == 0) ++tn;
  else if (action == 1) ++fp;
  else ++fn;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

}  // namespace mds
