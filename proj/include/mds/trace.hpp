#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mds {

using Vec3 = std::array<double, 3>;

double norm2(const Vec3& v);

enum class AttackType : std::uint8_t {
  Genuine,
  ConstantPosition,
  ConstantPositionOffset,
  RandomPosition,
  RandomPositionOffset,
  ConstantSpeed,
  ConstantSpeedOffset,
  RandomSpeed,
  RandomSpeedOffset,
  Disruptive,
  DoS,
  DoSRandom,
  DoSDisruptive,
  DoSRandomSybil,
  DoSDisruptiveSybil,
};

inline constexpr std::size_t kAttackTypeCount = 15;

std::string_view to_string(AttackType t);
std::optional<AttackType> attack_type_from_string(std::string_view s);
const std::array<AttackType, kAttackTypeCount>& all_attack_types();

bool is_dos_variant(AttackType t);
bool is_sybil_variant(AttackType t);
bool is_position_variant(AttackType t);
bool is_speed_variant(AttackType t);

struct BsmRecord {
  double recv_time = 0.0;
  double send_time = 0.0;
  std::string true_sender_id;
  std::string pseudo_id;
  Vec3 pos{};
  Vec3 spd{};
  Vec3 acl{};
  Vec3 hed{};
  int label = 0;
  AttackType attack_type = AttackType::Genuine;

  bool operator==(const BsmRecord&) const = default;
};

// Throws RejectedRecord when the invariants of a single record do not hold.
void validate(const BsmRecord& r);

enum class FeatureKind : std::uint8_t { Position, Speed, Acceleration, Heading, InterArrival };

std::string_view to_string(FeatureKind k);
std::optional<FeatureKind> feature_kind_from_string(std::string_view s);

// Which scalar features make up X_t, in order.
struct FeatureLayout {
  std::vector<FeatureKind> kinds{FeatureKind::Position, FeatureKind::Speed,
                                 FeatureKind::Acceleration, FeatureKind::Heading};

  std::size_t dim() const { return kinds.size(); }
  bool has(FeatureKind k) const;
  bool operator==(const FeatureLayout&) const = default;

  static FeatureLayout kinematic();                // pos, spd, acl, hed
  static FeatureLayout kinematic_with_timing();    // + inter-arrival
  static FeatureLayout only(FeatureKind k);
};

struct FeatureVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

// [|pos|, |spd|, |acl|, |hed|] before any standardization.
FeatureVector featurize(const BsmRecord& record);

// Agent observation: n feature vectors (oldest first) and the n prior actions.
class DetectionState {
 public:
  DetectionState() = default;
  DetectionState(std::size_t window, std::size_t dim);

  std::size_t window() const { return window_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> features() const { return features_; }
  std::span<double> features() { return features_; }
  std::span<const double> slot(std::size_t i) const;
  std::span<const std::uint8_t> actions() const { return actions_; }
  std::span<std::uint8_t> actions() { return actions_; }

  // Length of the flat encoding fed to the network: n*d feature slots then n action bits.
  std::size_t encoding_size() const { return window_ * dim_ + window_; }

  bool operator==(const DetectionState&) const = default;

 private:
  std::size_t window_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<std::uint8_t> actions_;
};

// Shifts both windows left by one and appends x / a_prev in the newest slot.
DetectionState push_state(const DetectionState& prev, std::span<const double> x, int a_prev);
inline DetectionState push_state(const DetectionState& prev, const FeatureVector& x, int a_prev) {
  return push_state(prev, std::span<const double>(x.values), a_prev);
}
// In-place variant used on hot paths.
void push_state_inplace(DetectionState& state, std::span<const double> x, int a_prev);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  void add(int action, int label);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

}  // namespace mds
