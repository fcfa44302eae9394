#pragma once

#include <vector>

#include "json.hpp"
#include "mds/trace.hpp"

namespace mds {

struct FeatureConfig {
  FeatureLayout layout;
  // Inter-arrival values are clamped to this; a pseudonym's first message gets the cap.
  double interarrival_cap = 1.0;

  bool operator==(const FeatureConfig&) const = default;
};

// Raw feature rows for `records` in their stored order. Inter-arrival is
// measured per pseudonym along that order, so callers pass time-sorted traces.
std::vector<FeatureVector> extract_features(const std::vector<BsmRecord>& records,
                                            const FeatureConfig& config);

class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> scale);

  static Standardizer fit(const std::vector<FeatureVector>& rows);
  static Standardizer identity(std::size_t dim);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }

  void apply_inplace(FeatureVector& row) const;
  FeatureVector apply(FeatureVector row) const {
    apply_inplace(row);
    return row;
  }

  bool operator==(const Standardizer&) const = default;

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);
void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

}  // namespace mds
