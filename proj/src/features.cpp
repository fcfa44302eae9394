#include "mds/features.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mds/error.hpp"

namespace mds {

std::vector<FeatureVector> extract_features(const std::vector<BsmRecord>& records,
                                            const FeatureConfig& config) {
  if (config.layout.dim() == 0) throw ConfigError("feature layout is empty");
  std::unordered_map<std::string, double> last_seen;
  std::vector<FeatureVector> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const FeatureVector norms = featurize(r);
    FeatureVector row;
    row.values.reserve(config.layout.dim());
    for (FeatureKind k : config.layout.kinds) {
      switch (k) {
        case FeatureKind::Position: row.values.push_back(norms.values[0]); break;
        case FeatureKind::Speed: row.values.push_back(norms.values[1]); break;
        case FeatureKind::Acceleration: row.values.push_back(norms.values[2]); break;
        case FeatureKind::Heading: row.values.push_back(norms.values[3]); break;
        case FeatureKind::InterArrival: {
          double gap = config.interarrival_cap;
          if (auto it = last_seen.find(r.pseudo_id); it != last_seen.end()) {
            gap = std::clamp(r.recv_time - it->second, 0.0, config.interarrival_cap);
          }
          row.values.push_back(gap);
          break;
        }
      }
    }
    last_seen[r.pseudo_id] = r.recv_time;
    out.push_back(std::move(row));
  }
  return out;
}

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size()) throw ShapeError("standardizer mean/scale size mismatch");
  for (double s : scale_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw NumericFailure("standardizer scale must be positive");
  }
}

Standardizer Standardizer::fit(const std::vector<FeatureVector>& rows) {
  if (rows.empty()) throw ShapeError("cannot fit a standardizer on no rows");
  const std::size_t d = rows.front().dim();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (const auto& r : rows) {
    if (r.dim() != d) throw ShapeError("ragged feature rows");
    for (std::size_t k = 0; k < d; ++k) mean[k] += r.values[k];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < d; ++k) {
      const double e = r.values[k] - mean[k];
      var[k] += e * e;
    }
  }
  std::vector<double> scale(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double sd = std::sqrt(var[k] / static_cast<double>(rows.size()));
    scale[k] = sd > 1e-12 ? sd : 1.0;
  }
  return Standardizer(std::move(mean), std::move(scale));
}

Standardizer Standardizer::identity(std::size_t dim) {
  return Standardizer(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
}

void Standardizer::apply_inplace(FeatureVector& row) const {
  if (row.dim() != dim()) throw ShapeError("standardizer dimension mismatch");
  for (std::size_t k = 0; k < row.dim(); ++k) row.values[k] = (row.values[k] - mean_[k]) / scale_[k];
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  auto kinds = nlohmann::json::array();
  for (auto k : c.layout.kinds) kinds.push_back(std::string(to_string(k)));
  j = {{"features", kinds}, {"interarrival_cap", c.interarrival_cap}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.layout.kinds.clear();
  for (const auto& k : j.at("features")) {
    auto kind = feature_kind_from_string(k.get<std::string>());
    if (!kind) throw ConfigError("unknown feature '" + k.get<std::string>() + "'");
    c.layout.kinds.push_back(*kind);
  }
  c.interarrival_cap = j.at("interarrival_cap").get<double>();
}

void to_json(nlohmann::json& j, const Standardizer& s) {
  j = {{"mean", s.mean()}, {"scale", s.scale()}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  s = Standardizer(j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>());
}

}  // namespace mds
