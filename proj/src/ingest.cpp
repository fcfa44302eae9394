#include "mds/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mds/error.hpp"

namespace mds {

namespace {

const std::vector<std::string> kRequiredFields{"type",       "recv_time", "send_time", "sender",
                                               "pseudo",     "message_id", "pos",      "spd",
                                               "acl",        "hed",        "attacker_type"};

const nlohmann::json* resolve(const nlohmann::json& obj, const std::string& path) {
  const nlohmann::json* cur = &obj;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    auto part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(part);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string::npos) return cur;
    start = dot + 1;
  }
}

std::string id_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 9e15) return std::to_string(static_cast<long long>(d));
  }
  throw std::invalid_argument("identifier is neither string nor integer");
}

Vec3 vec3(const nlohmann::json& v) {
  if (!v.is_array() || v.size() != 3) throw std::invalid_argument("expected a 3-array");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

std::optional<AttackType> from_veremi_code(int code) {
  switch (code) {
    case 0: return AttackType::Genuine;
    case 1: return AttackType::ConstantPosition;
    case 2: return AttackType::ConstantPositionOffset;
    case 3: return AttackType::RandomPosition;
    case 4: return AttackType::RandomPositionOffset;
    case 5: return AttackType::ConstantSpeed;
    case 6: return AttackType::ConstantSpeedOffset;
    case 7: return AttackType::RandomSpeed;
    case 8: return AttackType::RandomSpeedOffset;
    case 10: return AttackType::Disruptive;
    case 13: return AttackType::DoS;
    case 14: return AttackType::DoSRandom;
    case 15: return AttackType::DoSDisruptive;
    case 18: return AttackType::DoSRandomSybil;
    case 19: return AttackType::DoSDisruptiveSybil;
    default: return std::nullopt;
  }
}

struct Truth {
  std::string sender;
  double send_time;
  Vec3 pos, spd, acl, hed;
  int code;
};

bool diverges(const Vec3& a, const Vec3& b, double tol) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a[i] - b[i]) > tol) return true;
  }
  return false;
}

}  // namespace

const std::string& FieldMapping::key(const std::string& canonical) const {
  auto it = keys.find(canonical);
  if (it == keys.end()) throw ConfigError("field mapping has no entry for '" + canonical + "'");
  return it->second;
}

void FieldMapping::validate() const {
  for (const auto& f : kRequiredFields) {
    if (key(f).empty()) throw ConfigError("field mapping for '" + f + "' is empty");
  }
  if (!(tolerance >= 0)) throw ConfigError("tolerance must be non-negative");
  if (!(max_skip_fraction >= 0 && max_skip_fraction <= 1)) throw ConfigError("max_skip_fraction must be in [0,1]");
}

FieldMapping mapping_from_json(const nlohmann::json& j) {
  FieldMapping m;
  if (j.contains("fields")) {
    for (const auto& [k, v] : j.at("fields").items()) {
      if (std::find(kRequiredFields.begin(), kRequiredFields.end(), k) == kRequiredFields.end()) {
        throw ConfigError("unknown canonical field '" + k + "' in mapping");
      }
      m.keys[k] = v.get<std::string>();
    }
  }
  if (j.contains("reception_type")) m.reception_type = j.at("reception_type").get<int>();
  if (j.contains("truth_type")) m.truth_type = j.at("truth_type").get<int>();
  if (j.contains("tolerance")) m.tolerance = j.at("tolerance").get<double>();
  if (j.contains("max_skip_fraction")) m.max_skip_fraction = j.at("max_skip_fraction").get<double>();
  m.validate();
  return m;
}

std::size_t IngestDiagnostics::skipped_total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : skipped) n += count;
  return n;
}

nlohmann::json IngestDiagnostics::to_json() const {
  return {{"lines", lines}, {"accepted", accepted}, {"duplicates", duplicates}, {"skipped", skipped}};
}

std::vector<BsmRecord> parse_dataset(const std::filesystem::path& log_dir,
                                     const std::filesystem::path& ground_truth_file,
                                     const FieldMapping& mapping, IngestDiagnostics* diagnostics) {
  mapping.validate();
  if (!std::filesystem::is_directory(log_dir)) throw IngestError("log directory " + log_dir.string() + " not found");
  std::ifstream gt(ground_truth_file);
  if (!gt) throw IngestError("ground truth file " + ground_truth_file.string() + " not found");

  IngestDiagnostics diag;
  auto skip = [&](const std::string& reason) { ++diag.skipped[reason]; };
  auto field = [&](const nlohmann::json& obj, const std::string& canonical) -> const nlohmann::json& {
    const auto* v = resolve(obj, mapping.key(canonical));
    if (v == nullptr) throw std::out_of_range(canonical);
    return *v;
  };

  std::unordered_map<std::string, Truth> truth;
  std::string line;
  std::size_t truth_lines = 0, truth_bad = 0;
  while (std::getline(gt, line)) {
    if (line.empty()) continue;
    ++truth_lines;
    try {
      auto obj = nlohmann::json::parse(line);
      if (field(obj, "type").get<int>() != mapping.truth_type) continue;
      Truth t{id_string(field(obj, "sender")), field(obj, "send_time").get<double>(), vec3(field(obj, "pos")),
              vec3(field(obj, "spd")), vec3(field(obj, "acl")), vec3(field(obj, "hed")),
              field(obj, "attacker_type").get<int>()};
      truth.emplace(id_string(field(obj, "message_id")), std::move(t));
    } catch (const std::exception&) {
      ++truth_bad;
    }
  }
  if (truth_lines > 0 && static_cast<double>(truth_bad) > mapping.max_skip_fraction * static_cast<double>(truth_lines)) {
    throw IngestError("ground truth: " + std::to_string(truth_bad) + " of " + std::to_string(truth_lines) +
                      " lines unusable");
  }

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(log_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::unordered_map<std::string, std::size_t> by_id;
  std::vector<std::pair<std::string, BsmRecord>> out;
  for (const auto& path : files) {
    if (std::filesystem::equivalent(path, ground_truth_file)) continue;
    std::ifstream in(path);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const std::exception&) {
        ++diag.lines;
        skip("malformed-json");
        continue;
      }
      try {
        if (field(obj, "type").get<int>() != mapping.reception_type) continue;
      } catch (const std::exception&) {
        ++diag.lines;
        skip("missing-key:type");
        continue;
      }
      ++diag.lines;
      BsmRecord r;
      std::string id;
      const Truth* t = nullptr;
      try {
        id = id_string(field(obj, "message_id"));
        r.recv_time = field(obj, "recv_time").get<double>();
        r.send_time = field(obj, "send_time").get<double>();
        r.pseudo_id = id_string(field(obj, "pseudo"));
        r.true_sender_id = id_string(field(obj, "sender"));
        r.pos = vec3(field(obj, "pos"));
        r.spd = vec3(field(obj, "spd"));
        r.acl = vec3(field(obj, "acl"));
        r.hed = vec3(field(obj, "hed"));
      } catch (const std::out_of_range& e) {
        skip(std::string("missing-key:") + e.what());
        continue;
      } catch (const std::exception&) {
        skip("malformed-field");
        continue;
      }
      auto it = truth.find(id);
      if (it == truth.end()) {
        skip("unmatched-ground-truth");
        continue;
      }
      t = &it->second;
      auto type = from_veremi_code(t->code);
      if (!type) {
        skip("unknown-attacker-type:" + std::to_string(t->code));
        continue;
      }
      r.true_sender_id = t->sender;
      const double tol = mapping.tolerance;
      const bool diverged = diverges(r.pos, t->pos, tol) || diverges(r.spd, t->spd, tol) ||
                            diverges(r.acl, t->acl, tol) || diverges(r.hed, t->hed, tol);
      r.label = (diverged || *type != AttackType::Genuine) ? 1 : 0;
      r.attack_type = *type;
      try {
        validate(r);
      } catch (const RejectedRecord&) {
        skip("rejected-record");
        continue;
      }
      auto dup = by_id.find(id);
      if (dup != by_id.end()) {
        ++diag.duplicates;
        if (r.recv_time < out[dup->second].second.recv_time) out[dup->second].second = r;
        continue;
      }
      by_id.emplace(id, out.size());
      out.emplace_back(id, std::move(r));
    }
  }
  diag.accepted = out.size() + diag.duplicates;
  if (diagnostics != nullptr) *diagnostics = diag;
  const std::size_t considered = diag.accepted + diag.skipped_total();
  if (considered == 0) throw IngestError("no reception entries found under " + log_dir.string());
  if (static_cast<double>(diag.skipped_total()) > mapping.max_skip_fraction * static_cast<double>(considered)) {
    throw IngestError(std::to_string(diag.skipped_total()) + " of " + std::to_string(considered) +
                      " entries skipped, above the " + std::to_string(mapping.max_skip_fraction) + " budget: " +
                      diag.to_json().dump());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second.recv_time != b.second.recv_time) return a.second.recv_time < b.second.recv_time;
    return a.first < b.first;
  });
  std::vector<BsmRecord> records;
  records.reserve(out.size());
  for (auto& [id, r] : out) records.push_back(std::move(r));
  return records;
}

std::pair<double, double> class_ratio(const std::vector<BsmRecord>& records) {
  if (records.empty()) throw IngestError("class_ratio of an empty record set");
  std::unordered_map<std::string, bool> vehicles;
  for (const auto& r : records) {
    auto& bad = vehicles[r.true_sender_id];
    bad = bad || r.label == 1;
  }
  std::size_t bad = 0;
  for (const auto& [id, b] : vehicles) bad += b ? 1 : 0;
  const double m = static_cast<double>(bad) / static_cast<double>(vehicles.size());
  return {m, 1.0 - m};
}

void SplitPlan::validate() const {
  if (fractions.empty()) throw ConfigError("split plan has no roles");
  if (!roles.empty() && roles.size() != fractions.size()) throw ConfigError("split plan roles/fractions mismatch");
  double sum = 0;
  for (double f : fractions) {
    if (!(f > 0)) throw ConfigError("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(ratio_tolerance >= 0)) throw ConfigError("ratio tolerance must be non-negative");
}

SplitResult split_by_time(const std::vector<BsmRecord>& records, const SplitPlan& plan) {
  plan.validate();
  const std::size_t k = plan.fractions.size();
  const std::size_t n = records.size();
  if (n < k) throw IngestError("cannot split " + std::to_string(n) + " records into " + std::to_string(k) + " slices");

  std::unordered_map<std::string, bool> misbehaving;
  for (const auto& r : records) {
    auto& b = misbehaving[r.true_sender_id];
    b = b || r.label == 1;
  }
  std::size_t bad = 0;
  for (const auto& [id, b] : misbehaving) bad += b ? 1 : 0;
  const std::size_t good = misbehaving.size() - bad;
  if (bad < k || good < k) {
    throw IngestError("ratio-preserving split into " + std::to_string(k) + " slices needs at least " +
                      std::to_string(k) + " misbehaving and " + std::to_string(k) +
                      " genuine vehicles; found " + std::to_string(bad) + " and " + std::to_string(good));
  }
  const double global = static_cast<double>(bad) / static_cast<double>(misbehaving.size());

  std::vector<std::size_t> slice_of(n);
  double acc = 0;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < k; ++s) {
    acc += plan.fractions[s];
    std::size_t end = s + 1 == k ? n : static_cast<std::size_t>(std::llround(acc * static_cast<double>(n)));
    end = std::clamp(end, begin, n);
    for (std::size_t i = begin; i < end; ++i) slice_of[i] = s;
    begin = end;
  }

  // groups[s][vehicle] = record indices of that vehicle currently in slice s
  std::vector<std::map<std::string, std::vector<std::size_t>>> groups(k);
  for (std::size_t i = 0; i < n; ++i) groups[slice_of[i]][records[i].true_sender_id].push_back(i);

  struct Tally {
    double bad = 0, vehicles = 0, records = 0;
  };
  auto tallies = [&]() {
    std::vector<Tally> t(k);
    for (std::size_t s = 0; s < k; ++s) {
      for (const auto& [id, idx] : groups[s]) {
        t[s].bad += misbehaving[id] ? 1 : 0;
        t[s].vehicles += 1;
        t[s].records += static_cast<double>(idx.size());
      }
    }
    return t;
  };
  auto violation = [&](const std::vector<Tally>& t) {
    double v = 0;
    for (const auto& x : t) {
      const double r = x.vehicles > 0 ? x.bad / x.vehicles : 0.0;
      v += std::max(0.0, std::abs(r - global) - plan.ratio_tolerance);
    }
    return v;
  };
  auto size_error = [&](const std::vector<Tally>& t) {
    double e = 0;
    for (std::size_t s = 0; s < k; ++s) e += std::abs(t[s].records - plan.fractions[s] * static_cast<double>(n));
    return e;
  };
  // Moves all records of vehicle `id` from slice `from` to slice `to`; if the
  // vehicle already has records in `to` the two groups are merged.
  auto shift = [&](std::vector<Tally>& t, const std::string& id, double count, std::size_t from, std::size_t to,
                   bool merge) {
    const double b = misbehaving[id] ? 1 : 0;
    t[from].bad -= b;
    t[from].vehicles -= 1;
    t[from].records -= count;
    if (!merge) {
      t[to].bad += b;
      t[to].vehicles += 1;
    }
    t[to].records += count;
  };
  auto move = [&](const std::string& id, std::size_t from, std::size_t to) {
    auto it = groups[from].find(id);
    auto& dst = groups[to][id];
    dst.insert(dst.end(), it->second.begin(), it->second.end());
    groups[from].erase(it);
  };

  std::set<std::string> moved;
  auto base = tallies();
  double current = violation(base);
  for (std::size_t iter = 0; current > 1e-12 && iter < 4 * misbehaving.size() + 16; ++iter) {
    double best_v = current, best_e = 0;
    struct Move {
      std::string a, b;
      std::size_t s, t;
    };
    std::optional<Move> best;
    auto consider = [&](const std::vector<Tally>& t, Move m) {
      const double v = violation(t), e = size_error(t);
      if (v < best_v - 1e-12 || (best && std::abs(v - best_v) <= 1e-12 && e < best_e)) {
        best_v = v;
        best_e = e;
        best = std::move(m);
      }
    };
    for (std::size_t s = 0; s < k; ++s) {
      for (std::size_t t = 0; t < k; ++t) {
        if (s == t) continue;
        for (const auto& [a, ai] : groups[t]) {
          const bool merge = groups[s].count(a) > 0;
          auto t1 = base;
          shift(t1, a, static_cast<double>(ai.size()), t, s, merge);
          consider(t1, {a, "", s, t});
          if (merge) continue;
          for (const auto& [b, bi] : groups[s]) {
            if (misbehaving[a] == misbehaving[b] || groups[t].count(b)) continue;
            auto t2 = t1;
            shift(t2, b, static_cast<double>(bi.size()), s, t, false);
            consider(t2, {a, b, s, t});
          }
        }
      }
    }
    if (!best) break;
    move(best->a, best->t, best->s);
    moved.insert(best->a);
    if (!best->b.empty()) {
      move(best->b, best->s, best->t);
      moved.insert(best->b);
    }
    base = tallies();
    current = violation(base);
  }
  if (current > 1e-12) {
    throw IngestError("cannot keep every slice within " + std::to_string(plan.ratio_tolerance) +
                      " of the global misbehaving ratio " + std::to_string(global) + " with " +
                      std::to_string(misbehaving.size()) + " vehicles; more vehicles per slice are required");
  }

  SplitResult out;
  out.slices.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    std::vector<std::size_t> idx;
    for (const auto& [id, v] : groups[s]) idx.insert(idx.end(), v.begin(), v.end());
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.slices[s].push_back(records[i]);
  }
  out.moved_vehicles.assign(moved.begin(), moved.end());
  return out;
}

nlohmann::json splits_manifest(const SplitPlan& plan, const SplitResult& split, const std::vector<std::string>& files) {
  nlohmann::json roles = nlohmann::json::array();
  for (std::size_t s = 0; s < split.slices.size(); ++s) {
    const auto& slice = split.slices[s];
    nlohmann::json entry = {{"role", s < plan.roles.size() ? plan.roles[s] : "slice" + std::to_string(s)},
                            {"fraction", plan.fractions[s]},
                            {"records", slice.size()},
                            {"file", s < files.size() ? files[s] : ""}};
    if (!slice.empty()) {
      entry["misbehaving_vehicle_ratio"] = class_ratio(slice).first;
      entry["first_recv_time"] = slice.front().recv_time;
      entry["last_recv_time"] = slice.back().recv_time;
    }
    roles.push_back(entry);
  }
  return {{"format", "mds-splits"}, {"version", 1}, {"roles", roles}, {"moved_vehicles", split.moved_vehicles}};
}

}  // namespace mds
