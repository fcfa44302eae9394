#include "mds/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mds/error.hpp"

namespace mds {

namespace {

int greedy_on(BatchNetwork& net, const NetworkParams& params, Eigen::MatrixXd& in, const DetectionState& s) {
  auto enc = s.features();
  std::copy(enc.begin(), enc.end(), in.data());
  auto acts = s.actions();
  for (std::size_t i = 0; i < acts.size(); ++i) in(static_cast<Eigen::Index>(enc.size() + i), 0) = acts[i];
  const auto& q = net.forward(params, in);
  return greedy_action({q(0, 0), q(1, 0)});
}

// S~: bounded pool with O(1) removal; order is irrelevant because sampling is uniform.
class ExperiencePool {
 public:
  explicit ExperiencePool(std::size_t capacity) : capacity_(capacity) {}

  void add(Experience e) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(e));
      return;
    }
    items_[evict_ % items_.size()] = std::move(e);
    ++evict_;
  }
  std::size_t size() const { return items_.size(); }
  Experience& at(std::size_t i) { return items_[i]; }
  // Removes the given (distinct) positions.
  void remove(std::vector<std::size_t> positions) {
    std::sort(positions.rbegin(), positions.rend());
    for (auto p : positions) {
      items_[p] = std::move(items_.back());
      items_.pop_back();
    }
  }

 private:
  std::size_t capacity_;
  std::size_t evict_ = 0;
  std::vector<Experience> items_;
};

class SelectionTrainer : public StepTrainer {
 public:
  SelectionTrainer(ExperiencePool& pool, SelectionAudit& audit) : pool_(pool), audit_(audit) {}

  void store(DqnAgent& agent, Experience e) override {
    pool_.add(e);
    agent.replay().push(std::move(e));
  }

  std::optional<double> train(DqnAgent& agent) override {
    const std::size_t n = agent.config().minibatch;
    if (pool_.size() < n) return std::nullopt;
    // Distinct positions so that pruning removes exactly the filtered transitions.
    std::vector<std::size_t> picks;
    picks.reserve(n);
    std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
    while (picks.size() < n) {
      auto p = pick(agent.rng());
      if (std::find(picks.begin(), picks.end(), p) == picks.end()) picks.push_back(p);
    }
    std::vector<const Experience*> batch;
    for (auto p : picks) batch.push_back(&pool_.at(p));
    auto outcome = experience_selection(agent, batch);
    std::vector<Experience> kept;
    for (auto k : outcome.kept) kept.push_back(*batch[k]);
    std::vector<std::size_t> drop;
    for (auto d : outcome.discarded) drop.push_back(picks[d]);
    audit_.samples_discarded += drop.size();
    pool_.remove(std::move(drop));
    if (kept.empty()) return std::nullopt;
    std::vector<const Experience*> kept_ptrs;
    for (const auto& e : kept) kept_ptrs.push_back(&e);
    std::vector<double> q_sa, y;
    const double loss = agent.train_step(kept_ptrs, &q_sa, &y);
    for (std::size_t i = 0; i < q_sa.size(); ++i) {
      if (q_sa[i] < y[i]) ++audit_.violations;
    }
    ++audit_.minibatches;
    audit_.samples_trained += kept.size();
    return loss;
  }

 private:
  ExperiencePool& pool_;
  SelectionAudit& audit_;
};

}  // namespace

void TransferConfig::validate() const {
  if (probe_episodes == 0) throw ConfigError("probe_episodes must be >= 1");
  if (!(trust_threshold >= 0 && trust_threshold <= 1)) throw ConfigError("trust threshold must lie in [0, 1]");
  if (buffer_capacity == 0) throw ConfigError("experience buffer capacity must be positive");
  if (!(selection_fraction >= 0 && selection_fraction <= 1)) throw ConfigError("selection_fraction must lie in [0, 1]");
  if (!(own_sample_fraction > 0 && own_sample_fraction <= 1)) throw ConfigError("own_sample_fraction must lie in (0, 1]");
}

std::size_t TransferConfig::selection_episodes(std::size_t total_episodes) const {
  return static_cast<std::size_t>(std::llround(selection_fraction * static_cast<double>(total_episodes)));
}

void to_json(nlohmann::json& j, const TransferConfig& c) {
  j = {{"probe_episodes", c.probe_episodes},         {"trust_threshold", c.trust_threshold},
       {"buffer_capacity", c.buffer_capacity},       {"selection_fraction", c.selection_fraction},
       {"own_sample_fraction", c.own_sample_fraction}, {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, TransferConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("probe_episodes", c.probe_episodes);
  get("trust_threshold", c.trust_threshold);
  get("buffer_capacity", c.buffer_capacity);
  get("selection_fraction", c.selection_fraction);
  get("own_sample_fraction", c.own_sample_fraction);
  get("rng_seed", c.rng_seed);
  c.validate();
}

double probe_return(const Policy& source, const std::vector<BsmRecord>& probe_records, std::size_t episodes,
                    const RewardConfig& target_rewards, std::uint64_t seed) {
  if (episodes == 0) throw ConfigError("probe needs at least one episode");
  DetectionEnv env = source.environment(probe_records);
  std::mt19937_64 rng(seed);
  double total = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    total += greedy_return(source.params, env, env.episode_order(rng), target_rewards);
  }
  return total;
}

std::vector<std::size_t> TrustReport::selected_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].selected) out.push_back(i);
  }
  return out;
}

TrustReport rank_sources(const std::vector<double>& returns, double threshold, const std::vector<std::string>& names) {
  if (returns.empty()) throw ConfigError("rank_sources needs at least one source");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("trust threshold must lie in [0, 1]");
  TrustReport report;
  report.threshold = threshold;
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    TrustEntry e;
    e.source = i < names.size() ? names[i] : "source" + std::to_string(i + 1);
    e.raw_return = returns[i];
    // A single source, or sources that all score the same, are fully trusted.
    e.scaled = span > 0 ? (returns[i] - *lo) / span : 1.0;
    e.trust = e.scaled;
    e.selected = e.trust >= threshold;
    report.entries.push_back(e);
  }
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.entries[a].scaled > report.entries[b].scaled;
  });
  for (std::size_t r = 0; r < order.size(); ++r) report.entries[order[r]].rank = r + 1;
  return report;
}

nlohmann::json trust_report_json(const TrustReport& report, const nlohmann::json& seeds) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& e : report.entries) {
    sources.push_back({{"source", e.source},
                       {"raw_return", e.raw_return},
                       {"scaled", e.scaled},
                       {"trust", e.trust},
                       {"rank", e.rank},
                       {"selected", e.selected}});
  }
  nlohmann::json j = {{"format", "mds-trust-report"}, {"version", 1}, {"threshold", report.threshold},
                      {"sources", sources}};
  if (!seeds.is_null()) j["seeds"] = seeds;
  return j;
}

std::vector<std::size_t> sample_allocation(const std::vector<double>& trusts, std::size_t buffer_size,
                                           std::vector<double>* eta_out) {
  if (trusts.empty()) throw ConfigError("sample allocation needs at least one source");
  double sum = 0;
  for (double t : trusts) {
    if (!(t >= 0) || !std::isfinite(t)) throw ConfigError("trust values must be finite and non-negative");
    sum += t;
  }
  if (!(sum > 0)) throw ConfigError("trust values sum to zero");
  std::vector<double> eta(trusts.size());
  std::vector<std::size_t> counts(trusts.size());
  std::vector<double> rem(trusts.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < trusts.size(); ++i) {
    eta[i] = trusts[i] / sum;
    const double exact = eta[i] * static_cast<double>(buffer_size);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(trusts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  // Floating error can leave assigned a hair off; walk the remainder order until the total is exact.
  for (std::size_t k = 0; assigned < buffer_size; k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  while (assigned > buffer_size) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  if (eta_out) *eta_out = std::move(eta);
  return counts;
}

CollectedSamples collect_source_samples(const Policy& source, const std::vector<BsmRecord>& source_records,
                                        std::size_t count, const TargetView& target, std::mt19937_64& rng) {
  CollectedSamples out;
  if (count == 0) return out;
  if (source_records.empty()) {
    out.shortfall = count;
    return out;
  }
  DetectionEnv src = source.environment(source_records);
  DetectionEnv tgt(source_records, target.features, target.standardizer, target.window, target.scope);
  auto order = src.episode_order(rng);
  EnvCursor cs(src, order), ct(tgt, order);
  BatchNetwork net(source.params.spec());
  Eigen::MatrixXd in(static_cast<Eigen::Index>(source.params.spec().encoding_size()), 1);
  std::vector<Experience> all;
  all.reserve(order.size());
  while (!cs.done()) {
    const int a = greedy_on(net, source.params, in, cs.state());
    Experience e;
    e.s = ct.state();
    e.a = a;
    e.label = ct.label();
    e.r = reward(a, e.label, target.rewards);
    e.terminal = ct.last();
    cs.act(a);
    ct.act(a);
    e.s_next = e.terminal ? e.s : ct.state();
    all.push_back(std::move(e));
  }
  if (count >= all.size()) {
    out.shortfall = count - all.size();
    out.experiences = std::move(all);
    return out;
  }
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  out.experiences.reserve(count);
  for (auto i : idx) out.experiences.push_back(std::move(all[i]));
  return out;
}

SelectionOutcome experience_selection(DqnAgent& agent, const std::vector<const Experience*>& batch) {
  SelectionOutcome out;
  if (batch.empty()) return out;
  agent.assess(batch, out.q_sa, out.y);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    (out.q_sa[i] >= out.y[i] ? out.kept : out.discarded).push_back(i);
  }
  return out;
}

TransferRun train_target(DqnAgent& agent, const DetectionEnv& target_env, const std::vector<SourceFeed>& sources,
                         const TargetView& view, const TransferConfig& config, std::size_t episodes,
                         std::mt19937_64& order_rng) {
  config.validate();
  TransferRun run;
  const std::size_t selection = sources.empty() ? 0 : std::min(config.selection_episodes(episodes), episodes);
  ExperiencePool pool(config.buffer_capacity);
  SelectionTrainer trainer(pool, run.audit);
  std::mt19937_64 collect_rng(config.rng_seed);
  std::vector<double> trusts;
  for (const auto& s : sources) trusts.push_back(s.trust);
  const double f = config.own_sample_fraction;
  const auto source_total = static_cast<std::size_t>(
      std::llround(static_cast<double>(target_env.size()) * (1.0 - f) / f));

  for (std::size_t e = 0; e < episodes; ++e) {
    EpisodeStats stats;
    if (e < selection) {
      std::vector<double> eta;
      auto quota = sample_allocation(trusts, source_total, &eta);
      std::vector<std::size_t> got(sources.size(), 0);
      std::size_t missing = 0;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        auto c = collect_source_samples(sources[i].policy, sources[i].records, quota[i], view, collect_rng);
        got[i] = c.experiences.size();
        missing += c.shortfall;
        for (auto& x : c.experiences) pool.add(std::move(x));
      }
      // Hand any shortfall to the sources that still had transitions to spare, by trust.
      if (missing > 0) {
        std::vector<double> spare_trust(sources.size(), 0.0);
        for (std::size_t i = 0; i < sources.size(); ++i) {
          if (got[i] == quota[i] && trusts[i] > 0) spare_trust[i] = trusts[i];
        }
        if (std::any_of(spare_trust.begin(), spare_trust.end(), [](double t) { return t > 0; })) {
          auto extra = sample_allocation(spare_trust, missing);
          missing = 0;
          for (std::size_t i = 0; i < sources.size(); ++i) {
            auto c = collect_source_samples(sources[i].policy, sources[i].records, extra[i], view, collect_rng);
            got[i] += c.experiences.size();
            missing += c.shortfall;
            for (auto& x : c.experiences) pool.add(std::move(x));
          }
        }
      }
      for (auto g : got) run.audit.source_samples += g;
      run.audit.source_shortfall += missing;
      stats = agent.run_episode(target_env, e, episodes, order_rng, &trainer);
      stats.phase = "selection";
    } else {
      stats = agent.run_episode(target_env, e, episodes, order_rng);
      stats.phase = "plain-dqn";
    }
    run.episodes.push_back(stats);
  }
  run.params = agent.params();
  return run;
}

std::string transfer_run_csv(const TransferRun& run) { return episodes_csv(run.episodes); }

}  // namespace mds
