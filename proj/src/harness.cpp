#include "mds/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "mds/error.hpp"
#include "mds/ingest.hpp"
#include "mds/toml.hpp"
#include "mds/trace_io.hpp"

namespace mds {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

FeatureConfig features_from(const nlohmann::json& kinds, double cap) {
  FeatureConfig c;
  c.layout.kinds.clear();
  for (const auto& k : kinds) {
    auto kind = feature_kind_from_string(k.get<std::string>());
    if (!kind) throw ConfigError("unknown feature '" + k.get<std::string>() + "'");
    c.layout.kinds.push_back(*kind);
  }
  c.interarrival_cap = cap;
  return c;
}

nlohmann::json data_json(const DataSource& d) {
  nlohmann::json j = d.gen;
  j.erase("rng_seed");  // scenario data seeds derive from the scenario seed
  if (d.trace) j["trace"] = d.trace->generic_string();
  return j;
}

void data_from(const nlohmann::json& j, DataSource& d) {
  from_json(j, d.gen);
  if (j.contains("trace")) d.trace = j.at("trace").get<std::string>();
}

bool trace_uses_dos(const std::vector<BsmRecord>& records) {
  return std::any_of(records.begin(), records.end(), [](const BsmRecord& r) { return is_dos_variant(r.attack_type); });
}

void require_timing(const FeatureConfig& features, bool dos, const std::string& role) {
  if (dos && !features.layout.has(FeatureKind::InterArrival)) {
    throw ConfigError(role + " data contains DoS variants but the feature layout lacks the inter-arrival feature");
  }
}

std::string source_name(std::size_t slot, AdversaryKind kind) {
  std::string base = "source" + std::to_string(slot + 1);
  if (kind == AdversaryKind::None) return base;
  return base + "-" + std::string(to_string(kind));
}

nlohmann::json audit_json(const SelectionAudit& a) {
  return {{"minibatches", a.minibatches},         {"samples_trained", a.samples_trained},
          {"samples_discarded", a.samples_discarded}, {"violations", a.violations},
          {"source_samples", a.source_samples},   {"source_shortfall", a.source_shortfall}};
}

std::vector<double> returns_of(const std::vector<EpisodeStats>& h) {
  std::vector<double> out;
  out.reserve(h.size());
  for (const auto& e : h) out.push_back(e.cumulative_reward);
  return out;
}

}  // namespace

MetricsRow metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw Error("harness", "metrics need at least one non-zero count");
  MetricsRow row;
  row.counts = c;
  const auto tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  row.accuracy = (tp + tn) / (tp + tn + fp + fn);
  row.precision_defined = c.tp + c.fp > 0;
  row.recall_defined = c.tp + c.fn > 0;
  row.precision = row.precision_defined ? tp / (tp + fp) : 0.0;
  row.recall = row.recall_defined ? tp / (tp + fn) : 0.0;
  const double s = row.precision + row.recall;
  row.f_score = s > 0 ? 2 * row.precision * row.recall / s : 0.0;
  return row;
}

nlohmann::json metrics_json(const MetricsRow& r) {
  return {{"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f_score", r.f_score},
          {"precision_defined", r.precision_defined},
          {"recall_defined", r.recall_defined},
          {"tp", r.counts.tp},
          {"tn", r.counts.tn},
          {"fp", r.counts.fp},
          {"fn", r.counts.fn}};
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::SC1: return "SC1";
    case Scenario::SC2: return "SC2";
    case Scenario::SC3: return "SC3";
  }
  return "?";
}

std::optional<Scenario> scenario_from_string(std::string_view s) {
  if (s == "SC1" || s == "sc1") return Scenario::SC1;
  if (s == "SC2" || s == "sc2") return Scenario::SC2;
  if (s == "SC3" || s == "sc3") return Scenario::SC3;
  return std::nullopt;
}

std::string_view to_string(AdversaryKind k) {
  switch (k) {
    case AdversaryKind::None: return "none";
    case AdversaryKind::Flip: return "flip";
    case AdversaryKind::Induction: return "induction";
  }
  return "?";
}

std::optional<AdversaryKind> adversary_from_string(std::string_view s) {
  if (s == "none" || s == "genuine") return AdversaryKind::None;
  if (s == "flip" || s == "label-flip") return AdversaryKind::Flip;
  if (s == "induction" || s == "policy-induction") return AdversaryKind::Induction;
  return std::nullopt;
}

std::string TransferVariant::name() const {
  std::ostringstream os;
  os << to_string(malicious) << '@' << threshold;
  return os.str();
}

TransferVariant TransferVariant::parse(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw ConfigError("variant '" + text + "' is not of the form kind@threshold");
  auto kind = adversary_from_string(text.substr(0, at));
  if (!kind) throw ConfigError("variant '" + text + "' names an unknown adversary");
  TransferVariant v;
  v.malicious = *kind;
  try {
    std::size_t used = 0;
    v.threshold = std::stod(text.substr(at + 1), &used);
    if (used != text.size() - at - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("variant '" + text + "' has a malformed threshold");
  }
  if (!(v.threshold >= 0 && v.threshold <= 1)) throw ConfigError("variant threshold must lie in [0, 1]");
  return v;
}

void ScenarioConfig::validate() const {
  if (source_count < 1) throw ConfigError("a scenario needs at least one source");
  if (source_episodes < 1 || target_episodes < 1) throw ConfigError("episode budgets must be >= 1");
  if (!(probe_fraction > 0 && probe_fraction < 1)) throw ConfigError("probe_fraction must lie in (0, 1)");
  if (source_features.layout.dim() == 0 || target_features.layout.dim() == 0) {
    throw ConfigError("feature layouts must not be empty");
  }
  agent_for(source_features).validate();
  agent_for(target_features).validate();
  transfer.validate();
  flip.validate();
  induction.validate();
  for (const auto& v : variants) {
    if (!(v.threshold >= 0 && v.threshold <= 1)) throw ConfigError("variant threshold must lie in [0, 1]");
  }
  if (!sources.trace) {
    sources.gen.validate();
    require_timing(source_features, sources.gen.uses_dos(), "source");
  }
  if (!target.trace) {
    target.gen.validate();
    require_timing(target_features, target.gen.uses_dos(), "target");
  }
  if (!test.trace) {
    test.gen.validate();
    require_timing(target_features, test.gen.uses_dos(), "test");
  }
}

AgentConfig ScenarioConfig::agent_for(const FeatureConfig& features) const {
  AgentConfig a = agent;
  a.network.feature_dim = features.layout.dim();
  return a;
}

ScenarioConfig ScenarioConfig::preset(Scenario s) {
  ScenarioConfig c;
  c.scenario = s;
  GenConfig g;
  g.n_vehicles = 24;
  g.duration = 60.0;
  g.misbehaving_fraction = 0.3;
  c.agent.network.window = 8;
  c.agent.network.recurrent_hidden = 16;
  c.agent.network.dense = {16};
  c.agent.optimizer.kind = OptimizerKind::Adam;
  c.agent.optimizer.learning_rate = 0.001;
  c.agent.train_every = 4;
  c.flip.zeta = 0.8;
  c.induction.epsilon_fgsm = 2.0;
  c.source_episodes = 30;
  c.variants = {{AdversaryKind::Flip, 0.5}, {AdversaryKind::Induction, 0.5}, {AdversaryKind::Flip, 0.8}};
  c.source_features.layout = FeatureLayout::kinematic();
  c.target_features.layout = FeatureLayout::kinematic();
  switch (s) {
    case Scenario::SC1:
      g.attack_types = {AttackType::RandomPosition};
      c.sources.gen = c.target.gen = c.test.gen = g;
      break;
    case Scenario::SC2:
      g.dos_period = 0.2;
      c.source_features.layout = FeatureLayout::kinematic_with_timing();
      c.target_features.layout = FeatureLayout::kinematic_with_timing();
      c.sources.gen = g;
      c.sources.gen.attack_types = {AttackType::DoS, AttackType::DoSRandom, AttackType::DoSDisruptive,
                                    AttackType::DoSRandomSybil};
      c.target.gen = g;
      c.target.gen.attack_types = {AttackType::DoS, AttackType::DoSDisruptive};
      c.test.gen = g;
      c.test.gen.attack_types = {AttackType::DoSRandomSybil};
      break;
    case Scenario::SC3:
      c.sources.gen = g;
      c.sources.gen.attack_types = {AttackType::ConstantPosition, AttackType::ConstantPositionOffset,
                                    AttackType::RandomPosition, AttackType::RandomPositionOffset};
      c.target.gen = g;
      c.target.gen.attack_types = {AttackType::ConstantPosition};
      c.test.gen = c.sources.gen;
      c.target_features.layout = FeatureLayout::only(FeatureKind::Position);
      break;
  }
  // Each source slice (120 s / 3) holds more records than the target's training slice (0.8 * 40 s).
  c.sources.gen.duration = 120.0;
  c.target.gen.duration = 40.0;
  return c;
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario s = Scenario::SC1;
    if (j.contains("scenario")) {
      auto parsed = scenario_from_string(j.at("scenario").get<std::string>());
      if (!parsed) throw ConfigError("scenario must be SC1, SC2 or SC3");
      s = *parsed;
    }
    ScenarioConfig c = ScenarioConfig::preset(s);
    auto get = [&](const nlohmann::json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "seed", c.seed);
    get(j, "source_count", c.source_count);
    get(j, "source_episodes", c.source_episodes);
    get(j, "target_episodes", c.target_episodes);
    get(j, "probe_fraction", c.probe_fraction);
    get(j, "split_tolerance", c.split_tolerance);
    get(j, "concurrent_sources", c.concurrent_sources);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(TransferVariant::parse(v.get<std::string>()));
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("sources")) data_from(d.at("sources"), c.sources);
      if (d.contains("target")) data_from(d.at("target"), c.target);
      if (d.contains("test")) data_from(d.at("test"), c.test);
    }
    if (j.contains("features")) {
      const auto& f = j.at("features");
      double cap = f.value("interarrival_cap", c.source_features.interarrival_cap);
      if (f.contains("source")) c.source_features = features_from(f.at("source"), cap);
      if (f.contains("target")) c.target_features = features_from(f.at("target"), cap);
      c.source_features.interarrival_cap = c.target_features.interarrival_cap = cap;
    }
    if (j.contains("agent")) from_json(j.at("agent"), c.agent);
    if (j.contains("transfer")) {
      auto t = j.at("transfer");
      // The collection seed derives from the scenario seed.
      t.erase("rng_seed");
      nlohmann::json merged = c.transfer;
      merged.update(t);
      from_json(merged, c.transfer);
    }
    if (j.contains("flip")) get(j.at("flip"), "zeta", c.flip.zeta);
    if (j.contains("induction")) {
      const auto& i = j.at("induction");
      get(i, "epsilon_fgsm", c.induction.epsilon_fgsm);
      get(i, "replica_fraction", c.induction.replica_fraction);
      get(i, "policy_episodes", c.induction.policy_episodes);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  auto j = load_toml(path);
  // Trace paths are relative to the config file.
  if (j.contains("data")) {
    for (auto& [role, d] : j["data"].items()) {
      if (d.contains("trace")) {
        std::filesystem::path p = d["trace"].get<std::string>();
        if (p.is_relative()) d["trace"] = (path.parent_path() / p).generic_string();
      }
    }
  }
  return scenario_from_json(j);
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  std::vector<std::string> variants;
  for (const auto& v : c.variants) variants.push_back(v.name());
  auto kinds = [](const FeatureConfig& f) {
    std::vector<std::string> out;
    for (auto k : f.layout.kinds) out.emplace_back(to_string(k));
    return out;
  };
  nlohmann::json transfer = c.transfer;
  transfer.erase("rng_seed");
  return {{"scenario", std::string(to_string(c.scenario))},
          {"seed", c.seed},
          {"source_count", c.source_count},
          {"source_episodes", c.source_episodes},
          {"target_episodes", c.target_episodes},
          {"probe_fraction", c.probe_fraction},
          {"split_tolerance", c.split_tolerance},
          {"concurrent_sources", c.concurrent_sources},
          {"variants", variants},
          {"data", {{"sources", data_json(c.sources)}, {"target", data_json(c.target)}, {"test", data_json(c.test)}}},
          {"features",
           {{"source", kinds(c.source_features)},
            {"target", kinds(c.target_features)},
            {"interarrival_cap", c.source_features.interarrival_cap}}},
          {"agent", c.agent},
          {"transfer", transfer},
          {"flip", {{"zeta", c.flip.zeta}}},
          {"induction",
           {{"epsilon_fgsm", c.induction.epsilon_fgsm},
            {"replica_fraction", c.induction.replica_fraction},
            {"policy_episodes", c.induction.policy_episodes}}}};
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix(seed ^ splitmix(h));
}

ScenarioData prepare_data(const ScenarioConfig& config) {
  auto load = [&](const DataSource& ds, std::string_view tag) {
    if (ds.trace) return read_trace_csv(*ds.trace);
    GenConfig g = ds.gen;
    g.rng_seed = derive_seed(config.seed, tag);
    return generate(g).records;
  };
  ScenarioData data;
  auto source_all = load(config.sources, "data/sources");
  auto target_all = load(config.target, "data/target");
  data.test = load(config.test, "data/test");
  require_timing(config.source_features, trace_uses_dos(source_all), "source");
  require_timing(config.target_features, trace_uses_dos(target_all) || trace_uses_dos(data.test), "target");
  if (data.test.empty()) throw Error("harness", "test data is empty");

  SplitPlan sp;
  for (std::size_t i = 0; i < config.source_count; ++i) {
    sp.roles.push_back("source" + std::to_string(i + 1));
    sp.fractions.push_back(1.0 / static_cast<double>(config.source_count));
  }
  sp.ratio_tolerance = config.split_tolerance;
  auto ss = split_by_time(source_all, sp);
  SplitPlan tp{{"target-train", "target-probe"}, {1.0 - config.probe_fraction, config.probe_fraction},
               config.split_tolerance};
  auto ts = split_by_time(target_all, tp);

  std::vector<std::string> source_files, target_files{"data/target-train.csv", "data/target-probe.csv"};
  for (const auto& r : sp.roles) source_files.push_back("data/" + r + ".csv");
  const auto [mis, gen] = class_ratio(data.test);
  data.splits = {{"sources", splits_manifest(sp, ss, source_files)},
                 {"target", splits_manifest(tp, ts, target_files)},
                 {"test",
                  {{"file", "data/test.csv"},
                   {"records", data.test.size()},
                   {"misbehaving_fraction", mis},
                   {"genuine_fraction", gen}}}};
  data.sources = std::move(ss.slices);
  data.target_train = std::move(ts.slices[0]);
  data.target_probe = std::move(ts.slices[1]);
  return data;
}

TrainedSource train_source(const ScenarioConfig& config, std::size_t slot, const std::vector<BsmRecord>& records,
                           AdversaryKind adversary) {
  if (records.empty()) throw Error("harness", "source slice " + std::to_string(slot + 1) + " is empty");
  const AgentConfig ac = config.agent_for(config.source_features);
  const std::string slot_tag = std::to_string(slot);
  TrainedSource out;
  out.name = source_name(slot, adversary);
  out.slot = slot;
  out.adversary = adversary;
  out.records = records;
  FlipResult flipped;
  FlipConfig fc = config.flip;
  fc.rng_seed = derive_seed(config.seed, "flip/" + slot_tag);
  if (adversary == AdversaryKind::Flip) {
    flipped = flip_labels(records, fc);
    out.records = flipped.records;
    out.manifest = flip_manifest(fc, flipped);
  }
  out.policy.features = config.source_features;
  out.policy.scope = ac.scope;
  out.policy.standardizer = Standardizer::fit(extract_features(out.records, config.source_features));

  // Genuine and poisoned trainings of one slot share the agent seed and episode orders.
  DqnAgent agent(ac, derive_seed(config.seed, "source-agent/" + slot_tag));
  std::mt19937_64 order_rng(derive_seed(config.seed, "source-order/" + slot_tag));
  std::shared_ptr<PolicyInduction> hook;
  AdversarialPolicy adv;
  InductionConfig ic = config.induction;
  ic.rng_seed = derive_seed(config.seed, "induction/" + slot_tag);
  if (adversary == AdversaryKind::Induction) {
    Policy pipeline = out.policy;
    pipeline.params = agent.params();
    adv = build_adversarial_policy(records, pipeline, ic, ac);
    hook = std::make_shared<PolicyInduction>(adv.params, ac, ic);
    agent.install_hook(hook);
  }
  out.policy.params = agent.params();
  DetectionEnv env = out.policy.environment(out.records);
  for (std::size_t e = 0; e < config.source_episodes; ++e) {
    out.history.push_back(agent.run_episode(env, e, config.source_episodes, order_rng));
  }
  out.policy.params = agent.params();
  if (hook) {
    agent.remove_hook();
    out.manifest = induction_manifest(ic, adv, hook->stats());
  }
  return out;
}

double final_fraction_mean(const std::vector<EpisodeStats>& history, double fraction) {
  if (history.empty()) throw Error("harness", "empty training history");
  auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(history.size())));
  n = std::clamp<std::size_t>(n, 1, history.size());
  double s = 0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) s += history[i].cumulative_reward;
  return s / static_cast<double>(n);
}

std::optional<std::size_t> episodes_to_reach(const std::vector<EpisodeStats>& run, double best) {
  for (std::size_t i = 0; i < run.size(); ++i) {
    if (run[i].cumulative_reward >= best) return i + 1;
  }
  return std::nullopt;
}

double best_return(const std::vector<EpisodeStats>& run) {
  if (run.empty()) throw Error("harness", "empty run");
  double b = run.front().cumulative_reward;
  for (const auto& e : run) b = std::max(b, e.cumulative_reward);
  return b;
}

namespace {

void write_text(const std::optional<std::filesystem::path>& dir, const std::string& rel, const std::string& text) {
  if (!dir) return;
  const auto path = *dir / rel;
  std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void write_trace(const std::optional<std::filesystem::path>& dir, const std::string& rel,
                 const std::vector<BsmRecord>& records) {
  if (!dir) return;
  std::ostringstream os;
  write_trace_csv(os, records);
  write_text(dir, rel, os.str());
}

void write_source(const std::optional<std::filesystem::path>& dir, const TrainedSource& s) {
  if (!dir) return;
  const std::string base = "sources/" + s.name + "/";
  nlohmann::json info = {{"name", s.name}, {"slot", s.slot + 1}, {"adversary", std::string(to_string(s.adversary))}};
  write_text(dir, base + "policy.json", policy_checkpoint(s.policy, "", {{"info", info}}));
  write_text(dir, base + "episodes.csv", episodes_csv(s.history));
  write_trace(dir, base + "trace.csv", s.records);
  if (!s.manifest.is_null()) write_text(dir, base + "attack_manifest.json", s.manifest.dump(2) + "\n");
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  ScenarioResult result;
  result.config = config;

  ScenarioData data = prepare_data(config);
  result.splits = data.splits;
  write_text(out_dir, "splits.json", data.splits.dump(2) + "\n");
  for (std::size_t i = 0; i < data.sources.size(); ++i) {
    write_trace(out_dir, "data/source" + std::to_string(i + 1) + ".csv", data.sources[i]);
  }
  write_trace(out_dir, "data/target-train.csv", data.target_train);
  write_trace(out_dir, "data/target-probe.csv", data.target_probe);
  write_trace(out_dir, "data/test.csv", data.test);

  // Roster: genuine sources in every slot, plus a poisoned twin of the last
  // slot for each adversary any variant asks for.
  const std::size_t last = config.source_count - 1;
  std::vector<std::pair<std::size_t, AdversaryKind>> jobs;
  for (std::size_t i = 0; i < config.source_count; ++i) jobs.emplace_back(i, AdversaryKind::None);
  std::set<AdversaryKind> poisoned;
  for (const auto& v : config.variants) {
    if (v.malicious != AdversaryKind::None) poisoned.insert(v.malicious);
  }
  for (auto k : poisoned) jobs.emplace_back(last, k);

  const auto policy = config.concurrent_sources ? std::launch::async : std::launch::deferred;
  std::vector<std::future<TrainedSource>> pending;
  for (const auto& [slot, kind] : jobs) {
    pending.push_back(std::async(policy, [&config, &data, slot = slot, kind = kind] {
      return train_source(config, slot, data.sources[slot], kind);
    }));
  }
  for (auto& f : pending) {
    result.sources.push_back(f.get());
    write_source(out_dir, result.sources.back());
  }
  auto find_source = [&](std::size_t slot, AdversaryKind kind) -> const TrainedSource& {
    for (const auto& s : result.sources) {
      if (s.slot == slot && s.adversary == kind) return s;
    }
    throw Error("harness", "source " + source_name(slot, kind) + " was not trained");
  };

  const auto target_rewards = config.agent.reward;
  const std::uint64_t probe_seed = derive_seed(config.seed, "probe");
  for (const auto& s : result.sources) {
    result.probe_returns[s.name] =
        probe_return(s.policy, data.target_probe, config.transfer.probe_episodes, target_rewards, probe_seed);
  }

  TargetView view;
  view.features = config.target_features;
  view.standardizer = Standardizer::fit(extract_features(data.target_train, config.target_features));
  view.window = config.agent.network.window;
  view.scope = config.agent.scope;
  view.rewards = target_rewards;
  view.gamma = config.agent.gamma;
  const AgentConfig tac = config.agent_for(config.target_features);
  const DetectionEnv target_env(data.target_train, view.features, view.standardizer, view.window, view.scope);
  const DetectionEnv test_env(data.test, view.features, view.standardizer, view.window, view.scope);
  TransferConfig tc = config.transfer;
  tc.rng_seed = derive_seed(config.seed, "collect");
  const std::uint64_t agent_seed = derive_seed(config.seed, "target-agent");
  const std::uint64_t order_seed = derive_seed(config.seed, "target-order");

  auto run_target = [&](const std::vector<SourceFeed>& feeds) {
    DqnAgent agent(tac, agent_seed);
    std::mt19937_64 order_rng(order_seed);
    return train_target(agent, target_env, feeds, view, tc, config.target_episodes, order_rng);
  };
  auto finish = [&](RunResult& r, const std::string& dir) {
    r.test = metrics(evaluate(r.run.params, test_env));
    Policy p{r.run.params, view.features, view.standardizer, view.scope};
    write_text(out_dir, dir + "/policy.json", policy_checkpoint(p));
    write_text(out_dir, dir + "/transfer_run.csv", transfer_run_csv(r.run));
  };

  result.baseline.name = "baseline";
  result.baseline.run = run_target({});
  finish(result.baseline, "runs/baseline");
  write_text(out_dir, "episodes.csv", episodes_csv(result.baseline.run.episodes));

  for (const auto& v : config.variants) {
    RunResult r;
    r.name = v.name();
    r.variant = v;
    std::vector<const TrainedSource*> roster;
    for (std::size_t i = 0; i < config.source_count; ++i) {
      roster.push_back(&find_source(i, i == last ? v.malicious : AdversaryKind::None));
    }
    std::vector<double> returns;
    std::vector<std::string> names;
    for (const auto* s : roster) {
      returns.push_back(result.probe_returns.at(s->name));
      names.push_back(s->name);
    }
    r.trust = rank_sources(returns, v.threshold, names);
    std::vector<SourceFeed> feeds;
    for (auto i : r.trust->selected_indices()) {
      feeds.push_back({roster[i]->name, roster[i]->policy, roster[i]->records, r.trust->entries[i].trust});
    }
    if (feeds.empty()) std::cerr << "warning: " << r.name << ": no source passed the trust threshold; training tabula rasa\n";
    r.run = run_target(feeds);
    const std::string dir = "runs/" + r.name;
    nlohmann::json seeds = {{"probe", probe_seed}, {"collect", tc.rng_seed}, {"target_agent", agent_seed}};
    write_text(out_dir, dir + "/trust_report.json", trust_report_json(*r.trust, seeds).dump(2) + "\n");
    finish(r, dir);
    result.variants.push_back(std::move(r));
  }

  if (out_dir) write_artifacts(result, *out_dir);
  return result;
}

nlohmann::json summary_json(const ScenarioResult& result) {
  const auto& cfg = result.config;
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : result.sources) {
    sources.push_back({{"name", s.name},
                       {"slot", s.slot + 1},
                       {"adversary", std::string(to_string(s.adversary))},
                       {"records", s.records.size()},
                       {"probe_return", result.probe_returns.count(s.name) ? result.probe_returns.at(s.name) : 0.0},
                       {"final_quartile_mean", final_fraction_mean(s.history, 0.25)},
                       {"returns", returns_of(s.history)},
                       {"manifest", s.manifest}});
  }
  const double baseline_best = best_return(result.baseline.run.episodes);
  auto run_json = [&](const RunResult& r) {
    nlohmann::json j = {{"name", r.name},
                        {"returns", returns_of(r.run.episodes)},
                        {"best_return", best_return(r.run.episodes)},
                        {"final10_mean", final_fraction_mean(r.run.episodes, 10.0 / static_cast<double>(r.run.episodes.size()))},
                        {"test", metrics_json(r.test)},
                        {"audit", audit_json(r.run.audit)}};
    if (r.variant) {
      j["adversary"] = std::string(to_string(r.variant->malicious));
      j["threshold"] = r.variant->threshold;
      auto reach = episodes_to_reach(r.run.episodes, baseline_best);
      j["episodes_to_baseline_best"] = reach ? nlohmann::json(*reach) : nlohmann::json(nullptr);
    }
    if (r.trust) j["trust"] = trust_report_json(*r.trust);
    return j;
  };
  nlohmann::json runs = nlohmann::json::array();
  runs.push_back(run_json(result.baseline));
  for (const auto& r : result.variants) runs.push_back(run_json(r));
  return {{"format", "mds-scenario-summary"},
          {"version", kSummaryVersion},
          {"scenario", std::string(to_string(cfg.scenario))},
          {"seed", cfg.seed},
          {"target_episodes", cfg.target_episodes},
          {"baseline_best_return", baseline_best},
          {"config", scenario_to_json(cfg)},
          {"splits", result.splits},
          {"sources", sources},
          {"runs", runs}};
}

Report report(const nlohmann::json& summary) {
  std::vector<std::string> missing;
  for (const char* key : {"version", "scenario", "target_episodes", "runs"}) {
    if (!summary.contains(key)) missing.push_back(key);
  }
  if (summary.contains("runs")) {
    if (!summary.at("runs").is_array() || summary.at("runs").empty()) {
      missing.push_back("runs[0] (baseline)");
    } else {
      for (std::size_t i = 0; i < summary.at("runs").size(); ++i) {
        const auto& r = summary.at("runs")[i];
        for (const char* key : {"name", "returns", "test"}) {
          if (!r.contains(key)) missing.push_back("runs[" + std::to_string(i) + "]." + key);
        }
        if (r.contains("test")) {
          for (const char* key : {"accuracy", "precision", "recall", "f_score", "tp", "tn", "fp", "fn"}) {
            if (!r.at("test").contains(key)) missing.push_back("runs[" + std::to_string(i) + "].test." + key);
          }
        }
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "incomplete summary; missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw Error("harness", msg);
  }
  if (summary.at("version").get<int>() != kSummaryVersion) {
    throw Error("harness", "unsupported summary version " + summary.at("version").dump());
  }

  const auto& runs = summary.at("runs");
  const auto budget = summary.at("target_episodes").get<std::size_t>();
  const auto& base = runs[0];
  double best = -INFINITY;
  for (const auto& v : base.at("returns")) best = std::max(best, v.get<double>());

  Report rep;
  std::ostringstream curves;
  curves << "episode";
  for (const auto& r : runs) curves << ',' << r.at("name").get<std::string>();
  curves << '\n';
  std::size_t rows = 0;
  for (const auto& r : runs) rows = std::max(rows, r.at("returns").size());
  for (std::size_t e = 0; e < rows; ++e) {
    curves << e;
    for (const auto& r : runs) {
      curves << ',';
      if (e < r.at("returns").size()) curves << r.at("returns")[e].get<double>();
    }
    curves << '\n';
  }
  rep.curves_csv = curves.str();

  std::ostringstream mcsv, text;
  mcsv << "run,accuracy,precision,recall,f_score,tp,tn,fp,fn\n";
  text << "Scenario " << summary.at("scenario").get<std::string>();
  if (summary.contains("seed")) text << " (seed " << summary.at("seed") << ")";
  text << "\n\nDetection on the test set\n";
  text << std::left << std::setw(18) << "run" << std::right << std::setw(10) << "accuracy" << std::setw(11)
       << "precision" << std::setw(9) << "recall" << std::setw(9) << "F" << '\n';
  for (const auto& r : runs) {
    const auto& t = r.at("test");
    const auto name = r.at("name").get<std::string>();
    mcsv << name << ',' << t.at("accuracy").get<double>() << ',' << t.at("precision").get<double>() << ','
         << t.at("recall").get<double>() << ',' << t.at("f_score").get<double>() << ',' << t.at("tp") << ','
         << t.at("tn") << ',' << t.at("fp") << ',' << t.at("fn") << '\n';
    text << std::left << std::setw(18) << name << std::right << std::setw(10) << fixed(t.at("accuracy").get<double>(), 4)
         << std::setw(11) << fixed(t.at("precision").get<double>(), 4) << std::setw(9)
         << fixed(t.at("recall").get<double>(), 4) << std::setw(9) << fixed(t.at("f_score").get<double>(), 4) << '\n';
  }
  rep.metrics_csv = mcsv.str();

  std::ostringstream scsv;
  scsv << "run,baseline_best_return,episodes_to_reach,budget,reduction\n";
  text << "\nEpisodes to reach the baseline's best return (" << fixed(best, 2) << ", budget " << budget << ")\n";
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const auto& r = runs[i];
    std::optional<std::size_t> reach;
    for (std::size_t e = 0; e < r.at("returns").size(); ++e) {
      if (r.at("returns")[e].get<double>() >= best) {
        reach = e + 1;
        break;
      }
    }
    const auto name = r.at("name").get<std::string>();
    scsv << name << ',' << best << ',';
    text << std::left << std::setw(18) << name << std::right;
    if (reach) {
      const double reduction = 1.0 - static_cast<double>(*reach) / static_cast<double>(budget);
      scsv << *reach << ',' << budget << ',' << reduction << '\n';
      text << std::setw(6) << *reach << "  (" << fixed(100 * reduction, 1) << "% fewer)\n";
    } else {
      scsv << ",," << budget << ",\n";
      text << "  not reached\n";
    }
  }
  if (runs.size() == 1) text << "(no transfer runs)\n";
  rep.speedup_csv = scsv.str();

  if (summary.contains("sources") && !summary.at("sources").empty()) {
    text << "\nSources (probe return on the target, final-quartile training reward)\n";
    for (const auto& s : summary.at("sources")) {
      text << std::left << std::setw(22) << s.at("name").get<std::string>() << std::right << std::setw(12)
           << fixed(s.at("probe_return").get<double>(), 1) << std::setw(12)
           << fixed(s.at("final_quartile_mean").get<double>(), 1) << '\n';
    }
  }
  rep.text = text.str();
  return rep;
}

void write_artifacts(const ScenarioResult& result, const std::filesystem::path& out_dir) {
  const auto summary = summary_json(result);
  const std::optional<std::filesystem::path> dir = out_dir;
  write_text(dir, "summary.json", summary.dump(2) + "\n");
  const auto rep = report(summary);
  write_text(dir, "report.txt", rep.text);
  write_text(dir, "curves.csv", rep.curves_csv);
  write_text(dir, "metrics.csv", rep.metrics_csv);
  write_text(dir, "episodes_to_best.csv", rep.speedup_csv);
}

int exit_code_for_stage(const std::string& stage) {
  static const std::map<std::string, int> codes{
      {"config", 2},  {"io", 3},         {"ingest", 4},    {"trace", 5},     {"shape", 6},    {"numeric", 7},
      {"checkpoint", 8}, {"agent", 9},   {"adversary", 10}, {"transfer", 11}, {"harness", 12}};
  auto it = codes.find(stage);
  return it == codes.end() ? 1 : it->second;
}

}  // namespace mds
