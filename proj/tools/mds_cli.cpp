#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mds/error.hpp"
#include "mds/harness.hpp"
#include "mds/ingest.hpp"
#include "mds/synthgen.hpp"
#include "mds/toml.hpp"
#include "mds/trace_io.hpp"

namespace fs = std::filesystem;
using namespace mds;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string scenario;
  std::optional<double> tth;
  std::string adversary;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, text);
}

ScenarioConfig scenario_config(const Common& c) {
  ScenarioConfig cfg;
  if (!c.config.empty()) {
    cfg = load_scenario_config(c.config);
    if (!c.scenario.empty() && scenario_from_string(c.scenario) != cfg.scenario) {
      throw ConfigError("--scenario " + c.scenario + " disagrees with the config file");
    }
  } else {
    auto s = scenario_from_string(c.scenario.empty() ? "SC1" : c.scenario);
    if (!s) throw ConfigError("--scenario must be sc1, sc2 or sc3");
    cfg = ScenarioConfig::preset(*s);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.tth || !c.adversary.empty()) {
    TransferVariant v;
    v.malicious = AdversaryKind::Flip;
    v.threshold = 0.8;
    if (!c.adversary.empty()) {
      auto k = adversary_from_string(c.adversary);
      if (!k) throw ConfigError("--adversary must be none, flip or induction");
      v.malicious = *k;
    }
    if (c.tth) v.threshold = *c.tth;
    cfg.variants = {v};
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, Common& c, bool scenario_flags) {
  sub->add_option("--config", c.config, "TOML configuration file");
  sub->add_option("--seed", c.seed, "global seed");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  if (scenario_flags) {
    sub->add_option("--scenario", c.scenario, "sc1 | sc2 | sc3");
    sub->add_option("--tth", c.tth, "trust threshold in [0, 1]");
    sub->add_option("--adversary", c.adversary, "none | flip | induction");
  }
}

struct LoadedSource {
  std::string name;
  Policy policy;
  std::vector<BsmRecord> records;
};

LoadedSource load_source_dir(const fs::path& dir) {
  LoadedSource s;
  nlohmann::json extra;
  s.policy = parse_policy_checkpoint(read_file(dir / "policy.json"), &extra);
  s.records = read_trace_csv(dir / "trace.csv");
  s.name = dir.filename().string();
  if (extra.contains("info") && extra["info"].contains("name")) s.name = extra["info"]["name"].get<std::string>();
  return s;
}

int cmd_gen(const Common& c, bool veremi) {
  GenConfig g;
  if (!c.config.empty()) {
    auto j = load_toml(c.config);
    from_json(j.contains("gen") ? j.at("gen") : j, g);
  }
  if (c.seed) g.rng_seed = *c.seed;
  g.validate();
  const auto trace = generate(g);
  const fs::path out = c.out;
  write_trace_csv(out / "trace.csv", trace.records);
  write(out / "generation_manifest.json", generation_manifest(g, trace).dump(2) + "\n");
  if (veremi) export_veremi(trace, out / "veremi", out / "veremi" / "groundtruth.json");
  std::cout << "wrote " << trace.records.size() << " records to " << (out / "trace.csv").string() << '\n';
  return 0;
}

int cmd_ingest(const Common& c, std::string logs, std::string truth) {
  FieldMapping mapping;
  if (!c.config.empty()) {
    auto j = load_toml(c.config);
    mapping = mapping_from_json(j);
    const fs::path base = fs::path(c.config).parent_path();
    if (logs.empty() && j.contains("log_dir")) logs = (base / j.at("log_dir").get<std::string>()).string();
    if (truth.empty() && j.contains("ground_truth")) truth = (base / j.at("ground_truth").get<std::string>()).string();
  }
  if (logs.empty() || truth.empty()) throw ConfigError("ingest needs --logs and --truth (or log_dir / ground_truth in the config)");
  IngestDiagnostics diag;
  auto records = parse_dataset(logs, truth, mapping, &diag);
  const fs::path out = c.out;
  write_trace_csv(out / "trace.csv", records);
  write(out / "ingest_diagnostics.json", diag.to_json().dump(2) + "\n");
  std::cout << "accepted " << diag.accepted << " of " << diag.lines << " lines (" << diag.skipped_total()
            << " skipped, " << diag.duplicates << " duplicates)\n";
  return 0;
}

int cmd_train_source(const Common& c, std::size_t slot) {
  auto cfg = scenario_config(c);
  if (slot < 1 || slot > cfg.source_count) throw ConfigError("--slot must lie in [1, source_count]");
  auto kind = c.adversary.empty() ? AdversaryKind::None : *adversary_from_string(c.adversary);
  auto data = prepare_data(cfg);
  auto s = train_source(cfg, slot - 1, data.sources[slot - 1], kind);
  const fs::path out = c.out;
  nlohmann::json info = {{"name", s.name}, {"slot", slot}, {"adversary", std::string(to_string(kind))}};
  write(out / "policy.json", policy_checkpoint(s.policy, "", {{"info", info}}));
  write(out / "episodes.csv", episodes_csv(s.history));
  write_trace_csv(out / "trace.csv", s.records);
  if (!s.manifest.is_null()) write(out / "attack_manifest.json", s.manifest.dump(2) + "\n");
  std::cout << s.name << ": final-quartile mean reward " << final_fraction_mean(s.history, 0.25) << '\n';
  return 0;
}

TrustReport rank(const ScenarioConfig& cfg, const std::vector<LoadedSource>& sources,
                 const std::vector<BsmRecord>& probe, double tth) {
  std::vector<double> returns;
  std::vector<std::string> names;
  const auto seed = derive_seed(cfg.seed, "probe");
  for (const auto& s : sources) {
    returns.push_back(probe_return(s.policy, probe, cfg.transfer.probe_episodes, cfg.agent.reward, seed));
    names.push_back(s.name);
  }
  return rank_sources(returns, tth, names);
}

int cmd_rank(const Common& c, const std::vector<std::string>& dirs) {
  auto cfg = scenario_config(c);
  if (dirs.empty()) throw ConfigError("rank-sources needs at least one --sources directory");
  std::vector<LoadedSource> sources;
  for (const auto& d : dirs) sources.push_back(load_source_dir(d));
  auto data = prepare_data(cfg);
  const double tth = c.tth.value_or(cfg.transfer.trust_threshold);
  auto report = rank(cfg, sources, data.target_probe, tth);
  write(fs::path(c.out) / "trust_report.json",
        trust_report_json(report, {{"probe", derive_seed(cfg.seed, "probe")}}).dump(2) + "\n");
  for (const auto& e : report.entries) {
    std::cout << e.rank << ' ' << e.source << " G=" << e.raw_return << " T=" << e.trust
              << (e.selected ? " selected" : "") << '\n';
  }
  return 0;
}

int cmd_train_target(const Common& c, const std::vector<std::string>& dirs) {
  auto cfg = scenario_config(c);
  auto data = prepare_data(cfg);
  std::vector<LoadedSource> sources;
  for (const auto& d : dirs) sources.push_back(load_source_dir(d));
  const fs::path out = c.out;
  std::vector<SourceFeed> feeds;
  if (!sources.empty()) {
    const double tth = c.tth.value_or(cfg.transfer.trust_threshold);
    auto report = rank(cfg, sources, data.target_probe, tth);
    write(out / "trust_report.json", trust_report_json(report).dump(2) + "\n");
    for (auto i : report.selected_indices()) {
      feeds.push_back({sources[i].name, sources[i].policy, sources[i].records, report.entries[i].trust});
    }
    if (feeds.empty()) std::cerr << "warning: no source passed the trust threshold; training tabula rasa\n";
  }
  TargetView view;
  view.features = cfg.target_features;
  view.standardizer = Standardizer::fit(extract_features(data.target_train, view.features));
  view.window = cfg.agent.network.window;
  view.scope = cfg.agent.scope;
  view.rewards = cfg.agent.reward;
  view.gamma = cfg.agent.gamma;
  DetectionEnv env(data.target_train, view.features, view.standardizer, view.window, view.scope);
  DetectionEnv test(data.test, view.features, view.standardizer, view.window, view.scope);
  DqnAgent agent(cfg.agent_for(view.features), derive_seed(cfg.seed, "target-agent"));
  std::mt19937_64 order_rng(derive_seed(cfg.seed, "target-order"));
  TransferConfig tc = cfg.transfer;
  tc.rng_seed = derive_seed(cfg.seed, "collect");
  auto run = train_target(agent, env, feeds, view, tc, cfg.target_episodes, order_rng);
  auto m = metrics(evaluate(run.params, test));
  write(out / "transfer_run.csv", transfer_run_csv(run));
  write(out / "policy.json", policy_checkpoint(Policy{run.params, view.features, view.standardizer, view.scope}));
  write(out / "metrics.json", metrics_json(m).dump(2) + "\n");
  std::cout << "test F=" << m.f_score << " P=" << m.precision << " R=" << m.recall << '\n';
  return 0;
}

int cmd_run_scenario(const Common& c) {
  auto cfg = scenario_config(c);
  auto result = run_scenario(cfg, fs::path(c.out));
  std::cout << report(summary_json(result)).text;
  return 0;
}

int cmd_report(const Common& c, std::string summary_path) {
  if (summary_path.empty()) summary_path = (fs::path(c.out) / "summary.json").string();
  nlohmann::json summary;
  try {
    summary = nlohmann::json::parse(read_file(summary_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("harness", std::string("summary is not valid JSON: ") + e.what());
  }
  auto rep = report(summary);
  const fs::path out = c.out;
  write(out / "report.txt", rep.text);
  write(out / "curves.csv", rep.curves_csv);
  write(out / "metrics.csv", rep.metrics_csv);
  write(out / "episodes_to_best.csv", rep.speedup_csv);
  std::cout << rep.text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Misbehavior detection with trust-aware transfer"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen", "synthesize a labelled BSM trace");
  add_common(gen, c, false);
  bool veremi = false;
  gen->add_flag("--veremi", veremi, "also export VeReMi-style logs and ground truth");

  auto* ingest = app.add_subcommand("ingest", "parse VeReMi-style logs into a labelled trace");
  add_common(ingest, c, false);
  std::string logs, truth;
  ingest->add_option("--logs", logs, "directory of reception logs");
  ingest->add_option("--truth", truth, "ground-truth file");

  auto* train_src = app.add_subcommand("train-source", "train one source detector of a scenario");
  add_common(train_src, c, true);
  std::size_t slot = 1;
  train_src->add_option("--slot", slot, "source slot (1-based)")->capture_default_str();

  std::vector<std::string> source_dirs;
  auto* rank_cmd = app.add_subcommand("rank-sources", "probe and rank trained sources on the target");
  add_common(rank_cmd, c, true);
  rank_cmd->add_option("--sources", source_dirs, "directories written by train-source")->expected(1, -1);

  auto* train_tgt = app.add_subcommand("train-target", "train the target, with transfer when sources are given");
  add_common(train_tgt, c, true);
  train_tgt->add_option("--sources", source_dirs, "directories written by train-source")->expected(0, -1);

  auto* run = app.add_subcommand("run-scenario", "run a full SC1/SC2/SC3 scenario");
  add_common(run, c, true);

  auto* rep = app.add_subcommand("report", "render tables and curve data from a summary");
  add_common(rep, c, false);
  std::string summary;
  rep->add_option("--summary", summary, "summary.json (default: <out>/summary.json)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(c, veremi);
    if (*ingest) return cmd_ingest(c, logs, truth);
    if (*train_src) return cmd_train_source(c, slot);
    if (*rank_cmd) return cmd_rank(c, source_dirs);
    if (*train_tgt) return cmd_train_target(c, source_dirs);
    if (*run) return cmd_run_scenario(c);
    if (*rep) return cmd_report(c, summary);
  } catch (const Error& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return exit_code_for_stage(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
