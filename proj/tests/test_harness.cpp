#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mds/error.hpp"
#include "mds/harness.hpp"
#include "mds/ingest.hpp"
#include "mds/toml.hpp"

using namespace mds;
namespace fs = std::filesystem;

namespace {

// Small enough to run in a couple of seconds.
ScenarioConfig tiny(const std::vector<std::string>& variants) {
  nlohmann::json j = {
      {"scenario", "SC1"},
      {"seed", 3},
      {"source_episodes", 3},
      {"target_episodes", 4},
      {"variants", variants},
      {"data",
       {{"sources", {{"n_vehicles", 24}, {"duration", 12}}},
        {"target", {{"n_vehicles", 20}, {"duration", 10}}},
        {"test", {{"n_vehicles", 20}, {"duration", 5}}}}},
      {"agent", {{"network", {{"window", 3}, {"recurrent_hidden", 4}, {"dense", {4}}}}, {"minibatch", 16}}},
      {"transfer", {{"probe_episodes", 2}}},
      {"induction", {{"policy_episodes", 2}}},
  };
  return scenario_from_json(j);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("metrics arithmetic") {
  auto m = metrics({2, 6, 1, 1});
  CHECK(m.accuracy == doctest::Approx(0.8));
  CHECK(m.precision == doctest::Approx(2.0 / 3));
  CHECK(m.recall == doctest::Approx(2.0 / 3));
  CHECK(m.f_score == doctest::Approx(2.0 / 3));

  m = metrics({5, 9, 0, 0});
  CHECK(m.accuracy == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f_score == 1.0);

  // P = 8978/10000, R = 8978/9590 = 0.9362
  m = metrics({8978, 20000, 1022, 612});
  CHECK(m.precision == doctest::Approx(0.8978).epsilon(1e-4));
  CHECK(m.recall == doctest::Approx(0.9362).epsilon(1e-4));
  CHECK(m.f_score == doctest::Approx(0.9166).epsilon(1e-3));

  m = metrics({0, 10, 0, 0});
  CHECK_FALSE(m.precision_defined);
  CHECK_FALSE(m.recall_defined);
  CHECK(m.precision == 0.0);
  CHECK_THROWS_AS(metrics({0, 0, 0, 0}), Error);
}

TEST_CASE("names and variant parsing") {
  CHECK(scenario_from_string("SC2") == Scenario::SC2);
  CHECK_FALSE(scenario_from_string("SC4"));
  CHECK(adversary_from_string("label-flip") == AdversaryKind::Flip);
  CHECK(adversary_from_string("policy-induction") == AdversaryKind::Induction);
  CHECK(adversary_from_string("genuine") == AdversaryKind::None);
  const auto v = TransferVariant::parse("induction@0.5");
  CHECK(v.malicious == AdversaryKind::Induction);
  CHECK(v.threshold == 0.5);
  CHECK(v.name() == "induction@0.5");
  CHECK(TransferVariant::parse(v.name()) == v);
  CHECK_THROWS_AS(TransferVariant::parse("flip"), ConfigError);
  CHECK_THROWS_AS(TransferVariant::parse("flip@2"), ConfigError);
  CHECK_THROWS_AS(TransferVariant::parse("nobody@0.5"), ConfigError);
}

TEST_CASE("derived seeds differ per tag and are stable") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("scenario presets mirror the scenario definitions") {
  const auto sc1 = ScenarioConfig::preset(Scenario::SC1);
  CHECK(sc1.variants.size() >= 3);
  CHECK_NOTHROW(sc1.validate());
  const auto sc2 = ScenarioConfig::preset(Scenario::SC2);
  CHECK(sc2.target_features.layout.dim() == 5);
  CHECK_NOTHROW(sc2.validate());
  const auto sc3 = ScenarioConfig::preset(Scenario::SC3);
  CHECK(sc3.target_features.layout.dim() == 1);
  CHECK(sc3.source_features.layout.dim() == 4);
  CHECK_NOTHROW(sc3.validate());
}

TEST_CASE("scenario configuration from TOML") {
  const auto j = parse_toml(R"(
scenario = "SC2"
seed = 9
target_episodes = 12
variants = ["flip@0.5", "none@0.8"]
[data.test]
n_vehicles = 30
[agent]
gamma = 0.9
[flip]
zeta = 0.4
)");
  const auto c = scenario_from_json(j);
  CHECK(c.scenario == Scenario::SC2);
  CHECK(c.seed == 9);
  CHECK(c.target_episodes == 12);
  CHECK(c.variants.size() == 2);
  CHECK(c.variants[1].malicious == AdversaryKind::None);
  CHECK(c.test.gen.n_vehicles == 30);
  CHECK(c.agent.gamma == 0.9);
  CHECK(c.flip.zeta == 0.4);
  // untouched keys keep the SC2 preset
  CHECK(c.source_features == ScenarioConfig::preset(Scenario::SC2).source_features);
  const auto back = scenario_from_json(scenario_to_json(c));
  CHECK(scenario_to_json(back) == scenario_to_json(c));

  CHECK_THROWS_AS(scenario_from_json({{"scenario", "SC9"}}), ConfigError);
  CHECK_THROWS_AS(scenario_from_json({{"seed", "x"}}), ConfigError);
  auto bad = ScenarioConfig::preset(Scenario::SC1);
  bad.sources.gen.attack_types = {AttackType::DoS};
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // DoS is invisible without the inter-arrival feature
}

TEST_CASE("baseline-only scenario: report has the baseline row and budget-length curves") {
  auto cfg = tiny({});
  const auto result = run_scenario(cfg);
  CHECK(result.variants.empty());
  CHECK(result.baseline.run.episodes.size() == 4);
  const auto summary = summary_json(result);
  CHECK(summary["runs"].size() == 1);
  const auto rep = report(summary);
  CHECK(lines(rep.curves_csv) == 1 + 4);
  CHECK(lines(rep.metrics_csv) == 2);
  CHECK(rep.text.find("baseline") != std::string::npos);
}

TEST_CASE("variant scenario writes the artifact tree and is reproducible") {
  std::random_device rd;
  const fs::path out = fs::temp_directory_path() / ("mds_harness_" + std::to_string(rd()));
  auto cfg = tiny({"flip@0.5"});
  cfg.concurrent_sources = false;
  const auto a = run_scenario(cfg, out);
  REQUIRE(a.variants.size() == 1);
  REQUIRE(a.variants[0].trust);
  CHECK(a.variants[0].trust->entries.size() == 3);
  CHECK(a.variants[0].trust->entries[2].source == "source3-flip");
  for (const char* f : {"summary.json", "report.txt", "curves.csv", "metrics.csv", "episodes_to_best.csv",
                        "splits.json", "sources/source1/policy.json", "sources/source3-flip/attack_manifest.json",
                        "runs/flip@0.5/trust_report.json", "runs/flip@0.5/transfer_run.csv"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  CHECK(summary["runs"].size() == 2);
  CHECK(lines(report(summary).curves_csv) == 1 + 4);

  CHECK(summary["splits"]["sources"]["roles"].size() == 3);
  CHECK(summary["splits"]["target"]["roles"][0]["records"].get<std::size_t>() == a.baseline.run.episodes[0].counts.total());

  // Running the sources concurrently changes nothing but the flag itself.
  cfg.concurrent_sources = true;
  auto b = summary_json(run_scenario(cfg));
  b["config"]["concurrent_sources"] = false;
  CHECK(b.dump() == summary.dump());
  fs::remove_all(out);
}

TEST_CASE("an incomplete summary names every missing field") {
  try {
    report({{"version", 1}, {"runs", {{{"name", "baseline"}}}}});
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("scenario") != std::string::npos);
    CHECK(msg.find("target_episodes") != std::string::npos);
    CHECK(msg.find("runs[0].returns") != std::string::npos);
    CHECK(msg.find("runs[0].test") != std::string::npos);
  }
}

TEST_CASE("exit codes by stage") {
  CHECK(exit_code_for_stage("config") == 2);
  CHECK(exit_code_for_stage("ingest") == 4);
  CHECK(exit_code_for_stage("transfer") == 11);
  CHECK(exit_code_for_stage("whatever") == 1);
}

TEST_CASE("shipped configurations load and validate") {
  const fs::path dir = MDS_CONFIG_DIR;
  CHECK(load_scenario_config(dir / "sc1.toml").variants.size() == 5);
  const auto sc2 = load_scenario_config(dir / "sc2.toml");
  CHECK(sc2.scenario == Scenario::SC2);
  CHECK(sc2.target_features.layout.dim() == 5);
  const auto sc3 = load_scenario_config(dir / "sc3.toml");
  CHECK(sc3.target_features.layout.dim() == 1);
  CHECK(load_scenario_config(dir / "quick.toml").target_episodes == 10);
  CHECK_NOTHROW(mapping_from_json(load_toml(dir / "veremi_mapping.toml")));
}
