#include "doctest.h"
#include "mds/error.hpp"
#include "mds/toml.hpp"

using mds::parse_toml;

TEST_CASE("scalars, tables and dotted tables") {
  auto j = parse_toml(R"(
# comment
name = "sc1"   # trailing comment
count = 1_000
ratio = 0.25
neg = -3
on = true
[agent]
gamma = 0.995
[agent.network]
dense = [16, 8]
)");
  CHECK(j["name"] == "sc1");
  CHECK(j["count"] == 1000);
  CHECK(j["ratio"].get<double>() == doctest::Approx(0.25));
  CHECK(j["neg"] == -3);
  CHECK(j["on"] == true);
  CHECK(j["agent"]["gamma"].get<double>() == doctest::Approx(0.995));
  CHECK(j["agent"]["network"]["dense"] == nlohmann::json::array({16, 8}));
}

TEST_CASE("strings with escapes and multi-line nested arrays") {
  auto j = parse_toml("s = \"a\\\"b\\n#x\"\narr = [\n  [1, 2],\n  [\"x\", \"y\"],\n]\n");
  CHECK(j["s"] == "a\"b\n#x");
  CHECK(j["arr"][0] == nlohmann::json::array({1, 2}));
  CHECK(j["arr"][1][1] == "y");
}

TEST_CASE("integers stay integers and floats stay floats") {
  auto j = parse_toml("i = 42\nf = 42.0\ne = 1e-3\n");
  CHECK(j["i"].is_number_integer());
  CHECK(j["f"].is_number_float());
  CHECK(j["e"].get<double>() == doctest::Approx(0.001));
}

TEST_CASE("errors carry the line number") {
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2\n"), mds::ConfigError);
  try {
    parse_toml("a = 1\n\nb = \n");
    FAIL("expected a ConfigError");
  } catch (const mds::ConfigError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_toml("[t]\nx = 1\n[t]\n"), mds::ConfigError);
  CHECK_THROWS_AS(parse_toml("x = \"open\n"), mds::ConfigError);
  CHECK_THROWS_AS(parse_toml("x = [1, 2\n"), mds::ConfigError);
}
