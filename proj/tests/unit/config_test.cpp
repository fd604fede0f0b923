#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "../support/configs.hpp"
#include "tip/util.hpp"

namespace tip {
namespace {

using testing::endpoint;
using testing::fixed_attacker;
using testing::mock_config;
using testing::parse;

Json base() {
  return mock_config("fraud_getweather", fixed_attacker("x"), endpoint("victim", "honest"),
                     Json{{"B", 3}, {"K", 2}, {"T", 2}, {"M", 5}, {"seed", 1}});
}

bool mentions(const std::vector<std::string>& diags, const std::string& prefix) {
  for (const auto& d : diags) {
    if (d.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

TEST(Diagnostics, ValidConfigHasNone) {
  EXPECT_TRUE(config_diagnostics(base()).empty());
  for (const char* name : {"demo-mock", "demo-datasteal-mock", "example-openai-compatible"}) {
    EXPECT_NO_THROW(load_run_config(name)) << name;
  }
}

TEST(Diagnostics, NamesEachBadField) {
  struct Case {
    std::string expect;
    void (*mutate)(Json&);
  };
  std::vector<Case> cases = {
      {"search.B", [](Json& j) { j["search"]["B"] = 0; }},
      {"search.M", [](Json& j) { j["search"]["M"] = "many"; }},
      {"search.seed", [](Json& j) { j["search"]["seed"] = -1; }},
      {"search.budget", [](Json& j) { j["search"]["budget"] = "Greedy"; }},
      {"search.tau_stop", [](Json& j) { j["search"]["tau_stop"] = 0; }},
      {"search.seed_payload", [](Json& j) { j["search"]["seed_payload"] = Json::object(); }},
      {"victims", [](Json& j) { j["victims"] = Json::array(); }},
      {"victims[0]", [](Json& j) { j["victims"][0] = "ghost"; }},
      {"attacker", [](Json& j) { j["attacker"] = "ghost"; }},
      {"endpoints[1].id", [](Json& j) { j["endpoints"][1]["id"] = "attacker"; }},
      {"endpoints[0].base_url", [](Json& j) { j["endpoints"][0]["base_url"] = "ftp://x"; }},
      {"endpoints[0].api_key", [](Json& j) { j["endpoints"][0]["api_key"] = "sk-123"; }},
      {"endpoints", [](Json& j) { j.erase("endpoints"); }},
      {"scenario", [](Json& j) { j.erase("scenario"); }},
      {"defense", [](Json& j) { j["defense"] = "firewall"; }},
      {"perplexity.percentile", [](Json& j) { j["perplexity"] = Json{{"percentile", 0}}; }},
      {"agent.max_steps", [](Json& j) { j["agent"] = Json{{"max_steps", 0}}; }},
      {"evaluation.cases", [](Json& j) { j["evaluation"] = Json{{"cases", 0}}; }},
  };
  for (const auto& c : cases) {
    Json j = base();
    c.mutate(j);
    auto d = config_diagnostics(j);
    EXPECT_TRUE(mentions(d, c.expect)) << c.expect << ": " << Json(d).dump();
    EXPECT_THROW(parse(j), ConfigError) << c.expect;
  }
  // Several problems are reported together.
  Json j = base();
  j["search"]["B"] = 0;
  j["search"]["K"] = 0;
  EXPECT_EQ(config_diagnostics(j).size(), 2u);
  try {
    parse(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("search.K"), std::string::npos);
  }
  EXPECT_FALSE(config_diagnostics(Json::array()).empty());
  EXPECT_THROW(load_run_config("no-such-config"), ConfigError);
}

TEST(Parse, DefaultsAndTau) {
  Json j = base();
  j["search"]["tau_stop"] = "7/10";
  RunConfig c = parse(j);
  EXPECT_EQ(c.search.B, 3);
  ASSERT_TRUE(c.search.tau_stop);
  EXPECT_TRUE(c.search.tau_stop->identical(ScoreValue(7, 10)));
  EXPECT_EQ(c.search.victim_pool, (std::vector<std::string>{"victim"}));
  EXPECT_EQ(c.evaluation.targets, c.search.victim_pool);
  EXPECT_EQ(c.defense.id, "none");
  EXPECT_EQ(c.max_steps, 6);
  EXPECT_FALSE(c.uses_real_endpoints());
}

TEST(Hash, KnownDigestAndPrefix) {
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  Json snap = Json{{"b", 1}, {"a", Json::array({1, 2})}};
  EXPECT_EQ(config_hash(snap), sha256_hex(canonical_dump(snap)).substr(0, 16));
}

TEST(Hash, SensitiveToRunInputsOnly) {
  auto hash_of = [](const Json& j) {
    RunSetup s(parse(j));
    return s.hash();
  };
  const std::string h = hash_of(base());
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(hash_of(base()), h);

  Json threads = base();
  threads["search"]["threads"] = 3;
  threads["search"]["parallel"] = false;
  EXPECT_EQ(hash_of(threads), h);

  std::vector<void (*)(Json&)> changes = {
      [](Json& j) { j["search"]["B"] = 4; },
      [](Json& j) { j["search"]["seed"] = 2; },
      [](Json& j) { j["endpoints"][1]["options"]["salt"] = 9; },
      [](Json& j) { j["defense"] = "sandwich"; },
      [](Json& j) { j["scenario"] = "scenarios/fraud_getproduct.json"; },
      [](Json& j) { j["agent"] = Json{{"max_steps", 4}}; },
  };
  for (auto change : changes) {
    Json j = base();
    change(j);
    EXPECT_NE(hash_of(j), h) << j.dump();
  }
}

TEST(Credentials, NamedNeverStored) {
  Json j = base();
  j["endpoints"][1]["base_url"] = "https://victim.example.com/v1";
  j["endpoints"][1]["credentials_ref"] = "TIP_API_KEY_CONFIG_TEST";
  ::unsetenv("TIP_API_KEY_CONFIG_TEST");
  RunConfig c = parse(j);
  EXPECT_TRUE(c.uses_real_endpoints());
  EXPECT_EQ(c.missing_credentials(), (std::vector<std::string>{"TIP_API_KEY_CONFIG_TEST"}));
  ::setenv("TIP_API_KEY_CONFIG_TEST", "sk-very-secret-value", 1);
  EXPECT_TRUE(c.missing_credentials().empty());
  Json eps = Json::array();
  for (const auto& e : c.endpoints) eps.push_back(e.to_json());
  EXPECT_EQ(eps.dump().find("sk-very-secret-value"), std::string::npos);
  EXPECT_NE(eps.dump().find("TIP_API_KEY_CONFIG_TEST"), std::string::npos);
  ::unsetenv("TIP_API_KEY_CONFIG_TEST");
}

TEST(Paths, ResolveAgainstBaseThenData) {
  RunConfig c = load_run_config("demo-mock");
  EXPECT_NE(c.source.find("demo-mock.json"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(resolve_path(c, c.scenario_path)));
  EXPECT_TRUE(std::filesystem::exists(resolve_path(c, "tools/GetWeather.json")));
  EXPECT_EQ(resolve_path(c, "/abs/path"), "/abs/path");
  // A same-named directory under the working directory does not shadow the
  // bundled fixtures.
  auto cwd = std::filesystem::current_path();
  auto tmp = std::filesystem::temp_directory_path() / "tip_resolve_test";
  std::filesystem::create_directories(tmp / "tools");
  std::filesystem::current_path(tmp);
  std::string got = resolve_path(c, "tools");
  std::filesystem::current_path(cwd);
  std::filesystem::remove_all(tmp);
  EXPECT_EQ(got, data_root() + "/tools");
}

}  // namespace
}  // namespace tip
