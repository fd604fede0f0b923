#include "tip/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>

#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

namespace fs = std::filesystem;

std::string data_root() {
  if (const char* d = std::getenv("TIP_DATA_DIR")) return d;
#ifdef TIP_DATA_DIR
  return TIP_DATA_DIR;
#else
  return "data";
#endif
}

namespace {

const std::vector<std::string> kStageIds = {"identity", "none", "instruction_prevention",
                                            "sandwich", "perplexity_filter",
                                            "detector", "summarize"};

bool known_stage(const std::string& id) {
  return std::find(kStageIds.begin(), kStageIds.end(), id) != kStageIds.end();
}

std::optional<ScoreValue> parse_tau(const Json& j) {
  if (j.is_null()) return std::nullopt;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    auto slash = s.find('/');
    if (slash == std::string::npos) throw ConfigError("search.tau_stop: expected \"a/b\"");
    return ScoreValue(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
  }
  if (j.is_array() && j.size() == 2) {
    return ScoreValue(j[0].get<std::int64_t>(), j[1].get<std::int64_t>());
  }
  return ScoreValue::from_json(j);
}

Json tool_json(const ToolDefinition& t) {
  Json samples = Json::array();
  for (const auto& a : t.sample_args) samples.push_back(a);
  return Json{{"name", t.name},
              {"description", t.description},
              {"input_schema", t.input_schema},
              {"response_schema", t.response_schema},
              {"defaults", t.defaults},
              {"template", t.response_template},
              {"sample_args", samples}};
}

// Typed field checks that append to `out` instead of throwing.
struct Checker {
  const Json& root;
  std::vector<std::string>& out;

  const Json* get(const Json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }
  void int_at_least(const Json& obj, const std::string& path, const std::string& key,
                    long lo) {
    const Json* v = get(obj, key);
    if (!v) return;
    if (!v->is_number_integer()) {
      out.push_back(path + key + ": must be an integer");
    } else if (v->get<long>() < lo) {
      out.push_back(path + key + ": must be >= " + std::to_string(lo));
    }
  }
  void string_field(const Json& obj, const std::string& path, const std::string& key,
                    bool required) {
    const Json* v = get(obj, key);
    if (!v) {
      if (required) out.push_back(path + key + ": required");
      return;
    }
    if (!v->is_string() || v->get<std::string>().empty()) {
      out.push_back(path + key + ": must be a non-empty string");
    }
  }
};

void check_defense(const Json& d, const std::string& path, std::vector<std::string>& out) {
  if (d.is_string()) {
    const auto id = d.get<std::string>();
    if (!known_stage(id)) out.push_back(path + ": unknown defense \"" + id + "\"");
    if (id == "summarize") out.push_back(path + ": summarize needs an endpoint; use the object form");
    return;
  }
  if (!d.is_object()) {
    out.push_back(path + ": must be a string or an object");
    return;
  }
  if (!d.contains("stages") || !d["stages"].is_array()) {
    out.push_back(path + ".stages: required array");
    return;
  }
  for (std::size_t i = 0; i < d["stages"].size(); ++i) {
    const Json& s = d["stages"][i];
    std::string p = path + ".stages[" + std::to_string(i) + "]";
    std::string id = s.is_string() ? s.get<std::string>()
                                   : (s.is_object() ? s.value("id", std::string()) : "");
    if (!known_stage(id)) out.push_back(p + ": unknown stage \"" + id + "\"");
  }
}

}  // namespace

DefenseSpec DefenseSpec::from_json(const Json& j) {
  DefenseSpec d;
  if (j.is_string()) {
    d.id = j.get<std::string>();
    if (d.id == "none" || d.id == "identity") {
      d.id = "none";
      d.stages = Json::array();
    } else {
      d.stages = Json::array({d.id});
    }
    return d;
  }
  d.stages = j.at("stages");
  d.id = j.value("id", std::string());
  if (d.id.empty()) {
    for (const auto& s : d.stages) {
      if (!d.id.empty()) d.id += "+";
      d.id += s.is_string() ? s.get<std::string>() : s.value("id", std::string("?"));
    }
    if (d.id.empty()) d.id = "none";
  }
  return d;
}

Json DefenseSpec::to_json() const { return Json{{"id", id}, {"stages", stages}}; }

std::vector<std::string> RunConfig::endpoint_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : endpoints) ids.push_back(e.id);
  return ids;
}

bool RunConfig::uses_real_endpoints() const {
  for (const auto& e : endpoints) {
    if (!e.is_mock()) return true;
  }
  return false;
}

std::vector<std::string> RunConfig::missing_credentials() const {
  std::vector<std::string> out;
  for (const auto& e : endpoints) {
    if (e.is_mock() || e.credentials_ref.empty()) continue;
    const char* v = std::getenv(e.credentials_ref.c_str());
    if (!v || !*v) out.push_back(e.credentials_ref);
  }
  return out;
}

std::vector<std::string> config_diagnostics(const Json& j) {
  std::vector<std::string> out;
  if (!j.is_object()) return {"<root>: config must be a JSON object"};
  Checker c{j, out};
  c.string_field(j, "", "scenario", true);
  c.string_field(j, "", "tools_dir", true);
  c.string_field(j, "", "local_tools_dir", false);
  c.string_field(j, "", "attacker", true);
  c.string_field(j, "", "embedding", false);

  std::set<std::string> ids;
  if (!j.contains("endpoints") || !j["endpoints"].is_array() || j["endpoints"].empty()) {
    out.push_back("endpoints: required non-empty array");
  } else {
    for (std::size_t i = 0; i < j["endpoints"].size(); ++i) {
      const Json& e = j["endpoints"][i];
      std::string p = "endpoints[" + std::to_string(i) + "].";
      if (!e.is_object()) {
        out.push_back(p.substr(0, p.size() - 1) + ": must be an object");
        continue;
      }
      c.string_field(e, p, "id", true);
      c.string_field(e, p, "base_url", true);
      c.int_at_least(e, p, "max_concurrency", 1);
      if (e.contains("api_key") || e.contains("key")) {
        out.push_back(p + "api_key: secrets do not belong in configs; set " +
                      std::string("the variable named by credentials_ref"));
      }
      if (e.value("id", std::string()).empty()) continue;
      if (!ids.insert(e["id"].get<std::string>()).second) {
        out.push_back(p + "id: duplicate endpoint \"" + e["id"].get<std::string>() + "\"");
      }
      const std::string url = e.value("base_url", std::string());
      if (url.rfind("mock://", 0) != 0 && !is_well_formed_url(url)) {
        out.push_back(p + "base_url: not an http(s) URL or mock://<profile>");
      }
    }
  }
  auto need_endpoint = [&](const std::string& path, const Json& v) {
    if (v.is_string() && !ids.empty() && !ids.count(v.get<std::string>())) {
      out.push_back(path + ": unknown endpoint \"" + v.get<std::string>() + "\"");
    }
  };
  if (j.contains("attacker")) need_endpoint("attacker", j["attacker"]);
  if (j.contains("embedding")) need_endpoint("embedding", j["embedding"]);

  if (!j.contains("victims") || !j["victims"].is_array() || j["victims"].empty()) {
    out.push_back("victims: required non-empty array of endpoint ids");
  } else {
    for (std::size_t i = 0; i < j["victims"].size(); ++i) {
      need_endpoint("victims[" + std::to_string(i) + "]", j["victims"][i]);
    }
  }
  if (j.contains("defense")) check_defense(j["defense"], "defense", out);

  if (j.contains("search")) {
    const Json& s = j["search"];
    if (!s.is_object()) {
      out.push_back("search: must be an object");
    } else {
      for (const char* k : {"B", "K", "T", "M"}) c.int_at_least(s, "search.", k, 1);
      c.int_at_least(s, "search.", "threads", 0);
      if (s.contains("seed") && !s["seed"].is_number_unsigned() &&
          !(s["seed"].is_number_integer() && s["seed"].get<long long>() >= 0)) {
        out.push_back("search.seed: must be a non-negative integer");
      }
      if (s.contains("budget")) {
        const Json& b = s["budget"];
        if (!b.is_string() || (b != "Uniform" && b != "RankWeighted")) {
          out.push_back("search.budget: must be \"Uniform\" or \"RankWeighted\"");
        }
      }
      if (s.contains("tau_stop")) {
        try {
          auto tau = parse_tau(s["tau_stop"]);
          if (tau && tau->successes() == 0) out.push_back("search.tau_stop: must be > 0");
        } catch (const std::exception& e) {
          out.push_back(std::string("search.tau_stop: ") + e.what());
        }
      }
      if (s.contains("seed_payload")) {
        try {
          if (Payload::from_json(s["seed_payload"]).empty()) {
            out.push_back("search.seed_payload: must have at least one field");
          }
        } catch (const std::exception& e) {
          out.push_back(std::string("search.seed_payload: ") + e.what());
        }
      }
    }
  }
  if (j.contains("agent")) c.int_at_least(j["agent"], "agent.", "max_steps", 1);
  if (j.contains("attacker_options")) {
    c.int_at_least(j["attacker_options"], "attacker_options.", "repair_attempts", 0);
  }
  if (j.contains("perplexity")) {
    const Json& p = j["perplexity"];
    c.int_at_least(p, "perplexity.", "calibration_seeds", 1);
    if (p.contains("endpoint")) need_endpoint("perplexity.endpoint", p["endpoint"]);
    if (p.contains("percentile")) {
      const Json& v = p["percentile"];
      if (!v.is_number() || v.get<double>() <= 0 || v.get<double>() > 100) {
        out.push_back("perplexity.percentile: must be in (0, 100]");
      }
    }
  }
  if (j.contains("evaluation")) {
    const Json& e = j["evaluation"];
    c.int_at_least(e, "evaluation.", "cases", 1);
    if (e.contains("targets")) {
      for (std::size_t i = 0; i < e["targets"].size(); ++i) {
        need_endpoint("evaluation.targets[" + std::to_string(i) + "]", e["targets"][i]);
      }
    }
    if (e.contains("defenses")) {
      for (std::size_t i = 0; i < e["defenses"].size(); ++i) {
        check_defense(e["defenses"][i], "evaluation.defenses[" + std::to_string(i) + "]",
                      out);
      }
    }
  }
  return out;
}

RunConfig parse_run_config(const Json& j, const std::string& base_dir) {
  auto diags = config_diagnostics(j);
  if (!diags.empty()) {
    std::string msg = "invalid config:";
    for (const auto& d : diags) msg += "\n  " + d;
    throw ConfigError(msg);
  }
  RunConfig c;
  c.base_dir = base_dir;
  c.scenario_path = j["scenario"].get<std::string>();
  c.tools_dir = j["tools_dir"].get<std::string>();
  c.local_tools_dir = j.value("local_tools_dir", std::string());
  for (const auto& e : j["endpoints"]) c.endpoints.push_back(ModelEndpoint::from_json(e));
  c.embedding_endpoint = j.value("embedding", std::string());

  const Json p = j.value("perplexity", Json::object());
  c.perplexity_endpoint = p.value("endpoint", std::string());
  c.calibration_seeds = p.value("calibration_seeds", 4);
  c.calibration_percentile = p.value("percentile", 99.0);

  c.defense = DefenseSpec::from_json(j.value("defense", Json("none")));

  const Json s = j.value("search", Json::object());
  SearchConfig& sc = c.search;
  sc.B = s.value("B", sc.B);
  sc.K = s.value("K", sc.K);
  sc.T = s.value("T", sc.T);
  sc.M = s.value("M", sc.M);
  if (s.contains("tau_stop")) sc.tau_stop = parse_tau(s["tau_stop"]);
  sc.seed = s.value("seed", std::uint64_t{0});
  if (s.contains("budget")) sc.budget = budget_mode_from_string(s["budget"].get<std::string>());
  if (s.contains("seed_payload")) sc.seed_payload = Payload::from_json(s["seed_payload"]);
  sc.parallel = s.value("parallel", true);
  sc.threads = s.value("threads", 0);
  sc.trace_transcripts = s.value("trace_transcripts", true);
  sc.victim_pool = j["victims"].get<std::vector<std::string>>();
  sc.attacker_endpoint = j["attacker"].get<std::string>();
  sc.defense_id = c.defense.id;

  const Json a = j.value("attacker_options", Json::object());
  c.attacker.repair_attempts = a.value("repair_attempts", c.attacker.repair_attempts);
  c.attacker.temperature = a.value("temperature", c.attacker.temperature);
  c.attacker.offline_simulation = a.value("offline_simulation", c.attacker.offline_simulation);

  c.max_steps = j.value("agent", Json::object()).value("max_steps", 6);

  const Json e = j.value("evaluation", Json::object());
  c.evaluation.targets = e.contains("targets")
                             ? e["targets"].get<std::vector<std::string>>()
                             : sc.victim_pool;
  if (e.contains("defenses")) {
    for (const auto& d : e["defenses"]) c.evaluation.defenses.push_back(DefenseSpec::from_json(d));
  } else {
    c.evaluation.defenses.push_back(c.defense);
  }
  c.evaluation.cases = e.value("cases", 100);
  c.evaluation.seed = e.value("seed", std::uint64_t{0});
  return c;
}

RunConfig load_run_config(const std::string& path_or_name) {
  std::string path = path_or_name;
  if (!fs::exists(path)) {
    std::string bundled = data_root() + "/configs/" + path_or_name + ".json";
    if (!fs::exists(bundled)) throw ConfigError("config not found: " + path_or_name);
    path = bundled;
  }
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  RunConfig c = parse_run_config(j, fs::path(path).parent_path().string());
  c.source = path;
  return c;
}

std::string resolve_path(const RunConfig& cfg, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return path;
  if (!cfg.base_dir.empty() && fs::exists(fs::path(cfg.base_dir) / p)) {
    return (fs::path(cfg.base_dir) / p).string();
  }
  if (fs::exists(fs::path(data_root()) / p)) return (fs::path(data_root()) / p).string();
  return path;
}

Json config_snapshot(const RunConfig& cfg, const Scenario& scenario,
                     const std::vector<ToolDefinition>& tools,
                     const std::vector<ToolDefinition>& local_tools,
                     const Templates& templates) {
  Json eps = Json::array();
  for (const auto& e : cfg.endpoints) eps.push_back(e.to_json());
  Json tl = Json::array();
  for (const auto& t : tools) tl.push_back(tool_json(t));
  Json lt = Json::array();
  for (const auto& t : local_tools) lt.push_back(tool_json(t));
  std::string tpl;
  for (const auto& [k, v] : templates.entries()) tpl += k + '\0' + v + '\0';
  Json search = cfg.search.to_json();
  search["trace_transcripts"] = cfg.search.trace_transcripts;
  Json eval_defs = Json::array();
  for (const auto& d : cfg.evaluation.defenses) eval_defs.push_back(d.to_json());
  // Thread count and evaluator choice are left out on purpose: both
  // evaluators give identical results.
  return Json{{"scenario", scenario.to_json()},
              {"tools", tl},
              {"local_tools", lt},
              {"endpoints", eps},
              {"embedding", cfg.embedding_endpoint},
              {"perplexity",
               {{"endpoint", cfg.perplexity_endpoint},
                {"calibration_seeds", cfg.calibration_seeds},
                {"percentile", cfg.calibration_percentile}}},
              {"defense", cfg.defense.to_json()},
              {"search", search},
              {"attacker_options",
               {{"repair_attempts", cfg.attacker.repair_attempts},
                {"temperature", cfg.attacker.temperature},
                {"offline_simulation", cfg.attacker.offline_simulation}}},
              {"agent", {{"max_steps", cfg.max_steps}}},
              {"evaluation",
               {{"targets", cfg.evaluation.targets},
                {"defenses", eval_defs},
                {"cases", cfg.evaluation.cases},
                {"seed", cfg.evaluation.seed}}},
              {"templates_sha256", sha256_hex(tpl)}};
}

std::string config_hash(const Json& snapshot) {
  return sha256_hex(canonical_dump(snapshot)).substr(0, 16);
}

// RunSetup

RunSetup::RunSetup(RunConfig cfg, RetryPolicy retry)
    : cfg_(std::move(cfg)), gateway_(retry), scenario_(), templates_(Templates::builtin()) {
  for (const auto& e : cfg_.endpoints) gateway_.add_endpoint(e);
  tools_ = load_tool_definitions(resolve_path(cfg_, cfg_.tools_dir));
  if (!cfg_.local_tools_dir.empty()) {
    local_tools_ = load_tool_definitions(resolve_path(cfg_, cfg_.local_tools_dir));
  }
  scenario_ = load_scenario(resolve_path(cfg_, cfg_.scenario_path));
  scenario_.validate();
  find_tool(tools_, scenario_.tool_under_attack);
  server_ = std::make_unique<ToolServer>(tools_);

  auto corpus = benign_field_corpus(tools_, cfg_.calibration_seeds);
  std::shared_ptr<const PerplexityEstimator> local = train_benign_model(corpus);
  if (cfg_.perplexity_endpoint.empty()) {
    perplexity_ = local;
  } else {
    perplexity_ = std::make_shared<FallbackPerplexity>(
        std::make_shared<EndpointPerplexity>(gateway_, cfg_.perplexity_endpoint), local);
  }
  delta_ = calibrate_delta(*perplexity_, corpus, cfg_.calibration_percentile);
  pipeline_ = make_pipeline(cfg_.defense);

  attacker_ = std::make_unique<AttackerEngine>(gateway_, cfg_.search.attacker_endpoint,
                                               scenario_, target_tool(), cfg_.attacker,
                                               templates_);
  snapshot_ = config_snapshot(cfg_, scenario_, tools_, local_tools_, templates_);
  hash_ = config_hash(snapshot_);
}

const ToolDefinition& RunSetup::target_tool() const {
  return find_tool(tools_, scenario_.tool_under_attack);
}

DefensePipeline RunSetup::make_pipeline(const DefenseSpec& spec) {
  DefenseResources res;
  res.gateway = &gateway_;
  res.perplexity = perplexity_;
  res.calibrated_delta = delta_;
  res.templates = templates_;
  return build_pipeline(spec.stages, res);
}

AgentOptions RunSetup::agent_options() const {
  AgentOptions o;
  o.max_steps = cfg_.max_steps;
  o.local_tools = local_tools_;
  return o;
}

EvalEnv RunSetup::eval_env() {
  return EvalEnv{gateway_, scenario_, *server_, pipeline_, agent_options()};
}

RunResult RunSetup::optimize() {
  SearchEnv env{eval_env(), *attacker_, snapshot_, hash_};
  return run_optimization(cfg_.search, env);
}

}  // namespace tip
