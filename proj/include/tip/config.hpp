#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tip/agent.hpp"
#include "tip/attacker.hpp"
#include "tip/defense.hpp"
#include "tip/gateway.hpp"
#include "tip/mcp.hpp"
#include "tip/perplexity.hpp"
#include "tip/search.hpp"

namespace tip {

// Directory holding the bundled scenarios, tools and configs.
std::string data_root();

struct DefenseSpec {
  std::string id = "none";          // label handed to the attacker
  Json stages = Json::array();      // build_pipeline format

  // "none", "sandwich", ... or {"id": ..., "stages": [...]}.
  static DefenseSpec from_json(const Json& j);
  Json to_json() const;
};

struct EvaluationSpec {
  std::vector<std::string> targets;  // victim endpoint ids
  std::vector<DefenseSpec> defenses;
  int cases = 100;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string source;       // file the config was read from, if any
  std::string base_dir;     // relative paths resolve here, then data_root()
  std::string scenario_path;
  std::string tools_dir;
  std::string local_tools_dir;  // empty -> no local agent tools
  std::vector<ModelEndpoint> endpoints;
  std::string embedding_endpoint;  // empty -> stealth metric skipped
  std::string perplexity_endpoint;  // empty -> local n-gram model
  int calibration_seeds = 4;
  double calibration_percentile = 99.0;
  DefenseSpec defense;
  SearchConfig search;
  AttackerOptions attacker;
  int max_steps = 6;
  EvaluationSpec evaluation;

  std::vector<std::string> endpoint_ids() const;
  bool uses_real_endpoints() const;
  // Credential variables of real endpoints that are unset.
  std::vector<std::string> missing_credentials() const;
};

// Field-level problems ("search.B: must be >= 1"); empty when valid.
std::vector<std::string> config_diagnostics(const Json& j);

// Throws ConfigError listing every diagnostic.
RunConfig parse_run_config(const Json& j, const std::string& base_dir = {});

// Accepts a path, or a bundled config name such as "demo-mock".
RunConfig load_run_config(const std::string& path_or_name);

// Relative paths resolve against the config's directory, then the bundled data
// directory, then the working directory.
std::string resolve_path(const RunConfig& cfg, const std::string& path);

// Everything a run is built from: wiring, scenario, tool fixtures, templates.
// Secrets never appear; endpoints only name their credential variable.
Json config_snapshot(const RunConfig& cfg, const Scenario& scenario,
                     const std::vector<ToolDefinition>& tools,
                     const std::vector<ToolDefinition>& local_tools,
                     const Templates& templates);

// First 16 hex digits of SHA-256 over the canonical snapshot.
std::string config_hash(const Json& snapshot);

// Wires the gateway, tool server, defenses and attacker for one config.
class RunSetup {
 public:
  explicit RunSetup(RunConfig cfg, RetryPolicy retry = {});
  RunSetup(const RunSetup&) = delete;
  RunSetup& operator=(const RunSetup&) = delete;

  const RunConfig& config() const { return cfg_; }
  Gateway& gateway() { return gateway_; }
  const Scenario& scenario() const { return scenario_; }
  const std::vector<ToolDefinition>& tools() const { return tools_; }
  const ToolDefinition& target_tool() const;
  const ToolServer& server() const { return *server_; }
  const DefensePipeline& pipeline() const { return pipeline_; }
  AttackerEngine& attacker() { return *attacker_; }
  double calibrated_delta() const { return delta_; }
  const Json& snapshot() const { return snapshot_; }
  const std::string& hash() const { return hash_; }

  DefensePipeline make_pipeline(const DefenseSpec& spec);
  AgentOptions agent_options() const;
  EvalEnv eval_env();
  RunResult optimize();

 private:
  RunConfig cfg_;
  Gateway gateway_;
  std::vector<ToolDefinition> tools_;
  std::vector<ToolDefinition> local_tools_;
  Scenario scenario_;
  Templates templates_;
  std::unique_ptr<ToolServer> server_;
  std::shared_ptr<const PerplexityEstimator> perplexity_;
  double delta_ = 0.0;
  DefensePipeline pipeline_;
  std::unique_ptr<AttackerEngine> attacker_;
  Json snapshot_;
  std::string hash_;
};

}  // namespace tip
