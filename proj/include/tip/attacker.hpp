#pragma once

#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tip/agent.hpp"
#include "tip/gateway.hpp"
#include "tip/mcp.hpp"
#include "tip/search_tree.hpp"
#include "tip/templates.hpp"

namespace tip {

struct AttackerPrompt {
  std::string system;
  std::string feedback_block;
  std::string simulation_block;
  std::string strategy_block;
  std::string defense_block;
  std::string task_block;

  // Blocks after the system text, in field order, blank-line separated.
  std::string user_text() const;
  std::vector<ChatMessage> messages() const;
  Json to_json() const;
  friend bool operator==(const AttackerPrompt&, const AttackerPrompt&) = default;
};

struct CandidateBatch {
  NodeId parent_id = 0;
  std::vector<Payload> candidates;
  // (raw completion, reason)
  std::vector<std::pair<std::string, std::string>> rejected;
  int attacker_calls = 0;

  Json to_json() const;
};

// First JSON object of a completion (fenced block preferred), repaired with:
// single-quoted strings to double quotes, trailing commas removed, bare
// identifier keys quoted. Anything else throws PayloadParseError with the
// span of the offending text.
Payload extract_payload(const std::string& raw_completion);

// Strategy for branching from `parent`. The mode follows the parent score.
// Broad branchings flip the tactic of the nearest broad-created ancestor on
// the lineage (ImplicitInduction when there is none); stable refinement keeps
// the parent's tactic.
StrategyLabel choose_strategy(const SearchTree& tree, NodeId parent,
                              const std::string& defense_id);

struct AttackerOptions {
  int repair_attempts = 2;  // regenerations after a rejected completion
  double temperature = 1.0;
  // Use fixture output instead of asking the attacker to simulate a response.
  bool offline_simulation = true;
};

class AttackerEngine {
 public:
  AttackerEngine(Gateway& gateway, std::string endpoint_id, Scenario scenario,
                 ToolDefinition tool, AttackerOptions options = {},
                 Templates templates = Templates::builtin());

  // Cached per query for the engine's lifetime.
  ToolResponse simulate_benign_response(const std::string& sample_query);

  AttackerPrompt build_prompt(const SearchTree& tree, NodeId parent_id,
                              const StrategyLabel& strategy,
                              const std::string& defense_id,
                              const ToolResponse& simulated) const;

  CandidateBatch generate_candidates(const AttackerPrompt& prompt, int B,
                                     SearchMode mode,
                                     const std::set<std::string>& parent_keys,
                                     NodeId parent_id, std::uint64_t seed);

  int simulation_calls() const { return simulation_calls_; }
  const std::string& endpoint_id() const { return endpoint_id_; }

 private:
  ToolResponse fixture_response() const;

  Gateway& gateway_;
  std::string endpoint_id_;
  Scenario scenario_;
  ToolDefinition tool_;
  AttackerOptions options_;
  Templates templates_;
  Json directives_;
  std::mutex cache_mu_;
  std::map<std::string, ToolResponse> cache_;
  int simulation_calls_ = 0;
};

}  // namespace tip
