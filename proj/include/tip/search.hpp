#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tip/agent.hpp"
#include "tip/attacker.hpp"
#include "tip/defense.hpp"
#include "tip/gateway.hpp"
#include "tip/mcp.hpp"
#include "tip/search_tree.hpp"

namespace tip {

enum class BudgetMode { Uniform, RankWeighted };
std::string to_string(BudgetMode m);
BudgetMode budget_mode_from_string(const std::string& s);

enum class TerminationReason { EarlyStop, MaxIterations, Aborted };
std::string to_string(TerminationReason r);

struct SearchConfig {
  int B = 3;   // branches per frontier node; B*K candidates per iteration
  int K = 2;   // beam width
  int T = 10;  // max iterations
  int M = 20;  // trials per evaluation
  // Defaults to the scenario's threshold when unset.
  std::optional<ScoreValue> tau_stop;
  std::uint64_t seed = 0;
  std::vector<std::string> victim_pool;  // endpoint ids
  std::string attacker_endpoint;
  std::string defense_id = "none";       // selects the attacker's directive
  BudgetMode budget = BudgetMode::Uniform;
  Payload seed_payload{{"note", "see details below"}};
  bool parallel = true;  // OpenMP evaluator; false -> serial reference
  int threads = 0;       // 0 -> OpenMP default
  bool trace_transcripts = true;

  void validate() const;
  Json to_json() const;
};

// Everything an episode needs besides the payload.
struct EvalEnv {
  Gateway& gateway;
  const Scenario& scenario;
  // Benign server; each episode runs on a compromised copy of it.
  const ToolServer& server;
  const DefensePipeline& pipeline;
  AgentOptions agent;
};

struct EvalTask {
  NodeId node = 0;
  Payload payload;
};

struct Evaluation {
  ScoreValue score;
  std::vector<EpisodeTranscript> transcripts;
  std::vector<bool> verdicts;
  std::map<std::string, int> blocked;  // stage id -> episodes with a Blocked signal
  int errors = 0;
};

// Deterministic per-trial plan: instruction index and victim endpoint for
// each of the M trials of `node`.
struct TrialPlan {
  std::vector<std::size_t> instruction;
  std::vector<std::string> victim;
};
TrialPlan plan_trials(std::uint64_t seed, NodeId node, int M, std::size_t pool_size,
                      const std::vector<std::string>& victims);

// Runs and scores the episodes of every task. Both give identical results;
// the parallel one spreads the flattened (task, trial) pairs over OpenMP
// threads. Each episode's seed depends only on (seed, node, trial).
std::vector<Evaluation> evaluate_serial(const EvalEnv& env,
                                        const std::vector<EvalTask>& tasks,
                                        const SearchConfig& config);
std::vector<Evaluation> evaluate_parallel(const EvalEnv& env,
                                          const std::vector<EvalTask>& tasks,
                                          const SearchConfig& config);

Evaluation monte_carlo_evaluate(const EvalEnv& env, const Payload& payload,
                                const SearchConfig& config, NodeId node = 0);

// Top min(K, n) by (score descending, id ascending).
std::vector<NodeId> prune(std::vector<std::pair<NodeId, ScoreValue>> scored, int K);
std::vector<NodeId> prune(const SearchTree& tree, const std::vector<NodeId>& children,
                          int K);

// Branch counts for a frontier listed best first. Uniform splits B_total
// evenly (remainder to the best ranks). RankWeighted gives every node one
// branch and apportions the rest by weight 2 for the top ceil(n/2) ranks and
// 1 for the others, largest remainder first, ties to the better rank.
std::vector<int> allocate_branch_budget(std::size_t frontier_size, int B_total,
                                        BudgetMode mode);

// Append-only JSON-lines log.
class RunTrace {
 public:
  void add(const Json& event) { lines_.push_back(canonical_dump(event)); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::string jsonl() const;

 private:
  std::vector<std::string> lines_;
};

struct RunResult {
  Payload best_payload;
  ScoreValue best_score;
  std::optional<NodeId> best_id;
  TerminationReason reason = TerminationReason::MaxIterations;
  std::optional<std::string> error;
  int iterations = 0;
  std::vector<ScoreValue> best_curve;  // S_best after each iteration
  SearchTree tree{Payload{}};
  RunTrace trace;
};

struct SearchEnv {
  EvalEnv eval;
  AttackerEngine& attacker;
  Json config_snapshot = Json::object();
  std::string config_hash;
};

// Branch / evaluate / prune / early-stop loop. Only children are scored; the
// best score starts at 0 with the seed payload. Endpoint failures while
// branching abort the run with reason Aborted and a partial trace.
RunResult run_optimization(const SearchConfig& config, SearchEnv& env);

}  // namespace tip
