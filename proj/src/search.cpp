#include "tip/search.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

std::string to_string(BudgetMode m) {
  return m == BudgetMode::Uniform ? "Uniform" : "RankWeighted";
}

BudgetMode budget_mode_from_string(const std::string& s) {
  if (s == "Uniform") return BudgetMode::Uniform;
  if (s == "RankWeighted") return BudgetMode::RankWeighted;
  throw ConfigError("budget must be Uniform or RankWeighted, got " + s);
}

std::string to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::EarlyStop: return "EarlyStop";
    case TerminationReason::MaxIterations: return "MaxIterations";
    case TerminationReason::Aborted: return "Aborted";
  }
  return "?";
}

void SearchConfig::validate() const {
  if (B < 1) throw ConfigError("B must be >= 1");
  if (K < 1) throw ConfigError("K must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  if (M < 1) throw ConfigError("M must be >= 1");
  if (tau_stop && (tau_stop->successes() == 0)) {
    throw ConfigError("tau_stop must be in (0, 1]");
  }
  if (victim_pool.empty()) throw ConfigError("victim_pool is empty");
  if (attacker_endpoint.empty()) throw ConfigError("attacker endpoint is empty");
  if (seed_payload.empty()) throw ConfigError("seed payload is empty");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

Json SearchConfig::to_json() const {
  Json j;
  j["B"] = B;
  j["K"] = K;
  j["T"] = T;
  j["M"] = M;
  j["tau_stop"] = tau_stop ? tau_stop->to_json() : Json(nullptr);
  j["seed"] = seed;
  j["victim_pool"] = victim_pool;
  j["attacker_endpoint"] = attacker_endpoint;
  j["defense_id"] = defense_id;
  j["budget"] = to_string(budget);
  j["seed_payload"] = seed_payload.to_json();
  return j;
}

// Trial planning

namespace {

constexpr std::uint64_t kInstructionSalt = 0x1a57;
constexpr std::uint64_t kVictimSalt = 0x71c7;
constexpr std::uint64_t kEpisodeSalt = 0xe915;
constexpr std::uint64_t kAttackerSalt = 0xa77c;

// Fisher-Yates driven by splitmix, so the order does not depend on the
// standard library's distributions.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  for (std::size_t i = v.size(); i > 1; --i) {
    seed = mix_seed(seed, i);
    std::swap(v[i - 1], v[seed % i]);
  }
}

std::uint64_t episode_seed(std::uint64_t seed, NodeId node, int trial) {
  return mix_seed(mix_seed(mix_seed(seed, kEpisodeSalt), node),
                  static_cast<std::uint64_t>(trial));
}

}  // namespace

TrialPlan plan_trials(std::uint64_t seed, NodeId node, int M, std::size_t pool_size,
                      const std::vector<std::string>& victims) {
  if (pool_size == 0) throw InvalidArgument("empty instruction pool");
  if (victims.empty()) throw InvalidArgument("empty victim pool");
  TrialPlan plan;
  std::uint64_t s = mix_seed(mix_seed(seed, kInstructionSalt), node);
  if (pool_size >= static_cast<std::size_t>(M)) {
    std::vector<std::size_t> idx(pool_size);
    std::iota(idx.begin(), idx.end(), 0);
    seeded_shuffle(idx, s);
    plan.instruction.assign(idx.begin(), idx.begin() + M);
  } else {
    for (int j = 0; j < M; ++j) {
      s = mix_seed(s, static_cast<std::uint64_t>(j));
      plan.instruction.push_back(s % pool_size);
    }
  }
  std::vector<std::string> order = victims;
  seeded_shuffle(order, mix_seed(mix_seed(seed, kVictimSalt), node));
  for (int j = 0; j < M; ++j) plan.victim.push_back(order[j % order.size()]);
  return plan;
}

// Evaluation

namespace {

struct EpisodeResult {
  EpisodeTranscript transcript;
  bool success = false;
};

EpisodeResult run_trial(const EvalEnv& env, const EvalTask& task, const TrialPlan& plan,
                        int trial, const SearchConfig& config) {
  EpisodeResult r;
  ToolServer server(env.server);
  server.set_mode(ServerMode::compromise(task.payload, env.scenario.tool_under_attack));
  InProcessToolClient client(server);
  AgentOptions opts = env.agent;
  opts.seed = episode_seed(config.seed, task.node, trial);
  const std::string& victim = plan.victim[static_cast<std::size_t>(trial)];
  const Instruction& q = env.scenario.instruction_pool[plan.instruction[static_cast<std::size_t>(trial)]];
  try {
    r.transcript = run_episode(env.gateway, victim, env.scenario, q, env.pipeline,
                               client, opts);
  } catch (const std::exception& e) {
    r.transcript.endpoint_id = victim;
    r.transcript.query_id = q.id;
    r.transcript.query = q.text;
    r.transcript.error = e.what();
  }
  env.gateway.ledger().add_victim_query(victim);
  // Failed episodes never count as successes.
  r.success = !r.transcript.error && detect_success(r.transcript, env.scenario);
  return r;
}

std::vector<Evaluation> aggregate(const std::vector<EvalTask>& tasks,
                                  std::vector<EpisodeResult>& results,
                                  const SearchConfig& config) {
  std::vector<Evaluation> out(tasks.size());
  const std::size_t M = static_cast<std::size_t>(config.M);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Evaluation& e = out[t];
    std::int64_t wins = 0;
    for (std::size_t j = 0; j < M; ++j) {
      EpisodeResult& r = results[t * M + j];
      wins += r.success ? 1 : 0;
      e.verdicts.push_back(r.success);
      if (r.transcript.error) ++e.errors;
      std::set<std::string> blocked;
      for (const auto& o : r.transcript.observations) {
        for (const auto& s : o.signals) {
          if (s.outcome == DefenseOutcome::Blocked) blocked.insert(s.defense_id);
        }
      }
      for (const auto& b : blocked) ++e.blocked[b];
      e.transcripts.push_back(std::move(r.transcript));
    }
    e.score = ScoreValue(wins, config.M);
  }
  return out;
}

std::vector<TrialPlan> plans_for(const EvalEnv& env, const std::vector<EvalTask>& tasks,
                                 const SearchConfig& config) {
  std::vector<TrialPlan> plans;
  for (const auto& t : tasks) {
    plans.push_back(plan_trials(config.seed, t.node, config.M,
                                env.scenario.instruction_pool.size(),
                                config.victim_pool));
  }
  return plans;
}

}  // namespace

std::vector<Evaluation> evaluate_serial(const EvalEnv& env,
                                        const std::vector<EvalTask>& tasks,
                                        const SearchConfig& config) {
  auto plans = plans_for(env, tasks, config);
  const std::size_t M = static_cast<std::size_t>(config.M);
  std::vector<EpisodeResult> results(tasks.size() * M);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i] = run_trial(env, tasks[i / M], plans[i / M], static_cast<int>(i % M), config);
  }
  return aggregate(tasks, results, config);
}

std::vector<Evaluation> evaluate_parallel(const EvalEnv& env,
                                          const std::vector<EvalTask>& tasks,
                                          const SearchConfig& config) {
  auto plans = plans_for(env, tasks, config);
  const std::size_t M = static_cast<std::size_t>(config.M);
  const long n = static_cast<long>(tasks.size() * M);
  std::vector<EpisodeResult> results(static_cast<std::size_t>(n));
#ifdef _OPENMP
  int threads = config.threads > 0 ? config.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
  for (long i = 0; i < n; ++i) {
    auto u = static_cast<std::size_t>(i);
    results[u] = run_trial(env, tasks[u / M], plans[u / M], static_cast<int>(u % M), config);
  }
  return aggregate(tasks, results, config);
}

Evaluation monte_carlo_evaluate(const EvalEnv& env, const Payload& payload,
                                const SearchConfig& config, NodeId node) {
  std::vector<EvalTask> tasks{{node, payload}};
  auto out = config.parallel ? evaluate_parallel(env, tasks, config)
                             : evaluate_serial(env, tasks, config);
  return std::move(out.front());
}

// Prune and budget

std::vector<NodeId> prune(std::vector<std::pair<NodeId, ScoreValue>> scored, int K) {
  if (K < 1) throw InvalidArgument("K must be >= 1");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(K); ++i) {
    out.push_back(scored[i].first);
  }
  return out;
}

std::vector<NodeId> prune(const SearchTree& tree, const std::vector<NodeId>& children,
                          int K) {
  std::vector<std::pair<NodeId, ScoreValue>> scored;
  for (NodeId id : children) {
    const auto& n = tree.node(id);
    if (!n.score) throw InvalidArgument("prune: node " + std::to_string(id) + " is unscored");
    scored.emplace_back(id, *n.score);
  }
  return prune(std::move(scored), K);
}

std::vector<int> allocate_branch_budget(std::size_t n, int B_total, BudgetMode mode) {
  if (n == 0) throw InvalidArgument("empty frontier");
  if (B_total < static_cast<int>(n)) throw InvalidArgument("B_total < frontier size");
  std::vector<int> out(n);
  if (mode == BudgetMode::Uniform) {
    int base = B_total / static_cast<int>(n);
    int rem = B_total % static_cast<int>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = base + (static_cast<int>(i) < rem ? 1 : 0);
    return out;
  }
  const std::size_t top = (n + 1) / 2;
  std::vector<long> w(n);
  long W = 0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = i < top ? 2 : 1;
    W += w[i];
  }
  const long extra = B_total - static_cast<long>(n);
  long given = 0;
  std::vector<std::pair<long, std::size_t>> rems;  // (remainder numerator, rank)
  for (std::size_t i = 0; i < n; ++i) {
    long q = extra * w[i] / W;
    out[i] = 1 + static_cast<int>(q);
    given += q;
    rems.emplace_back(extra * w[i] % W, i);
  }
  std::stable_sort(rems.begin(), rems.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (long k = 0; k < extra - given; ++k) ++out[rems[static_cast<std::size_t>(k)].second];
  return out;
}

std::string RunTrace::jsonl() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out += '\n';
  }
  return out;
}

// Main loop

namespace {

Json best_json(const RunResult& r) {
  return Json{{"id", r.best_id ? Json(*r.best_id) : Json(nullptr)},
              {"payload", r.best_payload.to_json()},
              {"score", r.best_score.to_json()}};
}

}  // namespace

RunResult run_optimization(const SearchConfig& config, SearchEnv& env) {
  config.validate();
  const Scenario& scenario = env.eval.scenario;
  const ScoreValue tau = config.tau_stop ? *config.tau_stop : scenario.default_tau_stop();
  QueryLedger& ledger = env.eval.gateway.ledger();

  RunResult result;
  result.tree = SearchTree(config.seed_payload);
  result.best_payload = config.seed_payload;
  result.best_score = ScoreValue(0, config.M);
  SearchTree& tree = result.tree;

  result.trace.add(Json{{"event", "config"},
                        {"config_hash", env.config_hash},
                        {"config", env.config_snapshot},
                        {"search", config.to_json()},
                        {"tau_stop", tau.to_json()},
                        {"scenario", scenario.name},
                        {"defense", env.eval.pipeline.label()}});

  const std::string sample_query = scenario.instruction_pool.front().text;
  bool stopped = false;
  for (int t = 1; t <= config.T && !stopped; ++t) {
    result.iterations = t;
    Json branches = Json::array();
    std::vector<NodeId> children;
    const auto frontier = tree.frontier();
    try {
      // Fixed per-iteration budget B*K; a frontier below K (the lone root
      // at t=1) spreads it over fewer parents.
      auto budget = allocate_branch_budget(frontier.size(), config.B * config.K,
                                           config.budget);
      ToolResponse simulated = env.attacker.simulate_benign_response(sample_query);
      for (std::size_t i = 0; i < frontier.size(); ++i) {
        NodeId parent = frontier[i];
        StrategyLabel strategy = choose_strategy(tree, parent, config.defense_id);
        AttackerPrompt prompt =
            env.attacker.build_prompt(tree, parent, strategy, config.defense_id, simulated);
        CandidateBatch batch = env.attacker.generate_candidates(
            prompt, budget[i], strategy.mode, tree.node(parent).payload.keyset(), parent,
            mix_seed(mix_seed(config.seed, kAttackerSalt), parent));
        Json ids = Json::array();
        for (auto& c : batch.candidates) {
          NodeId id = tree.add_child(parent, std::move(c), strategy);
          children.push_back(id);
          ids.push_back(id);
        }
        branches.push_back(Json{{"parent", parent},
                                {"budget", budget[i]},
                                {"strategy", strategy.to_json()},
                                {"prompt", prompt.to_json()},
                                {"batch", batch.to_json()},
                                {"children", ids}});
      }
    } catch (const Error& e) {
      result.reason = TerminationReason::Aborted;
      result.error = e.what();
      result.trace.add(Json{{"event", "iteration"}, {"t", t}, {"branches", branches},
                            {"aborted", e.what()}});
      break;
    }

    Json iter{{"event", "iteration"}, {"t", t}, {"branches", branches}};
    if (children.empty()) {
      // Nothing to evaluate; the frontier stays as it was.
      result.best_curve.push_back(result.best_score);
      iter["children"] = Json::array();
      iter["frontier"] = frontier;
      iter["best"] = best_json(result);
      iter["ledger"] = ledger.snapshot_json();
      result.trace.add(iter);
      continue;
    }

    std::vector<EvalTask> tasks;
    for (NodeId id : children) tasks.push_back({id, tree.node(id).payload});
    auto evals = config.parallel ? evaluate_parallel(env.eval, tasks, config)
                                 : evaluate_serial(env.eval, tasks, config);

    Json kids = Json::array();
    for (std::size_t i = 0; i < children.size(); ++i) {
      tree.set_score(children[i], evals[i].score);
      tree.set_blocked_signals(children[i], evals[i].blocked);
      Json k = tree.node(children[i]).to_json();
      k["errors"] = evals[i].errors;
      if (config.trace_transcripts) {
        Json eps = Json::array();
        for (std::size_t j = 0; j < evals[i].transcripts.size(); ++j) {
          Json e = evals[i].transcripts[j].to_json();
          e["success"] = static_cast<bool>(evals[i].verdicts[j]);
          e["refusal_quote"] = evals[i].verdicts[j] &&
                               is_refusal_quote(evals[i].transcripts[j], scenario);
          eps.push_back(std::move(e));
        }
        k["episodes"] = std::move(eps);
      }
      kids.push_back(std::move(k));
    }

    auto next = prune(tree, children, config.K);
    tree.set_frontier(next);
    const SearchNode& local_best = tree.node(next.front());
    if (*local_best.score > result.best_score) {
      result.best_score = *local_best.score;
      result.best_payload = local_best.payload;
      result.best_id = local_best.id;
    }
    result.best_curve.push_back(result.best_score);

    std::vector<NodeId> discarded;
    for (NodeId id : children) {
      if (std::find(next.begin(), next.end(), id) == next.end()) discarded.push_back(id);
    }
    iter["children"] = std::move(kids);
    iter["frontier"] = next;
    iter["pruned"] = discarded;
    iter["best"] = best_json(result);
    iter["ledger"] = ledger.snapshot_json();
    result.trace.add(iter);

    if (result.best_score >= tau) {
      result.reason = TerminationReason::EarlyStop;
      stopped = true;
    }
  }

  result.trace.add(Json{{"event", "end"},
                        {"reason", to_string(result.reason)},
                        {"error", result.error ? Json(*result.error) : Json(nullptr)},
                        {"iterations", result.iterations},
                        {"best", best_json(result)},
                        {"ledger", ledger.snapshot_json()}});
  return result;
}

}  // namespace tip
