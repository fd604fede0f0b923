#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tip/agent.hpp"
#include "tip/gateway.hpp"
#include "tip/payload.hpp"
#include "tip/search.hpp"

namespace tip {

struct CaseVerdict {
  std::string instruction_id;
  std::string endpoint;
  bool success = false;
  bool refusal_quote = false;
  std::optional<std::string> error;

  Json to_json() const;
};

// Held-out attack success on one (endpoint, defense) cell.
struct AsrCell {
  std::string endpoint;
  std::string defense;
  std::int64_t successes = 0;
  std::int64_t cases = 0;
  int refusal_quotes = 0;
  int errors = 0;
  std::uint64_t victim_queries = 0;
  std::vector<CaseVerdict> verdicts;
  std::vector<EpisodeTranscript> transcripts;

  ScoreValue asr() const { return ScoreValue(successes, cases); }
};

// Runs one episode per test instruction against `endpoint` with the payload
// installed. Throws InvalidArgument when a test instruction shares an id or
// text with the scenario's training pool. The case seed depends only on
// (seed, case index), so `parallel` does not change the result.
AsrCell evaluate_asr(const EvalEnv& env, const Payload& payload,
                     const std::vector<Instruction>& tests, const std::string& endpoint,
                     std::uint64_t seed, bool parallel = true);

// Cosine similarity between embeddings of the benign and the compromised
// canonical response text. nullopt when the endpoint cannot embed.
std::optional<double> stealth_similarity(Gateway& gateway, const std::string& embed_endpoint,
                                         const ToolResponse& benign, const Payload& payload);

struct ReportRow {
  std::string tool;
  std::string defense;
  std::string endpoint;
  std::int64_t successes = 0;
  std::int64_t cases = 0;
  std::uint64_t victim_queries = 0;
  std::uint64_t attacker_calls = 0;
  std::optional<double> similarity;
  std::optional<ScoreValue> best_score;
  int refusal_quotes = 0;
};

struct Report {
  std::string config_hash;
  std::string cell;  // "<tool>-<defense>" or "<tool>-transfer"
  std::vector<ReportRow> rows;
  std::vector<ScoreValue> curve;  // best score after each iteration
  bool partial = false;
  std::optional<std::string> termination;
};

// Rebuilds a report from run trace lines alone. Traces without an end event,
// or that ended Aborted, give a partial report.
Report report_from_trace(const std::vector<std::string>& lines);

std::string report_csv(const Report& r);
std::string curve_csv(const Report& r);
Json report_json(const Report& r);

// Writes <hash>.<cell>.csv, .json and, when there is a curve, .curve.csv.
// Returns the paths written.
std::vector<std::string> emit_report(const Report& r, const std::string& dir);

}  // namespace tip
