#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tip/payload.hpp"
#include "tip/perplexity.hpp"
#include "tip/templates.hpp"

namespace tip {

class Gateway;
struct ToolDefinition;

enum class DefenseOutcome { Passed, Blocked, Rewritten };
std::string to_string(DefenseOutcome o);

struct DefenseSignal {
  std::string defense_id;
  DefenseOutcome outcome = DefenseOutcome::Passed;
  std::string detail;

  friend bool operator==(const DefenseSignal&, const DefenseSignal&) = default;
  Json to_json() const;
};

// What a stage may look at besides the response itself.
struct DefenseContext {
  std::string query;
  std::string tool;
  // Benign output of the same call, when the harness knows it. Fields that
  // differ from it count as "added/changed".
  std::optional<ToolResponse> benign_reference;
  // Keys the benign generator emits; used when no reference is available.
  std::vector<std::string> benign_keys;
  // The episode's system prompt. Stages that harden the prompt edit it.
  std::string* system_prompt = nullptr;
};

struct DefenseResult {
  ToolResponse response;
  // Text that enters the agent context.
  std::string rendered;
  std::vector<DefenseSignal> signals;
};

class DefenseStage {
 public:
  virtual ~DefenseStage() = default;
  virtual std::string id() const = 0;
  // `rendered` holds the observation text produced so far.
  virtual DefenseSignal apply(ToolResponse& response, std::string& rendered,
                              DefenseContext& ctx) const = 0;
};

// Text fields (key, text) that were added or changed relative to the benign
// schema of the call: the reference response if present, else the benign key
// list, else every text field.
std::vector<std::pair<std::string, std::string>> added_text_fields(
    const ToolResponse& response, const DefenseContext& ctx);

// {"status": "content removed by filter"} for the same tool.
ToolResponse blocked_placeholder(const std::string& tool_id,
                                 const Templates& templates = Templates::builtin());

class IdentityStage : public DefenseStage {
 public:
  std::string id() const override { return "identity"; }
  DefenseSignal apply(ToolResponse&, std::string&, DefenseContext&) const override;
};

// Appends the fixed directive to the system prompt, once.
class InstructionPreventionStage : public DefenseStage {
 public:
  explicit InstructionPreventionStage(const Templates& t = Templates::builtin());
  std::string id() const override { return "instruction_prevention"; }
  DefenseSignal apply(ToolResponse&, std::string&, DefenseContext& ctx) const override;

  const std::string& directive() const { return directive_; }

 private:
  std::string directive_;
};

// PRE + observation + POST(query). Already wrapped text is left alone.
class SandwichStage : public DefenseStage {
 public:
  explicit SandwichStage(const Templates& t = Templates::builtin());
  std::string id() const override { return "sandwich"; }
  DefenseSignal apply(ToolResponse&, std::string& rendered,
                      DefenseContext& ctx) const override;

  std::string wrap(const std::string& body, const std::string& query) const;

 private:
  std::string pre_;
  std::string post_;
};

class PerplexityFilterStage : public DefenseStage {
 public:
  PerplexityFilterStage(std::shared_ptr<const PerplexityEstimator> estimator,
                        double delta, bool fail_closed = false,
                        const Templates& t = Templates::builtin());
  std::string id() const override { return "perplexity_filter"; }
  DefenseSignal apply(ToolResponse& response, std::string& rendered,
                      DefenseContext& ctx) const override;

  double delta() const { return delta_; }

 private:
  std::shared_ptr<const PerplexityEstimator> estimator_;
  double delta_;
  bool fail_closed_;
  std::string placeholder_status_;
};

class InjectionClassifier {
 public:
  virtual ~InjectionClassifier() = default;
  virtual bool is_injection(const std::string& text) const = 0;
};

// Flags text when either rule fires:
//  1. it contains an override phrase ("ignore previous", "disregard", ...);
//  2. some sentence starts with an imperative verb ("visit", "send", ...)
//     and the text addresses the reader ("you", "your") or carries a URL or
//     an email address.
class RuleBasedDetector : public InjectionClassifier {
 public:
  bool is_injection(const std::string& text) const override;
};

// POST {base_url} with {"text": ...}; expects {"label": "injection"|"benign"}.
class HttpClassifier : public InjectionClassifier {
 public:
  explicit HttpClassifier(std::string url) : url_(std::move(url)) {}
  bool is_injection(const std::string& text) const override;

 private:
  std::string url_;
};

class DetectorStage : public DefenseStage {
 public:
  DetectorStage(std::shared_ptr<const InjectionClassifier> classifier,
                bool fail_closed = false,
                const Templates& t = Templates::builtin());
  std::string id() const override { return "detector"; }
  DefenseSignal apply(ToolResponse& response, std::string& rendered,
                      DefenseContext& ctx) const override;

 private:
  std::shared_ptr<const InjectionClassifier> classifier_;
  bool fail_closed_;
  std::string placeholder_status_;
};

// Rewrites the observation through a chat endpoint with a fixed
// summarization prompt.
class SummarizeStage : public DefenseStage {
 public:
  SummarizeStage(Gateway& gateway, std::string endpoint_id,
                 bool fail_closed = false,
                 const Templates& t = Templates::builtin());
  std::string id() const override { return "summarize"; }
  DefenseSignal apply(ToolResponse& response, std::string& rendered,
                      DefenseContext& ctx) const override;

 private:
  Gateway& gateway_;
  std::string endpoint_id_;
  bool fail_closed_;
  std::string system_;
  std::string user_;
  std::string placeholder_status_;
};

// Stages applied left to right; the empty pipeline is the identity.
class DefensePipeline {
 public:
  DefensePipeline() = default;
  explicit DefensePipeline(std::vector<std::shared_ptr<const DefenseStage>> stages)
      : stages_(std::move(stages)) {}

  void add(std::shared_ptr<const DefenseStage> stage) {
    stages_.push_back(std::move(stage));
  }
  DefenseResult run(const ToolResponse& response, DefenseContext& ctx) const;

  bool empty() const { return stages_.empty(); }
  std::vector<std::string> ids() const;
  // "none" for the empty pipeline, else ids joined with '+'.
  std::string label() const;

 private:
  std::vector<std::shared_ptr<const DefenseStage>> stages_;
};

// Everything a configured pipeline may need.
struct DefenseResources {
  Gateway* gateway = nullptr;
  std::shared_ptr<const PerplexityEstimator> perplexity;
  // Used when a perplexity stage gives no explicit "delta".
  std::optional<double> calibrated_delta;
  Templates templates = Templates::builtin();
};

// stages: [{"id": "sandwich"}, {"id": "perplexity_filter", "delta": 40}, ...]
// Ids: identity, instruction_prevention, sandwich, perplexity_filter
// (delta, fail_closed), detector (classifier: "rules" or an http URL,
// fail_closed), summarize (endpoint, fail_closed). A bare string is accepted
// for a stage without parameters.
DefensePipeline build_pipeline(const Json& stages, const DefenseResources& res);

// Text fields of every tool's benign responses over its sample arguments and
// seeds 0..seeds-1.
std::vector<std::string> benign_field_corpus(
    const std::vector<ToolDefinition>& tools, int seeds = 4);

// Local n-gram model trained on the benign corpus.
std::shared_ptr<CharNgramModel> train_benign_model(
    const std::vector<std::string>& corpus);

// 99th percentile (nearest rank) of per-field perplexities over the corpus.
double calibrate_delta(const PerplexityEstimator& estimator,
                       const std::vector<std::string>& corpus,
                       double pct = 99.0);

}  // namespace tip
