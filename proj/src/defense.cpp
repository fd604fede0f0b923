#include "tip/defense.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "httplib.h"
#include "tip/error.hpp"
#include "tip/gateway.hpp"
#include "tip/mcp.hpp"
#include "tip/util.hpp"

namespace tip {

std::string to_string(DefenseOutcome o) {
  switch (o) {
    case DefenseOutcome::Passed: return "Passed";
    case DefenseOutcome::Blocked: return "Blocked";
    case DefenseOutcome::Rewritten: return "Rewritten";
  }
  return "?";
}

Json DefenseSignal::to_json() const {
  return Json{{"defense_id", defense_id},
              {"outcome", to_string(outcome)},
              {"detail", detail}};
}

std::vector<std::pair<std::string, std::string>> added_text_fields(
    const ToolResponse& response, const DefenseContext& ctx) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [key, value] : response.entries()) {
    if (ctx.benign_reference) {
      const Json* ref = ctx.benign_reference->find(key.str());
      if (ref && *ref == value) continue;
    } else if (!ctx.benign_keys.empty() &&
               std::find(ctx.benign_keys.begin(), ctx.benign_keys.end(),
                         key.str()) != ctx.benign_keys.end()) {
      continue;
    }
    if (value.is_string()) out.emplace_back(key.str(), value.get<std::string>());
  }
  return out;
}

namespace {

ToolResponse placeholder(const std::string& tool_id, const std::string& status) {
  ToolResponse r(tool_id);
  r.add(FieldKey("status"), status);
  return r;
}

std::string placeholder_status(const Templates& t) {
  return t.json("defense_templates").at("blocked_placeholder_status").get<std::string>();
}

DefenseSignal block(ToolResponse& response, std::string& rendered,
                    const std::string& status, std::string id,
                    std::string detail) {
  response = placeholder(response.tool_id(), status);
  rendered = canonical_serialize(response);
  return {std::move(id), DefenseOutcome::Blocked, std::move(detail)};
}

}  // namespace

ToolResponse blocked_placeholder(const std::string& tool_id,
                                 const Templates& templates) {
  return placeholder(tool_id, placeholder_status(templates));
}

DefenseSignal IdentityStage::apply(ToolResponse&, std::string&,
                                   DefenseContext&) const {
  return {id(), DefenseOutcome::Passed, ""};
}

InstructionPreventionStage::InstructionPreventionStage(const Templates& t)
    : directive_(t.json("defense_templates").at("instruction_directive")) {}

DefenseSignal InstructionPreventionStage::apply(ToolResponse&, std::string&,
                                                DefenseContext& ctx) const {
  if (!ctx.system_prompt) return {id(), DefenseOutcome::Passed, "no system prompt"};
  std::string& sp = *ctx.system_prompt;
  if (sp.find(directive_) != std::string::npos) {
    return {id(), DefenseOutcome::Passed, "directive already present"};
  }
  sp += "\n\n" + directive_;
  return {id(), DefenseOutcome::Passed, "directive appended"};
}

SandwichStage::SandwichStage(const Templates& t) {
  Json j = t.json("defense_templates");
  pre_ = j.at("sandwich_pre").get<std::string>();
  post_ = j.at("sandwich_post").get<std::string>();
}

std::string SandwichStage::wrap(const std::string& body,
                                const std::string& query) const {
  return pre_ + body + fill_template(post_, {{"query", query}});
}

DefenseSignal SandwichStage::apply(ToolResponse&, std::string& rendered,
                                   DefenseContext& ctx) const {
  std::string post = fill_template(post_, {{"query", ctx.query}});
  bool wrapped = rendered.size() >= pre_.size() + post.size() &&
                 rendered.rfind(pre_, 0) == 0 &&
                 rendered.compare(rendered.size() - post.size(), post.size(),
                                  post) == 0;
  if (wrapped) return {id(), DefenseOutcome::Passed, "already wrapped"};
  rendered = pre_ + rendered + post;
  return {id(), DefenseOutcome::Passed, "wrapped"};
}

PerplexityFilterStage::PerplexityFilterStage(
    std::shared_ptr<const PerplexityEstimator> estimator, double delta,
    bool fail_closed, const Templates& t)
    : estimator_(std::move(estimator)),
      delta_(delta),
      fail_closed_(fail_closed),
      placeholder_status_(placeholder_status(t)) {
  if (!(delta_ > 0.0)) throw InvalidArgument("perplexity threshold must be > 0");
  if (!estimator_) throw InvalidArgument("perplexity filter needs an estimator");
}

DefenseSignal PerplexityFilterStage::apply(ToolResponse& response,
                                           std::string& rendered,
                                           DefenseContext& ctx) const {
  double worst = 0.0;
  std::string worst_key;
  try {
    for (const auto& [key, text] : added_text_fields(response, ctx)) {
      if (text.empty()) continue;
      double ppl = estimate_perplexity(*estimator_, text);
      if (ppl > worst) {
        worst = ppl;
        worst_key = key;
      }
    }
  } catch (const Error& e) {
    std::string detail = std::string("perplexity backend unavailable: ") + e.what();
    if (fail_closed_) return block(response, rendered, placeholder_status_, id(), detail);
    return {id(), DefenseOutcome::Passed, detail};
  }
  char buf[96];
  if (worst > delta_) {
    std::snprintf(buf, sizeof buf, "max perplexity %.3f > %.3f", worst, delta_);
    return block(response, rendered, placeholder_status_, id(),
                 std::string(buf) + " on field " + worst_key);
  }
  std::snprintf(buf, sizeof buf, "max perplexity %.3f <= %.3f", worst, delta_);
  return {id(), DefenseOutcome::Passed, buf};
}

// Rule-based detector

namespace {

const std::vector<std::string>& override_phrases() {
  static const std::vector<std::string> p = {
      "ignore previous", "ignore all", "ignore the above", "ignore your",
      "disregard", "forget your instructions", "forget previous",
      "new instructions", "override", "system prompt", "you must"};
  return p;
}

const std::set<std::string>& imperative_verbs() {
  static const std::set<std::string> v = {
      "visit", "click", "go", "send", "email", "forward", "tell", "recommend",
      "include", "open", "share", "call", "follow", "navigate", "download",
      "transfer", "reply", "contact", "respond", "inform", "direct", "mention",
      "write", "submit", "provide", "ignore"};
  return v;
}

std::vector<std::string> sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool end = c == '!' || c == '?' || c == '\n' || c == ':' ||
               (c == '.' && (i + 1 == text.size() || text[i + 1] == ' '));
    if (end) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

bool RuleBasedDetector::is_injection(const std::string& text) const {
  std::string low = to_lower(text);
  for (const auto& p : override_phrases()) {
    if (low.find(p) != std::string::npos) return true;
  }
  bool imperative = false;
  for (const auto& s : sentences(low)) {
    auto words = word_tokens(s);
    if (!words.empty() && imperative_verbs().count(words.front())) imperative = true;
    // "please <verb>" is still an imperative.
    if (words.size() > 1 && words[0] == "please" &&
        imperative_verbs().count(words[1])) {
      imperative = true;
    }
  }
  if (!imperative) return false;
  static const std::regex url(R"(https?://|www\.)");
  static const std::regex email(R"([a-z0-9._%+-]+@[a-z0-9.-]+\.[a-z]{2,})");
  auto words = word_tokens(low);
  bool second_person = std::any_of(words.begin(), words.end(), [](const auto& w) {
    return w == "you" || w == "your" || w == "yours";
  });
  return second_person || std::regex_search(low, url) || std::regex_search(low, email);
}

bool HttpClassifier::is_injection(const std::string& text) const {
  net::note_attempt(url_);
  ParsedUrl u = parse_http_url(url_);
  httplib::Client cli(u.host_port);
  cli.set_connection_timeout(10);
  auto res = cli.Post(u.path_prefix.empty() ? "/" : u.path_prefix,
                      canonical_dump(Json{{"text", text}}), "application/json");
  if (!res) throw EndpointError("classifier unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw EndpointError("classifier returned HTTP " + std::to_string(res->status));
  }
  Json j = Json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("label") || !j["label"].is_string()) {
    throw ProtocolError("classifier response lacks a label");
  }
  return j["label"] == "injection";
}

DetectorStage::DetectorStage(std::shared_ptr<const InjectionClassifier> classifier,
                             bool fail_closed, const Templates& t)
    : classifier_(std::move(classifier)),
      fail_closed_(fail_closed),
      placeholder_status_(placeholder_status(t)) {
  if (!classifier_) throw InvalidArgument("detector needs a classifier");
}

DefenseSignal DetectorStage::apply(ToolResponse& response, std::string& rendered,
                                   DefenseContext& ctx) const {
  try {
    for (const auto& [key, text] : added_text_fields(response, ctx)) {
      if (classifier_->is_injection(text)) {
        return block(response, rendered, placeholder_status_, id(),
                     "injection in field " + key);
      }
    }
  } catch (const Error& e) {
    std::string detail = std::string("classifier unavailable: ") + e.what();
    if (fail_closed_) return block(response, rendered, placeholder_status_, id(), detail);
    return {id(), DefenseOutcome::Passed, detail};
  }
  return {id(), DefenseOutcome::Passed, "no injection found"};
}

SummarizeStage::SummarizeStage(Gateway& gateway, std::string endpoint_id,
                               bool fail_closed, const Templates& t)
    : gateway_(gateway),
      endpoint_id_(std::move(endpoint_id)),
      fail_closed_(fail_closed),
      placeholder_status_(placeholder_status(t)) {
  Json j = t.json("defense_templates");
  system_ = j.at("summarize_system").get<std::string>();
  user_ = j.at("summarize_user").get<std::string>();
}

DefenseSignal SummarizeStage::apply(ToolResponse& response, std::string& rendered,
                                    DefenseContext&) const {
  try {
    rendered = gateway_.chat(
        endpoint_id_,
        {{Role::System, system_},
         {Role::User, fill_template(user_, {{"observation", rendered}})}});
  } catch (const Error& e) {
    std::string detail = std::string("summarizer unavailable: ") + e.what();
    if (fail_closed_) return block(response, rendered, placeholder_status_, id(), detail);
    return {id(), DefenseOutcome::Passed, detail};
  }
  return {id(), DefenseOutcome::Rewritten, "summarized"};
}

DefenseResult DefensePipeline::run(const ToolResponse& response,
                                   DefenseContext& ctx) const {
  DefenseResult out{response, canonical_serialize(response), {}};
  for (const auto& stage : stages_) {
    out.signals.push_back(stage->apply(out.response, out.rendered, ctx));
  }
  return out;
}

std::vector<std::string> DefensePipeline::ids() const {
  std::vector<std::string> ids;
  for (const auto& s : stages_) ids.push_back(s->id());
  return ids;
}

std::string DefensePipeline::label() const {
  if (stages_.empty()) return "none";
  std::string out;
  for (const auto& s : stages_) {
    if (!out.empty()) out += "+";
    out += s->id();
  }
  return out;
}

DefensePipeline build_pipeline(const Json& stages, const DefenseResources& res) {
  if (!stages.is_array()) throw ConfigError("defense stages must be an array");
  DefensePipeline p;
  for (const auto& raw : stages) {
    Json s = raw.is_string() ? Json{{"id", raw}} : raw;
    if (!s.is_object() || !s.contains("id")) {
      throw ConfigError("defense stage needs an \"id\"");
    }
    std::string id = s["id"].get<std::string>();
    bool fail_closed = s.value("fail_closed", false);
    if (id == "identity" || id == "none") {
      p.add(std::make_shared<IdentityStage>());
    } else if (id == "instruction_prevention") {
      p.add(std::make_shared<InstructionPreventionStage>(res.templates));
    } else if (id == "sandwich") {
      p.add(std::make_shared<SandwichStage>(res.templates));
    } else if (id == "perplexity_filter") {
      if (!res.perplexity) throw ConfigError("perplexity_filter: no estimator configured");
      double delta = 0.0;
      if (s.contains("delta")) {
        delta = s["delta"].get<double>();
      } else if (res.calibrated_delta) {
        delta = *res.calibrated_delta;
      } else {
        throw ConfigError("perplexity_filter: no delta given and none calibrated");
      }
      p.add(std::make_shared<PerplexityFilterStage>(res.perplexity, delta,
                                                    fail_closed, res.templates));
    } else if (id == "detector") {
      std::string c = s.value("classifier", std::string("rules"));
      std::shared_ptr<const InjectionClassifier> cls;
      if (c == "rules") {
        cls = std::make_shared<RuleBasedDetector>();
      } else if (is_well_formed_url(c) && c.rfind("http", 0) == 0) {
        cls = std::make_shared<HttpClassifier>(c);
      } else {
        throw ConfigError("detector: classifier must be \"rules\" or an http URL");
      }
      p.add(std::make_shared<DetectorStage>(cls, fail_closed, res.templates));
    } else if (id == "summarize") {
      if (!res.gateway) throw ConfigError("summarize: no gateway");
      std::string ep = s.value("endpoint", std::string());
      if (!res.gateway->has_endpoint(ep)) {
        throw ConfigError("summarize: unknown endpoint \"" + ep + "\"");
      }
      p.add(std::make_shared<SummarizeStage>(*res.gateway, ep, fail_closed,
                                             res.templates));
    } else {
      throw ConfigError("unknown defense stage \"" + id + "\"");
    }
  }
  return p;
}

std::vector<std::string> benign_field_corpus(const std::vector<ToolDefinition>& tools,
                                             int seeds) {
  std::vector<std::string> corpus;
  for (const auto& t : tools) {
    for (const auto& args : t.sample_args) {
      for (int s = 0; s < seeds; ++s) {
        ToolResponse r = t.generate(args, static_cast<std::uint64_t>(s));
        for (const auto& [_, v] : r.entries()) {
          if (v.is_string() && !v.get<std::string>().empty()) {
            corpus.push_back(v.get<std::string>());
          }
        }
      }
    }
  }
  return corpus;
}

std::shared_ptr<CharNgramModel> train_benign_model(
    const std::vector<std::string>& corpus) {
  auto m = std::make_shared<CharNgramModel>(5);
  m->train(corpus);
  return m;
}

double calibrate_delta(const PerplexityEstimator& estimator,
                       const std::vector<std::string>& corpus, double pct) {
  std::vector<double> v;
  v.reserve(corpus.size());
  for (const auto& text : corpus) v.push_back(estimate_perplexity(estimator, text));
  return percentile(std::move(v), pct);
}

}  // namespace tip
