#include "tip/attacker.hpp"

#include <algorithm>
#include <cstdio>

#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

std::string AttackerPrompt::user_text() const {
  std::string out;
  for (const std::string* b : {&feedback_block, &simulation_block, &strategy_block,
                               &defense_block, &task_block}) {
    if (b->empty()) continue;
    if (!out.empty()) out += "\n\n";
    out += *b;
  }
  return out;
}

std::vector<ChatMessage> AttackerPrompt::messages() const {
  return {{Role::System, system}, {Role::User, user_text()}};
}

Json AttackerPrompt::to_json() const {
  return Json{{"system", system},
              {"feedback", feedback_block},
              {"simulation", simulation_block},
              {"strategy", strategy_block},
              {"defense", defense_block},
              {"task", task_block}};
}

Json CandidateBatch::to_json() const {
  Json cands = Json::array();
  for (const auto& c : candidates) cands.push_back(c.to_json());
  Json rej = Json::array();
  for (const auto& [raw, reason] : rejected) {
    rej.push_back(Json{{"raw", raw}, {"reason", reason}});
  }
  return Json{{"parent", parent_id},
              {"candidates", cands},
              {"rejected", rej},
              {"attacker_calls", attacker_calls}};
}

// Payload extraction

namespace {

// End of the object starting at text[begin] == '{', or npos. Quotes of
// either kind delimit strings.
std::size_t match_brace(const std::string& text, std::size_t begin) {
  int depth = 0;
  char quote = 0;
  for (std::size_t i = begin; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string::npos;
}

std::string single_to_double(const std::string& s) {
  std::string out;
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote == '"') {
      out.push_back(c);
      if (c == '\\' && i + 1 < s.size()) {
        out.push_back(s[++i]);
      } else if (c == '"') {
        quote = 0;
      }
    } else if (quote == '\'') {
      if (c == '\\' && i + 1 < s.size()) {
        char n = s[++i];
        if (n == '\'') {
          out.push_back('\'');
        } else {
          out.push_back('\\');
          out.push_back(n);
        }
      } else if (c == '\'') {
        out.push_back('"');
        quote = 0;
      } else if (c == '"') {
        out += "\\\"";
      } else {
        out.push_back(c);
      }
    } else if (c == '"') {
      quote = '"';
      out.push_back(c);
    } else if (c == '\'') {
      quote = '\'';
      out.push_back('"');
    } else {
      out.push_back(c);
    }
  }
  return out;
}

// Applies `f` to every character outside double-quoted strings.
template <typename F>
std::string outside_strings(const std::string& s, F&& f) {
  std::string out;
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_str) {
      out.push_back(c);
      if (c == '\\' && i + 1 < s.size()) {
        out.push_back(s[++i]);
      } else if (c == '"') {
        in_str = false;
      }
      continue;
    }
    if (c == '"') {
      in_str = true;
      out.push_back(c);
      continue;
    }
    i = f(s, i, out);
  }
  return out;
}

std::string drop_trailing_commas(const std::string& s) {
  return outside_strings(s, [](const std::string& t, std::size_t i, std::string& out) {
    if (t[i] == ',') {
      std::size_t j = i + 1;
      while (j < t.size() && std::isspace(static_cast<unsigned char>(t[j]))) ++j;
      if (j < t.size() && (t[j] == '}' || t[j] == ']')) return i;
    }
    out.push_back(t[i]);
    return i;
  });
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string quote_bare_keys(const std::string& s) {
  return outside_strings(s, [](const std::string& t, std::size_t i, std::string& out) {
    char c = t[i];
    out.push_back(c);
    if (c != '{' && c != ',') return i;
    std::size_t j = i + 1;
    while (j < t.size() && std::isspace(static_cast<unsigned char>(t[j]))) ++j;
    if (j >= t.size() || !ident_start(t[j])) return i;
    std::size_t k = j;
    while (k < t.size() && ident_char(t[k])) ++k;
    std::size_t m = k;
    while (m < t.size() && std::isspace(static_cast<unsigned char>(t[m]))) ++m;
    if (m >= t.size() || t[m] != ':') return i;
    out += t.substr(i + 1, j - i - 1);
    out += '"' + t.substr(j, k - j) + '"';
    return k - 1;
  });
}

Payload to_payload(const Json& j, std::size_t b, std::size_t e) {
  if (!j.is_object()) throw PayloadParseError("payload is not a JSON object", b, e);
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) {
      throw PayloadParseError("value of \"" + k + "\" is not a string", b, e);
    }
    if (!is_valid_field_key(k)) throw PayloadParseError("invalid key \"" + k + "\"", b, e);
  }
  return Payload::from_json(j);
}

}  // namespace

Payload extract_payload(const std::string& raw) {
  std::size_t begin = std::string::npos;
  // Fenced block first.
  for (std::size_t pos = raw.find("```"); pos != std::string::npos;) {
    std::size_t close = raw.find("```", pos + 3);
    if (close == std::string::npos) break;
    std::size_t brace = raw.find('{', pos + 3);
    if (brace != std::string::npos && brace < close) {
      begin = brace;
      break;
    }
    pos = raw.find("```", close + 3);
  }
  if (begin == std::string::npos) begin = raw.find('{');
  if (begin == std::string::npos) {
    throw PayloadParseError("no JSON object in completion", 0, raw.size());
  }
  std::size_t end = match_brace(raw, begin);
  if (end == std::string::npos) {
    throw PayloadParseError("unterminated JSON object", begin, raw.size());
  }
  std::string text = raw.substr(begin, end - begin);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    std::string repaired = quote_bare_keys(drop_trailing_commas(single_to_double(text)));
    j = Json::parse(repaired, nullptr, false);
    if (j.is_discarded()) throw PayloadParseError("irreparable JSON object", begin, end);
  }
  return to_payload(j, begin, end);
}

// Strategy

StrategyLabel choose_strategy(const SearchTree& tree, NodeId parent,
                              const std::string& defense_id) {
  const SearchNode& p = tree.node(parent);
  StrategyLabel s;
  s.mode = mode_for_parent_score(p.score);
  if (defense_id != "none" && !defense_id.empty()) s.defense_directive = defense_id;
  if (s.mode == SearchMode::StableRefinement) {
    s.tactic = p.parent ? p.strategy_used.tactic : Tactic::ImplicitInduction;
    return s;
  }
  s.tactic = Tactic::ImplicitInduction;
  auto path = history_path(tree, parent);
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    if (!it->parent) break;  // root was not created by a branching
    if (it->strategy_used.mode == SearchMode::BroadExploration) {
      s.tactic = other(it->strategy_used.tactic);
      break;
    }
  }
  return s;
}

// Engine

AttackerEngine::AttackerEngine(Gateway& gateway, std::string endpoint_id,
                               Scenario scenario, ToolDefinition tool,
                               AttackerOptions options, Templates templates)
    : gateway_(gateway),
      endpoint_id_(std::move(endpoint_id)),
      scenario_(std::move(scenario)),
      tool_(std::move(tool)),
      options_(options),
      templates_(std::move(templates)),
      directives_(templates_.json("defense_directives")) {
  if (options_.repair_attempts < 0) throw InvalidArgument("repair_attempts must be >= 0");
}

ToolResponse AttackerEngine::fixture_response() const {
  Json args = tool_.sample_args.empty() ? Json::object() : tool_.sample_args.front();
  return tool_.generate(args, 0);
}

ToolResponse AttackerEngine::simulate_benign_response(const std::string& query) {
  {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(query);
    if (it != cache_.end()) return it->second;
  }
  ToolResponse out = fixture_response();
  if (!options_.offline_simulation) {
    std::string prompt = fill_template(templates_.text("attacker/simulate_request"),
                                       {{"tool", tool_.name},
                                        {"description", tool_.description},
                                        {"query", query}});
    for (int attempt = 0; attempt <= options_.repair_attempts; ++attempt) {
      Sampling s;
      s.temperature = options_.temperature;
      s.seed = mix_seed(fnv1a64(query), static_cast<std::uint64_t>(attempt));
      ++simulation_calls_;
      std::string raw = gateway_.chat(endpoint_id_, {{Role::User, prompt}}, s);
      auto open = raw.find('{');
      if (open == std::string::npos) continue;
      auto close = match_brace(raw, open);
      if (close == std::string::npos) continue;
      Json j = Json::parse(raw.substr(open, close - open), nullptr, false);
      if (j.is_discarded() || !j.is_object() || j.empty()) continue;
      if (validate_schema(tool_.response_schema, j)) continue;
      out = ToolResponse::from_json(tool_.name, j);
      break;
    }
  }
  std::lock_guard lock(cache_mu_);
  return cache_.emplace(query, std::move(out)).first->second;
}

namespace {

std::string join_keys(const std::set<std::string>& keys) {
  std::string out;
  for (const auto& k : keys) {
    if (!out.empty()) out += ", ";
    out += k;
  }
  return out;
}

}  // namespace

AttackerPrompt AttackerEngine::build_prompt(const SearchTree& tree, NodeId parent_id,
                                            const StrategyLabel& strategy,
                                            const std::string& defense_id,
                                            const ToolResponse& simulated) const {
  const SearchNode& parent = tree.node(parent_id);
  AttackerPrompt p;
  p.system = templates_.text("attacker/system");

  std::vector<SearchNode> scored;
  for (auto& n : history_path(tree, parent_id)) {
    if (n.score) scored.push_back(std::move(n));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (*a.score != *b.score) return *a.score < *b.score;
    return a.id < b.id;
  });
  if (scored.empty()) {
    p.feedback_block = templates_.text("attacker/feedback_empty");
  } else {
    p.feedback_block = templates_.text("attacker/feedback_header");
    for (const auto& n : scored) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", n.score->value());
      p.feedback_block += "\n" + fill_template(templates_.text("attacker/feedback_entry"),
                                               {{"score", buf},
                                                {"fraction", n.score->to_string()},
                                                {"payload", canonical_serialize(n.payload)}});
    }
  }

  std::string query = scenario_.instruction_pool.front().text;
  p.simulation_block = fill_template(templates_.text("attacker/simulation"),
                                     {{"tool", tool_.name},
                                      {"description", tool_.description},
                                      {"query", query},
                                      {"response", canonical_serialize(simulated)}});

  std::string mode = to_string(strategy.mode);
  p.strategy_block = fill_template(
      templates_.text(strategy.tactic == Tactic::ImplicitInduction
                          ? "attacker/strategy_implicit"
                          : "attacker/strategy_explicit"),
      {{"mode", mode}});
  p.strategy_block += "\n";
  if (strategy.mode == SearchMode::BroadExploration) {
    p.strategy_block += templates_.text("attacker/mode_broad");
  } else {
    p.strategy_block += fill_template(templates_.text("attacker/mode_stable"),
                                      {{"keys", join_keys(parent.payload.keyset())}});
  }

  std::string did = defense_id.empty() ? "none" : defense_id;
  if (!directives_.contains(did)) throw LookupError("no defense directive for " + did);
  p.defense_block = "Defense: " + did + "\n" + directives_[did].get<std::string>();
  for (const auto& [stage, count] : parent.blocked_signals) {
    if (count == 0 || !parent.score) continue;
    p.defense_block += "\nObserved: " + stage + " blocked " + std::to_string(count) +
                       " of " + std::to_string(parent.score->trials()) +
                       " responses for the current payload.";
  }

  const std::string iteration = std::to_string(parent.iteration);
  const std::string parent_payload = canonical_serialize(parent.payload);
  if (scenario_.objective == Objective::Fraud) {
    p.task_block = fill_template(templates_.text("attacker/task_fraud"),
                                 {{"target_url", scenario_.target_url},
                                  {"iteration", iteration},
                                  {"parent_payload", parent_payload}});
  } else {
    std::set<std::string> fields(scenario_.sensitive_fields.begin(),
                                 scenario_.sensitive_fields.end());
    p.task_block = fill_template(templates_.text("attacker/task_datasteal"),
                                 {{"exfil_tool", scenario_.exfil_tool},
                                  {"sensitive_fields", join_keys(fields)},
                                  {"exfil_address", scenario_.exfil_address},
                                  {"iteration", iteration},
                                  {"parent_payload", parent_payload}});
  }
  return p;
}

CandidateBatch AttackerEngine::generate_candidates(const AttackerPrompt& prompt, int B,
                                                   SearchMode mode,
                                                   const std::set<std::string>& parent_keys,
                                                   NodeId parent_id, std::uint64_t seed) {
  if (B < 1) throw InvalidArgument("branch width must be >= 1");
  CandidateBatch batch;
  batch.parent_id = parent_id;
  const auto messages = prompt.messages();
  const int tries = options_.repair_attempts + 1;
  for (int j = 0; j < B; ++j) {
    for (int attempt = 0; attempt < tries; ++attempt) {
      Sampling s;
      s.temperature = options_.temperature;
      s.seed = mix_seed(seed, static_cast<std::uint64_t>(j * tries + attempt));
      ++batch.attacker_calls;
      std::string raw = gateway_.chat(endpoint_id_, messages, s);
      try {
        Payload p = extract_payload(raw);
        if (p.empty()) {
          batch.rejected.emplace_back(raw, "empty payload");
          continue;
        }
        if (mode == SearchMode::StableRefinement && p.keyset() != parent_keys) {
          batch.rejected.emplace_back(
              raw, "key-freeze: expected {" + join_keys(parent_keys) + "}, got {" +
                       join_keys(p.keyset()) + "}");
          continue;
        }
        batch.candidates.push_back(std::move(p));
        break;
      } catch (const PayloadParseError& e) {
        batch.rejected.emplace_back(
            raw, std::string("parse: ") + e.what() + " at [" +
                     std::to_string(e.span_begin()) + ", " +
                     std::to_string(e.span_end()) + ")");
      }
    }
  }
  return batch;
}

}  // namespace tip
