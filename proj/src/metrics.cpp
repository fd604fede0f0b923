#include "tip/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tip/error.hpp"
#include "tip/mcp.hpp"
#include "tip/util.hpp"

namespace tip {

namespace {

constexpr std::uint64_t kCaseSalt = 0x7e57;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Quotes a CSV field only when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Json CaseVerdict::to_json() const {
  return Json{{"instruction_id", instruction_id},
              {"endpoint", endpoint},
              {"success", success},
              {"refusal_quote", refusal_quote},
              {"error", error ? Json(*error) : Json(nullptr)}};
}

AsrCell evaluate_asr(const EvalEnv& env, const Payload& payload,
                     const std::vector<Instruction>& tests, const std::string& endpoint,
                     std::uint64_t seed, bool parallel) {
  if (tests.empty()) throw InvalidArgument("no test instructions");
  std::set<std::string> train_ids, train_texts;
  for (const auto& q : env.scenario.instruction_pool) {
    train_ids.insert(q.id);
    train_texts.insert(q.text);
  }
  for (const auto& q : tests) {
    if (train_ids.count(q.id) || train_texts.count(q.text)) {
      throw InvalidArgument("test instruction " + q.id + " overlaps the training pool");
    }
  }

  const long n = static_cast<long>(tests.size());
  std::vector<EpisodeTranscript> transcripts(tests.size());
  auto run_case = [&](long i) {
    const auto u = static_cast<std::size_t>(i);
    ToolServer server(env.server);
    server.set_mode(ServerMode::compromise(payload, env.scenario.tool_under_attack));
    InProcessToolClient client(server);
    AgentOptions opts = env.agent;
    opts.seed = mix_seed(mix_seed(seed, kCaseSalt), u);
    try {
      transcripts[u] = run_episode(env.gateway, endpoint, env.scenario, tests[u],
                                   env.pipeline, client, opts);
    } catch (const std::exception& e) {
      transcripts[u].endpoint_id = endpoint;
      transcripts[u].query_id = tests[u].id;
      transcripts[u].query = tests[u].text;
      transcripts[u].error = e.what();
    }
    env.gateway.ledger().add_victim_query(endpoint);
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) run_case(i);
  } else {
    for (long i = 0; i < n; ++i) run_case(i);
  }

  AsrCell cell;
  cell.endpoint = endpoint;
  cell.defense = env.pipeline.label();
  cell.cases = n;
  cell.victim_queries = static_cast<std::uint64_t>(n);
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& t = transcripts[i];
    CaseVerdict v;
    v.instruction_id = tests[i].id;
    v.endpoint = endpoint;
    v.error = t.error;
    v.success = !t.error && detect_success(t, env.scenario);
    v.refusal_quote = v.success && is_refusal_quote(t, env.scenario);
    cell.successes += v.success ? 1 : 0;
    cell.refusal_quotes += v.refusal_quote ? 1 : 0;
    cell.errors += t.error ? 1 : 0;
    cell.verdicts.push_back(std::move(v));
  }
  cell.transcripts = std::move(transcripts);
  return cell;
}

std::optional<double> stealth_similarity(Gateway& gateway, const std::string& embed_endpoint,
                                         const ToolResponse& benign, const Payload& payload) {
  try {
    auto a = gateway.embed(embed_endpoint, canonical_serialize(benign));
    auto b = gateway.embed(embed_endpoint, canonical_serialize(merge_payload(benign, payload)));
    return cosine_similarity(a, b);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// Reports

Report report_from_trace(const std::vector<std::string>& lines) {
  Report r;
  r.partial = true;
  std::string tool, defense, attacker;
  std::optional<Json> best;
  Json ledger = Json::object();
  std::optional<double> similarity;
  // node id -> episodes, kept for the eventual best node only
  std::map<std::int64_t, Json> episodes;

  for (const auto& line : lines) {
    if (trim(line).empty()) continue;
    Json ev = Json::parse(line, nullptr, false);
    if (ev.is_discarded() || !ev.is_object()) throw ProtocolError("malformed trace line");
    const std::string kind = ev.value("event", std::string());
    try {
      if (kind == "config") {
        r.config_hash = ev.value("config_hash", std::string());
        const Json& cfg = ev["config"];
        if (cfg.contains("scenario")) {
          tool = cfg["scenario"].value("tool_under_attack", std::string());
        }
        defense = ev["search"].value("defense_id", std::string("none"));
        attacker = ev["search"].value("attacker_endpoint", std::string());
      } else if (kind == "iteration") {
        if (ev.contains("aborted")) continue;
        best = ev["best"];
        ledger = ev["ledger"];
        r.curve.push_back(ScoreValue::from_json(ev["best"]["score"]));
        for (const auto& c : ev["children"]) {
          if (c.contains("episodes")) episodes[c["id"].get<std::int64_t>()] = c["episodes"];
        }
      } else if (kind == "end") {
        best = ev["best"];
        ledger = ev["ledger"];
        r.termination = ev.value("reason", std::string());
        r.partial = *r.termination == "Aborted";
      } else if (kind == "stealth") {
        if (!ev["similarity"].is_null()) similarity = ev["similarity"].get<double>();
      }
    } catch (const Json::exception& e) {
      throw ProtocolError("malformed " + kind + " event: " + e.what());
    }
  }
  if (r.config_hash.empty()) throw ProtocolError("trace has no config event");
  r.cell = tool + "-" + defense;

  ReportRow base;
  base.tool = tool;
  base.defense = defense;
  base.similarity = similarity;
  base.victim_queries = ledger.value("total_victim_queries", std::uint64_t{0});
  if (ledger.contains("endpoints") && ledger["endpoints"].contains(attacker)) {
    base.attacker_calls = ledger["endpoints"][attacker].value("chat_calls", std::uint64_t{0});
  }
  if (best) base.best_score = ScoreValue::from_json((*best)["score"]);

  const Json* eps = nullptr;
  if (best && !(*best)["id"].is_null()) {
    auto it = episodes.find((*best)["id"].get<std::int64_t>());
    if (it != episodes.end()) eps = &it->second;
  }
  if (eps) {
    // One row per victim endpoint the best payload was scored on.
    std::map<std::string, ReportRow> by_endpoint;
    for (const auto& e : *eps) {
      const std::string ep = e.value("endpoint", std::string());
      auto [it, fresh] = by_endpoint.try_emplace(ep, base);
      it->second.endpoint = ep;
      it->second.cases += 1;
      it->second.successes += e.value("success", false) ? 1 : 0;
      it->second.refusal_quotes += e.value("refusal_quote", false) ? 1 : 0;
    }
    for (auto& [ep, row] : by_endpoint) r.rows.push_back(row);
  } else {
    base.endpoint = "all";
    if (base.best_score) {
      base.successes = base.best_score->successes();
      base.cases = base.best_score->trials();
    }
    r.rows.push_back(base);
  }
  return r;
}

std::string report_csv(const Report& r) {
  std::string out =
      "config_hash,tool,defense,endpoint,successes,cases,asr,victim_queries,"
      "attacker_calls,similarity,best_score,refusal_quotes,partial\n";
  for (const auto& row : r.rows) {
    std::vector<std::string> f = {
        r.config_hash, row.tool, row.defense, row.endpoint,
        std::to_string(row.successes), std::to_string(row.cases),
        row.cases > 0 ? fixed(static_cast<double>(row.successes) / row.cases, 4) : "",
        std::to_string(row.victim_queries), std::to_string(row.attacker_calls),
        row.similarity ? fixed(*row.similarity, 6) : "",
        row.best_score ? row.best_score->to_string() : "",
        std::to_string(row.refusal_quotes), r.partial ? "true" : "false"};
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += ',';
      out += csv_field(f[i]);
    }
    out += '\n';
  }
  return out;
}

std::string curve_csv(const Report& r) {
  std::string out = "iteration,best_successes,best_trials,best_value\n";
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    const auto& s = r.curve[i];
    out += std::to_string(i + 1) + "," + std::to_string(s.successes()) + "," +
           std::to_string(s.trials()) + "," + fixed(s.value(), 4) + "\n";
  }
  return out;
}

Json report_json(const Report& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{
        {"tool", row.tool},
        {"defense", row.defense},
        {"endpoint", row.endpoint},
        {"successes", row.successes},
        {"cases", row.cases},
        {"victim_queries", row.victim_queries},
        {"attacker_calls", row.attacker_calls},
        {"similarity", row.similarity ? Json(*row.similarity) : Json(nullptr)},
        {"best_score", row.best_score ? row.best_score->to_json() : Json(nullptr)},
        {"refusal_quotes", row.refusal_quotes}});
  }
  Json curve = Json::array();
  for (const auto& s : r.curve) curve.push_back(s.to_json());
  return Json{{"config_hash", r.config_hash},
              {"cell", r.cell},
              {"partial", r.partial},
              {"termination", r.termination ? Json(*r.termination) : Json(nullptr)},
              {"rows", rows},
              {"curve", curve}};
}

std::vector<std::string> emit_report(const Report& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = dir + "/" + r.config_hash + "." + r.cell;
  std::vector<std::string> written = {stem + ".csv", stem + ".json"};
  write_file(written[0], report_csv(r));
  write_file(written[1], report_json(r).dump(2) + "\n");
  if (!r.curve.empty()) {
    written.push_back(stem + ".curve.csv");
    write_file(written.back(), curve_csv(r));
  }
  return written;
}

}  // namespace tip
