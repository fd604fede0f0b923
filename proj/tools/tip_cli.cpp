#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "tip/config.hpp"
#include "tip/error.hpp"
#include "tip/mcp.hpp"
#include "tip/metrics.hpp"
#include "tip/search.hpp"
#include "tip/util.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kUnauthorized = 3 };

void log(const std::string& msg) { std::cerr << "[tip] " << msg << "\n"; }

struct Gate {
  bool authorized = false;
  std::string operator_id;
};

// Real endpoints need explicit authorization and every credential variable
// present before anything is sent.
int preflight(const tip::RunConfig& cfg, const Gate& gate) {
  if (!cfg.uses_real_endpoints()) return kOk;
  if (!gate.authorized || tip::trim(gate.operator_id).empty()) {
    log("config targets real model endpoints; rerun with --i-am-authorized and "
        "--operator <identity> if you are permitted to test them");
    return kUnauthorized;
  }
  auto missing = cfg.missing_credentials();
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    log("missing credentials, set:" + list);
    return kConfig;
  }
  log("operator " + gate.operator_id + " authorized a run against real endpoints");
  return kOk;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

tip::ToolResponse benign_sample(const tip::RunSetup& setup) {
  const auto& tool = setup.target_tool();
  tip::Json args = tool.sample_args.empty() ? tip::Json::object() : tool.sample_args.front();
  return setup.server().benign_call(tool.name, args);
}

int cmd_optimize(const std::string& config, const std::string& out_root, bool serial,
                 int threads, const Gate& gate) {
  tip::RunConfig cfg = tip::load_run_config(config);
  if (serial) cfg.search.parallel = false;
  if (threads > 0) cfg.search.threads = threads;
  if (int rc = preflight(cfg, gate); rc != kOk) return rc;

  // Mock-only runs must never open a connection.
  std::unique_ptr<tip::net::NetworkGuard> guard;
  if (!cfg.uses_real_endpoints()) guard = std::make_unique<tip::net::NetworkGuard>();

  tip::RunSetup setup(cfg);
  log("config " + setup.hash() + ", scenario " + setup.scenario().name + ", defense " +
      setup.pipeline().label());
  tip::RunResult result = setup.optimize();

  if (!cfg.embedding_endpoint.empty()) {
    auto sim = tip::stealth_similarity(setup.gateway(), cfg.embedding_endpoint,
                                       benign_sample(setup), result.best_payload);
    result.trace.add(tip::Json{{"event", "stealth"},
                               {"endpoint", cfg.embedding_endpoint},
                               {"similarity", sim ? tip::Json(*sim) : tip::Json(nullptr)}});
  }

  const std::string dir = out_root + "/" + setup.hash();
  fs::create_directories(dir);
  tip::write_file(dir + "/config.json", setup.snapshot().dump(2) + "\n");
  tip::write_file(dir + "/trace.jsonl", result.trace.jsonl());
  tip::Json best{{"config_hash", setup.hash()},
                 {"score", result.best_score.to_json()},
                 {"node", result.best_id ? tip::Json(*result.best_id) : tip::Json(nullptr)},
                 {"termination", tip::to_string(result.reason)},
                 {"payload", result.best_payload.to_json()}};
  tip::write_file(dir + "/best_payload.json", best.dump(2) + "\n");
  tip::Report report = tip::report_from_trace(result.trace.lines());
  tip::emit_report(report, dir + "/report");

  std::cout << "run " << setup.hash() << ": " << tip::to_string(result.reason) << " after "
            << result.iterations << " iterations, best " << result.best_score.to_string()
            << ", victim queries " << setup.gateway().ledger().total_victim_queries()
            << "\n";
  if (result.error) std::cout << "aborted: " << *result.error << "\n";
  std::cout << "artifacts in " << dir << "\n";
  if (guard && guard->blocked() > 0) {
    log("blocked " + std::to_string(guard->blocked()) + " network attempts");
    return kFailure;
  }
  return result.reason == tip::TerminationReason::Aborted ? kFailure : kOk;
}

int cmd_evaluate(const std::string& config, const std::string& payload_path,
                 const std::string& out_root, int cases, const Gate& gate) {
  tip::RunConfig cfg = tip::load_run_config(config);
  if (cases > 0) cfg.evaluation.cases = cases;
  if (int rc = preflight(cfg, gate); rc != kOk) return rc;
  std::unique_ptr<tip::net::NetworkGuard> guard;
  if (!cfg.uses_real_endpoints()) guard = std::make_unique<tip::net::NetworkGuard>();

  tip::Json pj = tip::Json::parse(tip::read_file(payload_path), nullptr, false);
  if (pj.is_discarded()) throw tip::ConfigError("payload file is not JSON: " + payload_path);
  // Either a best_payload.json artifact or a bare payload object.
  tip::Payload payload = tip::Payload::from_json(
      pj.contains("payload") && pj["payload"].is_object() ? pj["payload"] : pj);

  tip::RunSetup setup(cfg);
  const auto& all = setup.scenario().test_instructions;
  const auto n = std::min<std::size_t>(all.size(), static_cast<std::size_t>(cfg.evaluation.cases));
  if (n == 0) throw tip::ConfigError("scenario has no test instructions");
  std::vector<tip::Instruction> tests(all.begin(), all.begin() + static_cast<long>(n));

  tip::Json snap = setup.snapshot();
  snap["payload"] = payload.to_json();
  tip::Report report;
  report.config_hash = tip::config_hash(snap);
  report.cell = setup.scenario().tool_under_attack + "-transfer";

  std::optional<double> sim;
  if (!cfg.embedding_endpoint.empty()) {
    sim = tip::stealth_similarity(setup.gateway(), cfg.embedding_endpoint,
                                  benign_sample(setup), payload);
  }
  tip::Json cases_json = tip::Json::array();
  for (const auto& d : cfg.evaluation.defenses) {
    tip::DefensePipeline pipeline = setup.make_pipeline(d);
    tip::EvalEnv env{setup.gateway(), setup.scenario(), setup.server(), pipeline,
                     setup.agent_options()};
    for (const auto& target : cfg.evaluation.targets) {
      tip::AsrCell cell = tip::evaluate_asr(env, payload, tests, target, cfg.evaluation.seed);
      tip::ReportRow row;
      row.tool = setup.scenario().tool_under_attack;
      row.defense = d.id;
      row.endpoint = target;
      row.successes = cell.successes;
      row.cases = cell.cases;
      row.victim_queries = cell.victim_queries;
      row.similarity = sim;
      row.refusal_quotes = cell.refusal_quotes;
      report.rows.push_back(row);
      for (const auto& v : cell.verdicts) {
        tip::Json vj = v.to_json();
        vj["defense"] = d.id;
        cases_json.push_back(vj);
      }
      std::cout << target << " / " << d.id << ": " << cell.successes << "/" << cell.cases
                << (cell.errors ? " (" + std::to_string(cell.errors) + " errors)" : "")
                << "\n";
    }
  }
  const std::string dir = out_root + "/" + report.config_hash;
  fs::create_directories(dir);
  tip::write_file(dir + "/config.json", snap.dump(2) + "\n");
  tip::write_file(dir + "/cases.json", cases_json.dump(2) + "\n");
  tip::emit_report(report, dir + "/report");
  std::cout << "artifacts in " << dir << "\n";
  return kOk;
}

int cmd_serve(const std::string& tools_dir, const std::string& mode,
              const std::string& payload_path, const std::string& target_tool,
              const std::string& transport, const std::string& host, int port) {
  tip::ToolServer server(tip::load_tool_definitions(tools_dir));
  if (mode == "compromised") {
    if (payload_path.empty() || target_tool.empty()) {
      throw tip::ConfigError("compromised mode needs --payload and --target-tool");
    }
    tip::find_tool(server.tools(), target_tool);
    tip::Json pj = tip::Json::parse(tip::read_file(payload_path), nullptr, false);
    if (pj.is_discarded()) throw tip::ConfigError("payload file is not JSON");
    server.set_mode(tip::ServerMode::compromise(tip::Payload::from_json(pj), target_tool));
  } else if (mode != "benign") {
    throw tip::ConfigError("--mode must be benign or compromised");
  }
  if (transport == "stdio") {
    tip::serve_stdio(server, std::cin, std::cout);
    return kOk;
  }
  tip::HttpMcpServer http(server);
  log("serving MCP on http://" + host + ":" + std::to_string(port) + "/mcp (" + mode + ")");
  return http.listen(host, port) ? kOk : kFailure;
}

int cmd_report(const std::string& trace_path, const std::string& out_dir) {
  tip::Report r = tip::report_from_trace(split_lines(tip::read_file(trace_path)));
  std::string dir = out_dir.empty() ? fs::path(trace_path).parent_path().string() + "/report"
                                    : out_dir;
  for (const auto& p : tip::emit_report(r, dir)) std::cout << p << "\n";
  if (r.partial) log("trace is partial; report marked accordingly");
  return kOk;
}

int cmd_check(const std::string& config) {
  std::string path = config;
  if (!fs::exists(path)) path = tip::data_root() + "/configs/" + config + ".json";
  tip::Json j = tip::Json::parse(tip::read_file(path), nullptr, false);
  if (j.is_discarded()) {
    std::cout << "<root>: not valid JSON\n";
    return kConfig;
  }
  auto diags = tip::config_diagnostics(j);
  for (const auto& d : diags) std::cout << d << "\n";
  if (diags.empty()) std::cout << "ok\n";
  return diags.empty() ? kOk : kConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-based injection payload search over MCP tool responses"};
  app.require_subcommand(1);
  Gate gate;
  std::string config, out_root = "runs", payload, trace, out_dir;
  bool serial = false;
  int threads = 0, cases = 0;

  auto add_gate = [&](CLI::App* c) {
    c->add_flag("--i-am-authorized", gate.authorized,
                "Confirm you may test the configured real endpoints");
    c->add_option("--operator", gate.operator_id, "Identity of the person running the test");
  };

  auto* opt = app.add_subcommand("optimize", "Search for a payload");
  opt->add_option("--config", config, "Config path or bundled name (e.g. demo-mock)")
      ->required();
  opt->add_option("--out", out_root, "Runs directory");
  opt->add_flag("--serial", serial, "Use the serial evaluator");
  opt->add_option("--threads", threads, "OpenMP threads");
  add_gate(opt);

  auto* ev = app.add_subcommand("evaluate", "Held-out ASR of a payload");
  ev->add_option("--config", config)->required();
  ev->add_option("--payload", payload, "best_payload.json")->required();
  ev->add_option("--out", out_root);
  ev->add_option("--cases", cases, "Number of test instructions");
  add_gate(ev);

  std::string tools_dir, mode = "benign", target_tool, transport = "stdio", host = "127.0.0.1";
  int port = 8765;
  auto* srv = app.add_subcommand("serve-mcp", "Run the MCP tool server");
  srv->add_option("--tools", tools_dir)->required();
  srv->add_option("--mode", mode)->check(CLI::IsMember({"benign", "compromised"}));
  srv->add_option("--payload", payload);
  srv->add_option("--target-tool", target_tool);
  srv->add_option("--transport", transport)->check(CLI::IsMember({"stdio", "http"}));
  srv->add_option("--host", host);
  srv->add_option("--port", port);

  auto* rep = app.add_subcommand("report", "Rebuild a report from a trace");
  rep->add_option("--trace", trace)->required();
  rep->add_option("--out", out_dir);

  auto* chk = app.add_subcommand("check-config", "Print config diagnostics");
  chk->add_option("--config", config)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*opt) return cmd_optimize(config, out_root, serial, threads, gate);
    if (*ev) return cmd_evaluate(config, payload, out_root, cases, gate);
    if (*srv) return cmd_serve(tools_dir, mode, payload, target_tool, transport, host, port);
    if (*rep) return cmd_report(trace, out_dir);
    if (*chk) return cmd_check(config);
  } catch (const tip::ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kConfig;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kFailure;
  }
  return kFailure;
}
