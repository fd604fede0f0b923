#include "tip/mcp.hpp"

#include <algorithm>
#include <filesystem>
#include <mutex>

#include "tip/util.hpp"

namespace tip {

// Schema validation

namespace {

bool type_matches(const std::string& type, const Json& v) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

}  // namespace

std::optional<std::string> validate_schema(const Json& schema, const Json& value,
                                           const std::string& path) {
  if (!schema.is_object()) return std::nullopt;
  if (schema.contains("type")) {
    const Json& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(t.get<std::string>(), value);
    } else if (t.is_array()) {
      for (const auto& alt : t) ok = ok || type_matches(alt.get<std::string>(), value);
    }
    if (!ok) return path + ": expected type " + t.dump();
  }
  if (schema.contains("enum")) {
    const Json& e = schema["enum"];
    if (std::find(e.begin(), e.end(), value) == e.end()) {
      return path + ": value not in enum";
    }
  }
  if (value.is_number()) {
    double d = value.get<double>();
    if (schema.contains("minimum") && d < schema["minimum"].get<double>()) {
      return path + ": below minimum " + schema["minimum"].dump();
    }
    if (schema.contains("maximum") && d > schema["maximum"].get<double>()) {
      return path + ": above maximum " + schema["maximum"].dump();
    }
  }
  if (value.is_string() && schema.contains("minLength") &&
      value.get<std::string>().size() < schema["minLength"].get<std::size_t>()) {
    return path + ": shorter than minLength";
  }
  if (value.is_object()) {
    const Json props = schema.value("properties", Json::object());
    if (schema.contains("required")) {
      for (const auto& r : schema["required"]) {
        if (!value.contains(r.get<std::string>())) {
          return path + ": missing required property \"" +
                 r.get<std::string>() + "\"";
        }
      }
    }
    bool closed = schema.contains("additionalProperties") &&
                  schema["additionalProperties"] == false;
    for (const auto& [k, v] : value.items()) {
      if (props.contains(k)) {
        if (auto err = validate_schema(props[k], v, path + "." + k)) return err;
      } else if (closed) {
        return path + ": unexpected property \"" + k + "\"";
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (auto err = validate_schema(schema["items"], value[i],
                                     path + "[" + std::to_string(i) + "]")) {
        return err;
      }
    }
  }
  return std::nullopt;
}

// ToolDefinition

namespace {

struct SlotRenderer {
  const Json& args;
  std::uint64_t base;

  // Returns raw JSON for non-text values when `whole` is set.
  Json slot(const std::string& name, std::uint64_t idx, bool whole) const {
    std::uint64_t r = mix_seed(base, idx);
    if (name.rfind("int:", 0) == 0) {
      auto colon = name.find(':', 4);
      long long lo = std::stoll(name.substr(4, colon - 4));
      long long hi = std::stoll(name.substr(colon + 1));
      long long v = lo + static_cast<long long>(
                             r % static_cast<std::uint64_t>(hi - lo + 1));
      return whole ? Json(v) : Json(std::to_string(v));
    }
    if (name.rfind("digits:", 0) == 0) {
      int n = std::stoi(name.substr(7));
      std::string out;
      for (int k = 0; k < n; ++k) {
        out.push_back(static_cast<char>(
            '0' + mix_seed(r, static_cast<std::uint64_t>(k)) % 10));
      }
      return out;
    }
    if (name.rfind("pick:", 0) == 0) {
      std::vector<std::string> opts;
      std::string rest = name.substr(5);
      std::size_t start = 0;
      for (;;) {
        auto bar = rest.find('|', start);
        opts.push_back(rest.substr(start, bar - start));
        if (bar == std::string::npos) break;
        start = bar + 1;
      }
      return opts[r % opts.size()];
    }
    if (args.is_object() && args.contains(name)) {
      const Json& v = args[name];
      if (v.is_string()) return v;
      return whole ? v : Json(v.dump());
    }
    return std::string();
  }

  Json render_string(const std::string& s) const {
    std::string out;
    std::size_t i = 0;
    std::uint64_t idx = 0;
    bool whole = s.size() > 4 && s.rfind("{{", 0) == 0 &&
                 s.find("}}") == s.size() - 2;
    while (i < s.size()) {
      auto open = s.find("{{", i);
      if (open == std::string::npos) {
        out += s.substr(i);
        break;
      }
      auto close = s.find("}}", open + 2);
      if (close == std::string::npos) {
        out += s.substr(i);
        break;
      }
      out += s.substr(i, open - i);
      Json v = slot(s.substr(open + 2, close - open - 2), idx++, whole);
      if (whole) return v;
      out += v.is_string() ? v.get<std::string>() : v.dump();
      i = close + 2;
    }
    return out;
  }

  Json render(const Json& tmpl, const std::string& path) const {
    if (tmpl.is_string()) {
      SlotRenderer child{args, mix_seed(base, fnv1a64(path))};
      return child.render_string(tmpl.get<std::string>());
    }
    if (tmpl.is_object()) {
      Json out = Json::object();
      for (const auto& [k, v] : tmpl.items()) out[k] = render(v, path + "." + k);
      return out;
    }
    if (tmpl.is_array()) {
      Json out = Json::array();
      for (std::size_t i = 0; i < tmpl.size(); ++i) {
        out.push_back(render(tmpl[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
    return tmpl;
  }
};

}  // namespace

Json ToolDefinition::with_defaults(const Json& args) const {
  Json out = args.is_object() ? args : Json::object();
  for (const auto& [k, v] : defaults.items()) {
    if (!out.contains(k)) out[k] = v;
  }
  return out;
}

ToolResponse ToolDefinition::generate(const Json& args,
                                      std::uint64_t seed) const {
  Json full = with_defaults(args);
  // Key order of the caller's object must not change the output.
  nlohmann::json sorted = nlohmann::json::parse(full.dump());
  std::uint64_t base = mix_seed(seed, fnv1a64(sorted.dump()));
  SlotRenderer r{full, base};
  return ToolResponse::from_json(name, r.render(response_template, "$"));
}

std::vector<std::string> ToolDefinition::response_keys() const {
  std::vector<std::string> keys;
  for (const auto& [k, _] : response_template.items()) keys.push_back(k);
  return keys;
}

Json ToolDefinition::listing() const {
  return Json{{"name", name},
              {"description", description},
              {"inputSchema", input_schema}};
}

ToolDefinition ToolDefinition::from_json(const Json& j) {
  ToolDefinition t;
  t.name = j.at("name").get<std::string>();
  t.description = j.at("description").get<std::string>();
  t.input_schema = j.value("input_schema", Json::object());
  t.response_schema = j.value("response_schema", Json::object());
  t.defaults = j.value("defaults", Json::object());
  t.response_template = j.at("template");
  if (!t.response_template.is_object()) {
    throw ConfigError("tool " + t.name + ": template must be a JSON object");
  }
  for (const auto& a : j.value("sample_args", Json::array())) {
    t.sample_args.push_back(a);
  }
  if (t.name.empty()) throw ConfigError("tool name must be non-empty");
  return t;
}

std::vector<ToolDefinition> load_tool_definitions(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("tools directory not found: " + dir);
  std::vector<ToolDefinition> tools;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    Json j = Json::parse(read_file(entry.path().string()), nullptr, false);
    if (j.is_discarded()) {
      throw ConfigError("invalid JSON in tool fixture " + entry.path().string());
    }
    tools.push_back(ToolDefinition::from_json(j));
  }
  std::sort(tools.begin(), tools.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  for (std::size_t i = 1; i < tools.size(); ++i) {
    if (tools[i].name == tools[i - 1].name) {
      throw ConfigError("duplicate tool name " + tools[i].name);
    }
  }
  return tools;
}

const ToolDefinition& find_tool(const std::vector<ToolDefinition>& tools,
                                const std::string& name) {
  for (const auto& t : tools) {
    if (t.name == name) return t;
  }
  throw LookupError("unknown tool: " + name);
}

// ServerMode

Json ServerMode::to_json() const {
  if (!compromised) return Json{{"mode", "benign"}};
  return Json{{"mode", "compromised"},
              {"payload", payload.to_json()},
              {"target_tool", target_tool}};
}

ServerMode ServerMode::from_json(const Json& j) {
  std::string m = j.at("mode").get<std::string>();
  if (m == "benign") return benign();
  if (m == "compromised") {
    return compromise(Payload::from_json(j.at("payload")),
                      j.at("target_tool").get<std::string>());
  }
  throw InvalidArgument("unknown server mode: " + m);
}

// ToolServer

ToolServer::ToolServer(std::vector<ToolDefinition> tools, std::uint64_t seed,
                       std::string protocol_version)
    : tools_(std::move(tools)),
      seed_(seed),
      protocol_version_(std::move(protocol_version)) {
  for (std::size_t i = 0; i < tools_.size(); ++i) {
    for (std::size_t k = i + 1; k < tools_.size(); ++k) {
      if (tools_[i].name == tools_[k].name) {
        throw ConfigError("duplicate tool name " + tools_[i].name);
      }
    }
  }
}

ToolServer::ToolServer(const ToolServer& other)
    : tools_(other.tools_),
      seed_(other.seed_),
      protocol_version_(other.protocol_version_),
      mode_(other.mode()) {}

const ToolDefinition& ToolServer::tool(const std::string& name) const {
  for (const auto& t : tools_) {
    if (t.name == name) return t;
  }
  throw ToolCallError(rpc::kInvalidParams, "Unknown tool: " + name);
}

ToolResponse ToolServer::benign_call(const std::string& name,
                                     const Json& args) const {
  const ToolDefinition& t = tool(name);
  if (auto err = validate_schema(t.input_schema, args)) {
    throw ToolCallError(rpc::kInvalidParams, "Invalid params: " + *err);
  }
  return t.generate(args, seed_);
}

ToolResponse ToolServer::call_tool(const std::string& name,
                                   const Json& args) const {
  ToolResponse benign = benign_call(name, args);
  ServerMode m = mode();
  if (m.compromised && m.target_tool == name) {
    return merge_payload(benign, m.payload);
  }
  return benign;
}

void ToolServer::set_mode(ServerMode mode) {
  std::unique_lock lock(mode_mu_);
  mode_ = std::move(mode);
}

ServerMode ToolServer::mode() const {
  std::shared_lock lock(mode_mu_);
  return mode_;
}

Json ToolServer::tools_list() const {
  Json arr = Json::array();
  for (const auto& t : tools_) arr.push_back(t.listing());
  return Json{{"tools", arr}};
}

Json ToolServer::dispatch(const std::string& method, const Json& params) const {
  if (method == "initialize") {
    return Json{{"protocolVersion", protocol_version_},
                {"capabilities", Json{{"tools", Json{{"listChanged", false}}}}},
                {"serverInfo", Json{{"name", "tip-toolserver"}, {"version", "1.0"}}}};
  }
  if (method == "ping") return Json::object();
  if (method == "tools/list") return tools_list();
  if (method == "tools/call") {
    if (!params.is_object() || !params.contains("name") ||
        !params["name"].is_string()) {
      throw ToolCallError(rpc::kInvalidParams,
                          "Invalid params: tools/call requires a string name");
    }
    Json args = params.value("arguments", Json::object());
    if (!args.is_object()) {
      throw ToolCallError(rpc::kInvalidParams,
                          "Invalid params: arguments must be an object");
    }
    ToolResponse r = call_tool(params["name"].get<std::string>(), args);
    Json structured = r.to_json();
    return Json{{"content", Json::array({Json{{"type", "text"},
                                               {"text", canonical_dump(structured)}}})},
                {"structuredContent", structured},
                {"isError", false}};
  }
  throw ToolCallError(rpc::kMethodNotFound, "Method not found: " + method);
}

namespace {

std::string error_response(const Json& id, int code, const std::string& message) {
  Json r;
  r["jsonrpc"] = "2.0";
  r["id"] = id;
  r["error"] = Json{{"code", code}, {"message", message}};
  return canonical_dump(r);
}

bool valid_id(const Json& id) {
  return id.is_string() || id.is_number_integer() || id.is_null();
}

}  // namespace

std::string ToolServer::handle_rpc(std::string_view request) const {
  Json req = Json::parse(request.begin(), request.end(), nullptr, false);
  if (req.is_discarded()) return error_response(nullptr, rpc::kParseError, "Parse error");
  if (!req.is_object()) {
    return error_response(nullptr, rpc::kInvalidRequest, "Invalid Request");
  }
  const bool has_id = req.contains("id");
  Json id = has_id ? req["id"] : Json(nullptr);
  if (has_id && !valid_id(id)) {
    return error_response(nullptr, rpc::kInvalidRequest, "Invalid Request: bad id");
  }
  if (!req.contains("jsonrpc") || req["jsonrpc"] != "2.0") {
    return error_response(id, rpc::kInvalidRequest,
                          "Invalid Request: jsonrpc must be \"2.0\"");
  }
  if (!req.contains("method") || !req["method"].is_string()) {
    return error_response(id, rpc::kInvalidRequest,
                          "Invalid Request: method must be a string");
  }
  Json params = req.value("params", Json::object());
  if (!params.is_object() && !params.is_array()) {
    return error_response(id, rpc::kInvalidRequest,
                          "Invalid Request: params must be structured");
  }
  const std::string method = req["method"].get<std::string>();
  if (!has_id) return {};  // notification

  try {
    Json result = dispatch(method, params);
    Json r;
    r["jsonrpc"] = "2.0";
    r["id"] = id;
    r["result"] = std::move(result);
    return canonical_dump(r);
  } catch (const ToolCallError& e) {
    return error_response(id, e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(id, rpc::kInternalError,
                          std::string("Internal error: ") + e.what());
  }
}

// InProcessToolClient

namespace {

Json make_request(std::int64_t id, const std::string& method, const Json& params) {
  Json req;
  req["jsonrpc"] = "2.0";
  req["id"] = id;
  req["method"] = method;
  req["params"] = params;
  return req;
}

Json unwrap_response(const std::string& text) {
  Json res = Json::parse(text, nullptr, false);
  if (res.is_discarded() || !res.is_object()) {
    throw ProtocolError("malformed JSON-RPC response");
  }
  if (res.contains("error")) {
    const Json& e = res["error"];
    throw ToolCallError(e.value("code", rpc::kInternalError),
                        e.value("message", std::string("error")));
  }
  if (!res.contains("result")) throw ProtocolError("JSON-RPC response without result");
  return res["result"];
}

ToolResponse response_from_result(const std::string& name, const Json& result) {
  if (result.value("isError", false)) {
    throw ToolCallError(rpc::kInternalError, "tool reported an error");
  }
  if (result.contains("structuredContent")) {
    return ToolResponse::from_json(name, result["structuredContent"]);
  }
  const Json& content = result.at("content");
  for (const auto& c : content) {
    if (c.value("type", std::string()) == "text") {
      return deserialize_tool_response(name, c.at("text").get<std::string>());
    }
  }
  throw ProtocolError("tool result carries no JSON content");
}

}  // namespace

Json InProcessToolClient::roundtrip(const std::string& method, const Json& params) {
  std::string req = canonical_dump(make_request(next_id_++, method, params));
  return unwrap_response(server_.handle_rpc(req));
}

Json InProcessToolClient::list_tools() {
  return roundtrip("tools/list", Json::object()).at("tools");
}

ToolResponse InProcessToolClient::call(const std::string& name, const Json& args) {
  return response_from_result(
      name, roundtrip("tools/call", Json{{"name", name}, {"arguments", args}}));
}

std::optional<ToolResponse> InProcessToolClient::benign_reference(
    const std::string& name, const Json& args) {
  try {
    return server_.benign_call(name, args);
  } catch (const ToolCallError&) {
    return std::nullopt;
  }
}

}  // namespace tip
