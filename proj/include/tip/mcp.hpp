#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tip/error.hpp"
#include "tip/payload.hpp"

namespace tip {

// JSON-RPC 2.0 error codes.
namespace rpc {
inline constexpr int kParseError = -32700;
inline constexpr int kInvalidRequest = -32600;
inline constexpr int kMethodNotFound = -32601;
inline constexpr int kInvalidParams = -32602;
inline constexpr int kInternalError = -32603;
}  // namespace rpc

// Minimal JSON-schema subset: type, properties, required, enum, minimum,
// maximum, minLength, additionalProperties(false), items. Returns the first
// violation, or nullopt when `value` conforms.
std::optional<std::string> validate_schema(const Json& schema,
                                           const Json& value,
                                           const std::string& path = "$");

// A tool and its deterministic benign generator.
//
// Template strings may contain slots:
//   {{arg}}          call argument (raw JSON value when the slot is the whole
//                    string and the argument is not text)
//   {{int:lo:hi}}    integer in [lo, hi] (raw integer when whole string)
//   {{digits:n}}     n decimal digits
//   {{pick:a|b|c}}   one of the options
// Random slots draw from a generator seeded by (server seed, canonical
// arguments, field path, slot index), so a given call is reproducible.
struct ToolDefinition {
  std::string name;
  std::string description;
  Json input_schema = Json::object();
  Json response_schema = Json::object();
  Json defaults = Json::object();
  Json response_template = Json::object();
  std::vector<Json> sample_args;

  ToolResponse generate(const Json& args, std::uint64_t seed) const;
  // Arguments with defaults applied.
  Json with_defaults(const Json& args) const;
  // Keys the benign generator emits.
  std::vector<std::string> response_keys() const;
  // MCP tools/list entry.
  Json listing() const;

  static ToolDefinition from_json(const Json& j);
};

// Fixture files (*.json) of a directory, ordered by tool name.
std::vector<ToolDefinition> load_tool_definitions(const std::string& dir);
const ToolDefinition& find_tool(const std::vector<ToolDefinition>& tools,
                                const std::string& name);

// Failure of a tools/call: unknown tool or schema violation.
class ToolCallError : public Error {
 public:
  ToolCallError(int code, const std::string& what) : Error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct ServerMode {
  bool compromised = false;
  Payload payload;
  std::string target_tool;

  static ServerMode benign() { return {}; }
  static ServerMode compromise(Payload p, std::string target) {
    return {true, std::move(p), std::move(target)};
  }
  Json to_json() const;
  static ServerMode from_json(const Json& j);
};

inline constexpr const char* kDefaultProtocolVersion = "2025-06-18";

class ToolServer {
 public:
  explicit ToolServer(std::vector<ToolDefinition> tools,
                      std::uint64_t seed = 0,
                      std::string protocol_version = kDefaultProtocolVersion);
  ToolServer(const ToolServer& other);

  // One JSON-RPC message in, one out. Notifications yield "".
  std::string handle_rpc(std::string_view request) const;

  ToolResponse call_tool(const std::string& name, const Json& args) const;
  ToolResponse benign_call(const std::string& name, const Json& args) const;

  void set_mode(ServerMode mode);
  ServerMode mode() const;

  Json tools_list() const;
  const std::vector<ToolDefinition>& tools() const { return tools_; }

 private:
  Json dispatch(const std::string& method, const Json& params) const;
  const ToolDefinition& tool(const std::string& name) const;

  std::vector<ToolDefinition> tools_;
  std::uint64_t seed_;
  std::string protocol_version_;
  mutable std::shared_mutex mode_mu_;
  ServerMode mode_;
};

// Agent-side view of an MCP server.
class ToolClient {
 public:
  virtual ~ToolClient() = default;
  // tools/list entries.
  virtual Json list_tools() = 0;
  // tools/call; throws ToolCallError for JSON-RPC errors.
  virtual ToolResponse call(const std::string& name, const Json& args) = 0;
  // Benign output for the same call when the harness can compute it.
  virtual std::optional<ToolResponse> benign_reference(const std::string&,
                                                       const Json&) {
    return std::nullopt;
  }
};

// Talks to a ToolServer through its JSON-RPC byte interface.
class InProcessToolClient : public ToolClient {
 public:
  explicit InProcessToolClient(const ToolServer& server) : server_(server) {}

  Json list_tools() override;
  ToolResponse call(const std::string& name, const Json& args) override;
  std::optional<ToolResponse> benign_reference(const std::string& name,
                                               const Json& args) override;

 private:
  Json roundtrip(const std::string& method, const Json& params);

  const ToolServer& server_;
  std::int64_t next_id_ = 1;
};

// JSON-RPC over HTTP POST to <base_url>/mcp.
class HttpToolClient : public ToolClient {
 public:
  explicit HttpToolClient(std::string base_url) : base_url_(std::move(base_url)) {}

  Json list_tools() override;
  ToolResponse call(const std::string& name, const Json& args) override;

 private:
  Json roundtrip(const std::string& method, const Json& params);

  std::string base_url_;
  std::int64_t next_id_ = 1;
};

// Reads newline-delimited JSON-RPC requests until EOF, one response line per
// request.
void serve_stdio(const ToolServer& server, std::istream& in, std::ostream& out);

// POST /mcp            JSON-RPC request body -> response body
// GET  /control/mode   current ServerMode
// POST /control/mode   {"mode":"benign"} or
//                      {"mode":"compromised","payload":{..},"target_tool":".."}
// Blocks until the process is signalled or `stop` is called from elsewhere.
class HttpMcpServer {
 public:
  explicit HttpMcpServer(ToolServer& server);
  ~HttpMcpServer();

  // Returns false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  int bind_any_port(const std::string& host);
  void listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tip
