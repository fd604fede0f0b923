// stdio and HTTP transports for the tool server.
#include <istream>
#include <ostream>

#include "httplib.h"
#include "tip/mcp.hpp"
#include "tip/util.hpp"

namespace tip {

namespace {

Json unwrap(const std::string& text) {
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

}  // namespace

Json HttpToolClient::roundtrip(const std::string& method, const Json& params) {
  Json req;
  req["jsonrpc"] = "2.0";
  req["id"] = next_id_++;
  req["method"] = method;
  req["params"] = params;
  net::note_attempt(base_url_);
  ParsedUrl url = parse_http_url(base_url_);
  httplib::Client cli(url.host_port);
  cli.set_connection_timeout(10);
  auto res = cli.Post(url.path_prefix + "/mcp", canonical_dump(req),
                      "application/json");
  if (!res) {
    throw EndpointError("MCP transport error: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EndpointError("MCP server returned HTTP " + std::to_string(res->status));
  }
  return unwrap(res->body);
}

Json HttpToolClient::list_tools() {
  return roundtrip("tools/list", Json::object()).at("tools");
}

ToolResponse HttpToolClient::call(const std::string& name, const Json& args) {
  Json result = roundtrip("tools/call", Json{{"name", name}, {"arguments", args}});
  if (result.contains("structuredContent")) {
    return ToolResponse::from_json(name, result["structuredContent"]);
  }
  return deserialize_tool_response(
      name, result.at("content").at(0).at("text").get<std::string>());
}

void serve_stdio(const ToolServer& server, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::string reply = server.handle_rpc(line);
    if (reply.empty()) continue;
    out << reply << '\n';
    out.flush();
  }
}

struct HttpMcpServer::Impl {
  explicit Impl(ToolServer& s) : server(s) {}
  ToolServer& server;
  httplib::Server http;
};

HttpMcpServer::HttpMcpServer(ToolServer& server)
    : impl_(std::make_unique<Impl>(server)) {
  auto& http = impl_->http;
  ToolServer& srv = impl_->server;
  http.Post("/mcp", [&srv](const httplib::Request& req, httplib::Response& res) {
    std::string reply = srv.handle_rpc(req.body);
    if (reply.empty()) {
      res.status = 202;
      return;
    }
    res.set_content(reply, "application/json");
  });
  http.Get("/control/mode",
           [&srv](const httplib::Request&, httplib::Response& res) {
             res.set_content(canonical_dump(srv.mode().to_json()),
                             "application/json");
           });
  http.Post("/control/mode",
            [&srv](const httplib::Request& req, httplib::Response& res) {
              try {
                srv.set_mode(ServerMode::from_json(Json::parse(req.body)));
                res.set_content(R"({"ok":true})", "application/json");
              } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(canonical_dump(Json{{"ok", false},
                                                    {"error", e.what()}}),
                                "application/json");
              }
            });
}

HttpMcpServer::~HttpMcpServer() { stop(); }

bool HttpMcpServer::listen(const std::string& host, int port) {
  return impl_->http.listen(host, port);
}

int HttpMcpServer::bind_any_port(const std::string& host) {
  return impl_->http.bind_to_any_port(host);
}

void HttpMcpServer::listen_after_bind() { impl_->http.listen_after_bind(); }

void HttpMcpServer::stop() { impl_->http.stop(); }

}  // namespace tip
