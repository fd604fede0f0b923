// Chat-completion wire client.
//
// Request  POST {base_url}/chat/completions
//   {"model": str, "messages": [{"role": str, "content": str}, ...],
//    "temperature": num, "seed": int, "max_tokens": int}
// Response {"choices": [{"message": {"role": "assistant", "content": str}}]}
//
// Request  POST {base_url}/embeddings   {"model": str, "input": str}
// Response {"data": [{"embedding": [num, ...]}]}
//
// Request  POST {base_url}/completions
//   {"model": str, "prompt": context+text, "max_tokens": 0, "echo": true,
//    "logprobs": 0}
// Response {"choices": [{"logprobs": {"token_logprobs": [num|null, ...],
//                                     "text_offset": [int, ...]}}]}
//
// Authorization: Bearer $<credentials_ref>. 429 and 5xx are retried.
#include <cmath>
#include <cstdlib>

#include "backends.hpp"
#include "httplib.h"
#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

namespace {

class HttpBackend : public ModelBackend {
 public:
  explicit HttpBackend(ModelEndpoint endpoint)
      : endpoint_(std::move(endpoint)), url_(parse_http_url(endpoint_.base_url)) {}

  std::string chat(const std::vector<ChatMessage>& messages,
                   const Sampling& sampling) override {
    Json msgs = Json::array();
    for (const auto& m : messages) {
      msgs.push_back(Json{{"role", to_string(m.role)}, {"content", m.content}});
    }
    Json body{{"model", endpoint_.model_name},
              {"messages", msgs},
              {"temperature", sampling.temperature},
              {"seed", sampling.seed},
              {"max_tokens", sampling.max_tokens}};
    Json res = post("/chat/completions", body);
    try {
      const Json& content = res.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw ProtocolError("content is not a string");
      return content.get<std::string>();
    } catch (const Json::exception& e) {
      throw ProtocolError("malformed chat response from " + endpoint_.id +
                          ": " + e.what());
    }
  }

  std::vector<double> embed(const std::string& text) override {
    Json res = post("/embeddings",
                    Json{{"model", endpoint_.model_name}, {"input", text}});
    try {
      return res.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const Json::exception& e) {
      throw ProtocolError("malformed embedding response from " +
                          endpoint_.id + ": " + e.what());
    }
  }

  double perplexity(const std::string& text,
                    const std::string& context) override {
    Json res = post("/completions", Json{{"model", endpoint_.model_name},
                                         {"prompt", context + text},
                                         {"max_tokens", 0},
                                         {"echo", true},
                                         {"logprobs", 0}});
    const Json* lp = nullptr;
    try {
      lp = &res.at("choices").at(0).at("logprobs");
    } catch (const Json::exception&) {
      throw UnsupportedCapability("endpoint " + endpoint_.id +
                                  " returned no log-probabilities");
    }
    if (!lp->is_object() || !lp->contains("token_logprobs") ||
        !lp->contains("text_offset")) {
      throw UnsupportedCapability("endpoint " + endpoint_.id +
                                  " returned no log-probabilities");
    }
    const auto& logprobs = lp->at("token_logprobs");
    const auto& offsets = lp->at("text_offset");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < logprobs.size() && i < offsets.size(); ++i) {
      if (logprobs[i].is_null()) continue;
      if (offsets[i].get<std::size_t>() < context.size()) continue;
      sum += logprobs[i].get<double>();
      ++n;
    }
    if (n == 0) throw ProtocolError("no scored tokens in completion echo");
    return std::exp(-sum / static_cast<double>(n));
  }

 private:
  Json post(const std::string& path, const Json& body) {
    net::note_attempt(endpoint_.base_url);
    httplib::Client cli(url_.host_port);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(120);
    httplib::Headers headers;
    if (const char* key = std::getenv(endpoint_.credentials_ref.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = cli.Post(url_.path_prefix + path, headers, body.dump(),
                        "application/json");
    if (!res) {
      throw TransientError("transport error: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransientError("HTTP " + std::to_string(res->status));
    }
    if (res->status >= 400) {
      throw EndpointError("endpoint " + endpoint_.id + " rejected request: HTTP " +
                          std::to_string(res->status));
    }
    Json j = Json::parse(res->body, nullptr, false);
    if (j.is_discarded()) {
      throw ProtocolError("endpoint " + endpoint_.id + " returned invalid JSON");
    }
    return j;
  }

  ModelEndpoint endpoint_;
  ParsedUrl url_;
};

}  // namespace

std::shared_ptr<ModelBackend> make_http_backend(const ModelEndpoint& endpoint) {
  return std::make_shared<HttpBackend>(endpoint);
}

}  // namespace tip
