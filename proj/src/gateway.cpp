#include "tip/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <thread>

#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

std::string to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::Tool;
  throw InvalidArgument("unknown chat role: " + s);
}

bool ModelEndpoint::is_mock() const { return base_url.rfind("mock://", 0) == 0; }

std::string ModelEndpoint::mock_profile() const {
  return is_mock() ? base_url.substr(7) : std::string();
}

Json ModelEndpoint::to_json() const {
  return Json{{"id", id},
              {"base_url", base_url},
              {"model_name", model_name},
              {"kind", kind == EndpointKind::Chat ? "chat" : "embedding"},
              {"credentials_ref", credentials_ref},
              {"options", options},
              {"max_concurrency", max_concurrency}};
}

ModelEndpoint ModelEndpoint::from_json(const Json& j) {
  ModelEndpoint e;
  e.id = j.at("id").get<std::string>();
  e.base_url = j.at("base_url").get<std::string>();
  e.model_name = j.value("model_name", std::string());
  std::string kind = j.value("kind", std::string("chat"));
  if (kind == "chat") {
    e.kind = EndpointKind::Chat;
  } else if (kind == "embedding") {
    e.kind = EndpointKind::Embedding;
  } else {
    throw ConfigError("endpoint " + e.id + ": unknown kind \"" + kind + "\"");
  }
  e.credentials_ref =
      j.value("credentials_ref", default_credentials_var(e.id));
  if (j.contains("options")) e.options = j.at("options");
  e.max_concurrency = j.value("max_concurrency", 8);
  if (e.id.empty()) throw ConfigError("endpoint id must be non-empty");
  if (!is_well_formed_url(e.base_url)) {
    throw ConfigError("endpoint " + e.id + ": malformed base_url \"" +
                      e.base_url + "\"");
  }
  if (e.max_concurrency < 1) {
    throw ConfigError("endpoint " + e.id + ": max_concurrency must be >= 1");
  }
  return e;
}

std::string default_credentials_var(const std::string& endpoint_id) {
  std::string var = "TIP_API_KEY_";
  for (unsigned char c : endpoint_id) {
    var.push_back(std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_');
  }
  return var;
}

// ModelBackend defaults

std::string ModelBackend::chat(const std::vector<ChatMessage>&,
                               const Sampling&) {
  throw UnsupportedCapability("backend does not support chat");
}

std::vector<double> ModelBackend::embed(const std::string&) {
  throw UnsupportedCapability("backend does not support embeddings");
}

double ModelBackend::perplexity(const std::string&, const std::string&) {
  throw UnsupportedCapability("backend does not expose log-probabilities");
}

// QueryLedger

void QueryLedger::register_endpoint(const std::string& id) {
  if (!counters_.count(id)) counters_[id] = std::make_unique<Counters>();
}

QueryLedger::Counters& QueryLedger::at(const std::string& id) const {
  auto it = counters_.find(id);
  if (it == counters_.end()) {
    throw LookupError("ledger has no endpoint " + id);
  }
  return *it->second;
}

void QueryLedger::add_chat_call(const std::string& id) {
  at(id).chat_calls.fetch_add(1);
}
void QueryLedger::add_embedding_call(const std::string& id) {
  at(id).embedding_calls.fetch_add(1);
}
void QueryLedger::add_victim_query(const std::string& id) {
  at(id).victim_queries.fetch_add(1);
}

QueryLedger::Snapshot QueryLedger::get(const std::string& id) const {
  const Counters& c = at(id);
  return {c.chat_calls.load(), c.embedding_calls.load(),
          c.victim_queries.load()};
}

std::uint64_t QueryLedger::total_victim_queries() const {
  std::uint64_t total = 0;
  for (const auto& [_, c] : counters_) total += c->victim_queries.load();
  return total;
}

std::uint64_t QueryLedger::total_chat_calls() const {
  std::uint64_t total = 0;
  for (const auto& [_, c] : counters_) total += c->chat_calls.load();
  return total;
}

Json QueryLedger::snapshot_json() const {
  Json per = Json::object();
  for (const auto& [id, c] : counters_) {
    per[id] = Json{{"chat_calls", c->chat_calls.load()},
                   {"embedding_calls", c->embedding_calls.load()},
                   {"victim_queries", c->victim_queries.load()}};
  }
  return Json{{"endpoints", per},
              {"total_victim_queries", total_victim_queries()}};
}

// Gateway

void Gateway::add_endpoint(ModelEndpoint endpoint) {
  auto backend = make_backend(endpoint);
  add_endpoint(std::move(endpoint), std::move(backend));
}

void Gateway::add_endpoint(ModelEndpoint endpoint,
                           std::shared_ptr<ModelBackend> backend) {
  if (slots_.count(endpoint.id)) {
    throw InvalidArgument("duplicate endpoint id: " + endpoint.id);
  }
  auto s = std::make_unique<Slot>();
  ledger_.register_endpoint(endpoint.id);
  std::string id = endpoint.id;
  s->endpoint = std::move(endpoint);
  s->backend = std::move(backend);
  slots_[id] = std::move(s);
}

bool Gateway::has_endpoint(const std::string& id) const {
  return slots_.count(id) > 0;
}

Gateway::Slot& Gateway::slot(const std::string& id) const {
  auto it = slots_.find(id);
  if (it == slots_.end()) throw LookupError("unknown endpoint: " + id);
  return *it->second;
}

const ModelEndpoint& Gateway::endpoint(const std::string& id) const {
  return slot(id).endpoint;
}

std::vector<std::string> Gateway::endpoint_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : slots_) ids.push_back(id);
  return ids;
}

template <typename F>
auto Gateway::with_retries(Slot& s, F&& call) -> decltype(call()) {
  {
    std::unique_lock lock(s.mu);
    s.cv.wait(lock,
              [&] { return s.in_flight < s.endpoint.max_concurrency; });
    ++s.in_flight;
  }
  struct Release {
    Slot& s;
    ~Release() {
      {
        std::lock_guard lock(s.mu);
        --s.in_flight;
      }
      s.cv.notify_one();
    }
  } release{s};

  auto backoff = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return call();
    } catch (const TransientError& e) {
      if (attempt >= retry_.attempts) {
        throw EndpointError("endpoint " + s.endpoint.id + " failed after " +
                            std::to_string(attempt) +
                            " attempts: " + e.what());
      }
    }
    if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

std::string Gateway::chat(const std::string& endpoint_id,
                          const std::vector<ChatMessage>& messages,
                          const Sampling& sampling) {
  Slot& s = slot(endpoint_id);
  if (s.endpoint.kind != EndpointKind::Chat) {
    throw InvalidArgument("endpoint " + endpoint_id + " is not a chat endpoint");
  }
  ledger_.add_chat_call(endpoint_id);
  return with_retries(s, [&] { return s.backend->chat(messages, sampling); });
}

std::vector<double> Gateway::embed(const std::string& endpoint_id,
                                   const std::string& text) {
  Slot& s = slot(endpoint_id);
  if (s.endpoint.kind != EndpointKind::Embedding) {
    throw InvalidArgument("endpoint " + endpoint_id +
                          " is not an embedding endpoint");
  }
  ledger_.add_embedding_call(endpoint_id);
  return with_retries(s, [&] { return s.backend->embed(text); });
}

double Gateway::perplexity(const std::string& endpoint_id,
                           const std::string& text,
                           const std::string& context) {
  if (text.empty()) throw InvalidArgument("perplexity of empty text");
  Slot& s = slot(endpoint_id);
  return with_retries(s,
                      [&] { return s.backend->perplexity(text, context); });
}

std::string messages_hash(const std::vector<ChatMessage>& messages) {
  Json arr = Json::array();
  for (const auto& m : messages) {
    arr.push_back(Json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  return sha256_hex(canonical_dump(arr));
}

// ScriptedBackend

ScriptedBackend::ScriptedBackend(std::vector<std::string> cycle,
                                 std::string fallback)
    : cycle_(std::move(cycle)), fallback_(std::move(fallback)) {}

void ScriptedBackend::add(const std::vector<ChatMessage>& messages,
                          std::string response) {
  add_hash(messages_hash(messages), std::move(response));
}

void ScriptedBackend::add_hash(std::string hash, std::string response) {
  std::lock_guard lock(mu_);
  table_[std::move(hash)] = std::move(response);
}

std::string ScriptedBackend::chat(const std::vector<ChatMessage>& messages,
                                  const Sampling&) {
  std::lock_guard lock(mu_);
  if (!table_.empty()) {
    auto it = table_.find(messages_hash(messages));
    if (it != table_.end()) return it->second;
  }
  if (!cycle_.empty()) return cycle_[next_++ % cycle_.size()];
  return fallback_;
}

// Bag of words

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t BagOfWordsEmbedder::bucket(const std::string& token) const {
  return static_cast<std::size_t>(fnv1a64(token) % dimension_);
}

std::vector<double> BagOfWordsEmbedder::embed(const std::string& text) {
  std::vector<double> v(dimension_, 0.0);
  for (const auto& t : word_tokens(text)) v[bucket(t)] += 1.0;
  return v;
}

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("cosine of vectors with different dimensions");
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) {
    throw InvalidArgument("cosine of a zero vector is undefined");
  }
  // sqrt(x * x) == |x| in IEEE arithmetic, so identical inputs give 1 exactly.
  double c = dot / std::sqrt(na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace tip
