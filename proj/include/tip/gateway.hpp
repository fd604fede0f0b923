#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tip/payload.hpp"

namespace tip {

enum class Role { System, User, Assistant, Tool };

std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct Sampling {
  double temperature = 0.0;
  std::uint64_t seed = 0;
  int max_tokens = 1024;
};

enum class EndpointKind { Chat, Embedding };

struct ModelEndpoint {
  std::string id;
  std::string base_url;  // http(s)://host[:port]/prefix or mock://<profile>
  std::string model_name;
  EndpointKind kind = EndpointKind::Chat;
  // Name of the environment variable holding the API key. Never the key.
  std::string credentials_ref;
  // Backend-specific knobs (mock profiles read these).
  Json options = Json::object();
  int max_concurrency = 8;

  bool is_mock() const;
  std::string mock_profile() const;

  // Serializes everything except secrets (there are none stored here).
  Json to_json() const;
  static ModelEndpoint from_json(const Json& j);
};

// TIP_API_KEY_<ID>, ID upper-cased with non-alphanumerics mapped to '_'.
std::string default_credentials_var(const std::string& endpoint_id);

// Raw model capability. Implementations must be safe for concurrent calls.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string chat(const std::vector<ChatMessage>& messages,
                           const Sampling& sampling);
  virtual std::vector<double> embed(const std::string& text);
  // Perplexity of `text` given `context`; UnsupportedCapability if the
  // backend does not expose log-probabilities.
  virtual double perplexity(const std::string& text,
                            const std::string& context);
};

// Builds the backend for an endpoint: mock://<profile> selects an offline
// mock, anything else the HTTP chat-completion client.
std::shared_ptr<ModelBackend> make_backend(const ModelEndpoint& endpoint);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
};

class QueryLedger {
 public:
  struct Snapshot {
    std::uint64_t chat_calls = 0;
    std::uint64_t embedding_calls = 0;
    std::uint64_t victim_queries = 0;
  };

  void register_endpoint(const std::string& id);
  void add_chat_call(const std::string& id);
  void add_embedding_call(const std::string& id);
  void add_victim_query(const std::string& id);

  Snapshot get(const std::string& id) const;
  std::uint64_t total_victim_queries() const;
  std::uint64_t total_chat_calls() const;
  Json snapshot_json() const;

 private:
  struct Counters {
    std::atomic<std::uint64_t> chat_calls{0};
    std::atomic<std::uint64_t> embedding_calls{0};
    std::atomic<std::uint64_t> victim_queries{0};
  };
  Counters& at(const std::string& id) const;

  // Populated before any concurrent use; only counters mutate afterwards.
  std::map<std::string, std::unique_ptr<Counters>> counters_;
};

class Gateway {
 public:
  explicit Gateway(RetryPolicy retry = {}) : retry_(retry) {}

  void add_endpoint(ModelEndpoint endpoint);
  void add_endpoint(ModelEndpoint endpoint,
                    std::shared_ptr<ModelBackend> backend);

  bool has_endpoint(const std::string& id) const;
  const ModelEndpoint& endpoint(const std::string& id) const;
  std::vector<std::string> endpoint_ids() const;

  std::string chat(const std::string& endpoint_id,
                   const std::vector<ChatMessage>& messages,
                   const Sampling& sampling = {});
  std::vector<double> embed(const std::string& endpoint_id,
                            const std::string& text);
  double perplexity(const std::string& endpoint_id, const std::string& text,
                    const std::string& context);

  QueryLedger& ledger() { return ledger_; }
  const QueryLedger& ledger() const { return ledger_; }

 private:
  struct Slot {
    ModelEndpoint endpoint;
    std::shared_ptr<ModelBackend> backend;
    int in_flight = 0;
    std::mutex mu;
    std::condition_variable cv;
  };

  Slot& slot(const std::string& id) const;
  template <typename F>
  auto with_retries(Slot& s, F&& call) -> decltype(call());

  RetryPolicy retry_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  QueryLedger ledger_;
};

// Stable hash of a message list, used to key scripted mock tables.
std::string messages_hash(const std::vector<ChatMessage>& messages);

// Scripted chat backend: exact lookup by messages_hash, then a cycling list
// of fallback responses, then a default.
class ScriptedBackend : public ModelBackend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<std::string> cycle,
                           std::string fallback = {});

  void add(const std::vector<ChatMessage>& messages, std::string response);
  void add_hash(std::string hash, std::string response);

  std::string chat(const std::vector<ChatMessage>& messages,
                   const Sampling& sampling) override;

 private:
  std::mutex mu_;
  std::map<std::string, std::string> table_;
  std::vector<std::string> cycle_;
  std::size_t next_ = 0;
  std::string fallback_;
};

// Bag-of-words embedder: lower-cased alphanumeric tokens counted into a
// fixed number of hashed buckets.
class BagOfWordsEmbedder : public ModelBackend {
 public:
  explicit BagOfWordsEmbedder(std::size_t dimension = 4096)
      : dimension_(dimension) {}

  std::vector<double> embed(const std::string& text) override;
  std::size_t dimension() const { return dimension_; }
  std::size_t bucket(const std::string& token) const;

 private:
  std::size_t dimension_;
};

std::vector<std::string> word_tokens(const std::string& text);
double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

}  // namespace tip
