#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <thread>

#include "../support/gen.hpp"
#include "httplib.h"
#include "tip/error.hpp"
#include "tip/gateway.hpp"
#include "tip/perplexity.hpp"
#include "tip/util.hpp"

namespace tip {
namespace {

using testing::Rng;

ModelEndpoint mock_endpoint(const std::string& id, const std::string& profile,
                            Json options = Json::object()) {
  ModelEndpoint e;
  e.id = id;
  e.base_url = "mock://" + profile;
  e.model_name = profile;
  e.options = std::move(options);
  return e;
}

std::vector<ChatMessage> user(const std::string& text) {
  return {{Role::System, "sys"}, {Role::User, text}};
}

TEST(Gateway, ScriptedTableLookup) {
  Gateway g;
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add(user("hello"), "ok");
  g.add_endpoint(mock_endpoint("s", "scripted"), backend);
  EXPECT_EQ(g.chat("s", user("hello")), "ok");
  EXPECT_EQ(g.chat("s", user("other")), "");
}

TEST(Gateway, ScriptedProfileFromOptions) {
  Gateway g;
  g.add_endpoint(mock_endpoint("s", "scripted",
                               Json{{"responses", Json::array({"one", "two"})}, {"default", "d"}}));
  EXPECT_EQ(g.chat("s", user("x")), "one");
  EXPECT_EQ(g.chat("s", user("x")), "two");
  EXPECT_EQ(g.chat("s", user("x")), "one");
}

TEST(Gateway, EchoReturnsLastUserMessage) {
  Gateway g;
  g.add_endpoint(mock_endpoint("e", "echo"));
  std::vector<ChatMessage> msgs = {{Role::System, "s"}, {Role::User, "first"},
                                   {Role::Assistant, "a"}, {Role::User, "last one"}};
  EXPECT_EQ(g.chat("e", msgs), "last one");
}

TEST(Gateway, LedgerCountsEveryCall) {
  Gateway g;
  g.add_endpoint(mock_endpoint("e", "echo"));
  for (int n = 1; n <= 25; ++n) {
    g.chat("e", user("x"));
    EXPECT_EQ(g.ledger().get("e").chat_calls, static_cast<std::uint64_t>(n));
  }
  EXPECT_EQ(g.ledger().total_chat_calls(), 25u);
  EXPECT_EQ(g.ledger().total_victim_queries(), 0u);
}

TEST(Gateway, ConcurrentCallsCountExactly) {
  Gateway g;
  auto ep = mock_endpoint("e", "echo");
  ep.max_concurrency = 2;
  g.add_endpoint(ep);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&g] {
      for (int i = 0; i < 200; ++i) g.chat("e", user("x"));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(g.ledger().get("e").chat_calls, 1600u);
}

TEST(Gateway, ConcurrencyCapIsRespected) {
  struct Probe : ModelBackend {
    std::atomic<int> live{0}, peak{0};
    std::string chat(const std::vector<ChatMessage>&, const Sampling&) override {
      int now = ++live;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      --live;
      return "x";
    }
  };
  Gateway g;
  auto probe = std::make_shared<Probe>();
  auto ep = mock_endpoint("p", "echo");
  ep.max_concurrency = 3;
  g.add_endpoint(ep, probe);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&g] {
      for (int i = 0; i < 10; ++i) g.chat("p", user("x"));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(probe->peak.load(), 3);
}

TEST(Gateway, RetriesTransientFailures) {
  struct Flaky : ModelBackend {
    int fails;
    int calls = 0;
    explicit Flaky(int f) : fails(f) {}
    std::string chat(const std::vector<ChatMessage>&, const Sampling&) override {
      if (++calls <= fails) throw TransientError("503");
      return "fine";
    }
  };
  Gateway g(RetryPolicy{3, std::chrono::milliseconds(0)});
  auto two = std::make_shared<Flaky>(2);
  g.add_endpoint(mock_endpoint("a", "echo"), two);
  EXPECT_EQ(g.chat("a", user("x")), "fine");
  EXPECT_EQ(two->calls, 3);

  auto three = std::make_shared<Flaky>(3);
  g.add_endpoint(mock_endpoint("b", "echo"), three);
  EXPECT_THROW(g.chat("b", user("x")), EndpointError);
  EXPECT_EQ(three->calls, 3);
}

TEST(Gateway, KindChecksAndUnknownEndpoint) {
  Gateway g;
  auto emb = mock_endpoint("emb", "bow");
  emb.kind = EndpointKind::Embedding;
  g.add_endpoint(emb);
  g.add_endpoint(mock_endpoint("e", "echo"));
  EXPECT_THROW(g.chat("emb", user("x")), InvalidArgument);
  EXPECT_THROW(g.embed("e", "x"), InvalidArgument);
  EXPECT_THROW(g.chat("nope", user("x")), LookupError);
  EXPECT_THROW(g.add_endpoint(mock_endpoint("e", "echo")), InvalidArgument);
  EXPECT_THROW(g.perplexity("e", "text", ""), UnsupportedCapability);
}

TEST(Embedding, BagOfWordsProperties) {
  Gateway g;
  auto emb = mock_endpoint("emb", "bow", Json{{"dimension", 512}});
  emb.kind = EndpointKind::Embedding;
  g.add_endpoint(emb);
  EXPECT_EQ(g.embed("emb", "a b"), g.embed("emb", "a b"));
  BagOfWordsEmbedder bow(512);
  ASSERT_NE(bow.bucket("a"), bow.bucket("b"));
  auto a = g.embed("emb", "a");
  auto b = g.embed("emb", "b");
  double dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  EXPECT_EQ(dot, 0.0);
  Rng rng(21);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(g.embed("emb", rng.sentence(5)).size(), 512u);
  EXPECT_EQ(g.ledger().get("emb").embedding_calls, 104u);
}

// Interpolated add-one character n-gram perplexity computed directly from
// substring counts of a single training document.
double ngram_oracle(const std::string& doc, const std::string& text, int order) {
  auto count = [&doc](const std::string& s) {
    long n = 0;
    for (std::size_t i = 0; i + s.size() <= doc.size(); ++i) n += doc.compare(i, s.size(), s) == 0;
    return n;
  };
  std::set<char> vocab(doc.begin(), doc.end());
  const double V = static_cast<double>(vocab.size()) + 1;
  double log_sum = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    int orders = std::min<int>(order, static_cast<int>(i) + 1);
    double p = 0;
    for (int n = 1; n <= orders; ++n) {
      std::string h = text.substr(i - (n - 1), n - 1);
      // occurrences of h that are followed by some byte
      long followed = h.empty() ? static_cast<long>(doc.size()) : count(h) - (doc.size() >= h.size() && doc.compare(doc.size() - h.size(), h.size(), h) == 0);
      p += (count(h + text[i]) + 1) / (followed + V);
    }
    log_sum += std::log(p / orders);
  }
  return std::exp(-log_sum / static_cast<double>(text.size()));
}

TEST(Perplexity, ClosedFormTwoSymbolCase) {
  CharNgramModel m(5);
  m.train({"ababab"});
  // P(a) = 4/9; P(b | a) = (4/9 + 4/6) / 2 = 5/9; ppl = (20/81)^(-1/2).
  EXPECT_NEAR(m.estimate("ab", ""), 9.0 / std::sqrt(20.0), 1e-12);
  EXPECT_NEAR(m.estimate("ab", ""), ngram_oracle("ababab", "ab", 5), 1e-12);
  for (const std::string q : {"a", "b", "ba", "abab", "bbaa", "abc", "ababababa"}) {
    EXPECT_NEAR(m.estimate(q, ""), ngram_oracle("ababab", q, 5), 1e-9) << q;
  }
}

TEST(Perplexity, CorpusSentenceBeatsRandomString) {
  std::vector<std::string> corpus = {
      "Mild and mostly dry in Banff over the next 2 day(s).",
      "Cool with passing clouds in Lisbon over the next 3 day(s).",
      "Your package is on its way with no reported delays.",
      "Your trip is confirmed and no action is needed before departure."};
  CharNgramModel m(5);
  m.train(corpus);
  Rng rng(22);
  for (const auto& s : corpus) {
    std::string noise;
    for (std::size_t i = 0; i < s.size(); ++i) {
      noise += static_cast<char>(rng.range(33, 126));
    }
    EXPECT_LT(m.estimate(s, ""), m.estimate(noise, ""));
  }
  EXPECT_EQ(estimate_perplexity(m, corpus[0]), m.estimate(corpus[0], ""));
  EXPECT_THROW(estimate_perplexity(m, ""), InvalidArgument);
}

TEST(Perplexity, FallbackOnUnsupportedEndpoint) {
  Gateway g;
  g.add_endpoint(mock_endpoint("e", "echo"));
  auto local = std::make_shared<CharNgramModel>(3);
  local->train({"hello world"});
  FallbackPerplexity f(std::make_shared<EndpointPerplexity>(g, "e"), local);
  EXPECT_EQ(f.estimate("hello", ""), local->estimate("hello", ""));
}

TEST(Percentile, NearestRank) {
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 100), 5);
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 50), 3);
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 20), 1);
  std::vector<double> v;
  for (int i = 1; i <= 200; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 99), 198);
}

TEST(Endpoint, CredentialsNeverSerialized) {
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    std::string id = "ep" + rng.word();
    std::string secret = "sk-" + rng.word(16, 24);
    std::string var = default_credentials_var(id);
    ::setenv(var.c_str(), secret.c_str(), 1);
    ModelEndpoint e = ModelEndpoint::from_json(
        Json{{"id", id}, {"base_url", "https://api.example.com/v1"}, {"model_name", "m"}});
    EXPECT_EQ(e.credentials_ref, var);
    std::string dumped = e.to_json().dump();
    EXPECT_EQ(dumped.find(secret), std::string::npos);
    Gateway g;
    g.add_endpoint(e);
    EXPECT_EQ(g.ledger().snapshot_json().dump().find(secret), std::string::npos);
    ::unsetenv(var.c_str());
  }
  EXPECT_EQ(default_credentials_var("victim-a.1"), "TIP_API_KEY_VICTIM_A_1");
}

TEST(Endpoint, RejectsMalformedUrls) {
  EXPECT_THROW(ModelEndpoint::from_json(Json{{"id", "x"}, {"base_url", "ftp://h"}}),
               ConfigError);
  EXPECT_THROW(ModelEndpoint::from_json(Json{{"id", "x"}, {"base_url", "http://"}}),
               ConfigError);
  EXPECT_NO_THROW(ModelEndpoint::from_json(Json{{"id", "x"}, {"base_url", "mock://echo"}}));
}

// A local chat-completion server checks the wire format end to end.
class WireTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
      auto body = Json::parse(req.body);
      last_request_ = body;
      auth_ = req.get_header_value("Authorization");
      if (fail_next_ > 0) {
        --fail_next_;
        res.status = 503;
        return;
      }
      std::string reply = "echo:" + body["messages"].back()["content"].get<std::string>();
      res.set_content(Json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}}.dump(),
                      "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"data":[{"embedding":[0.5,0.25]}]})", "application/json");
    });
    server_.Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"choices":[{"text":"x","logprobs":{"token_logprobs":[null,-1.0,-2.0],"text_offset":[0,3,5]}}]})",
                      "application/json");
    });
    server_.Post("/broken/chat/completions", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"nothing":1})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  ModelEndpoint endpoint(const std::string& path = "/v1") {
    ModelEndpoint e;
    e.id = "wire";
    e.base_url = "http://127.0.0.1:" + std::to_string(port_) + path;
    e.model_name = "test-model";
    e.credentials_ref = "TIP_API_KEY_WIRE_TEST";
    return e;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  Json last_request_;
  std::string auth_;
  int fail_next_ = 0;
};

TEST_F(WireTest, ChatRequestShapeAndAuth) {
  ::setenv("TIP_API_KEY_WIRE_TEST", "secret-token", 1);
  Gateway g(RetryPolicy{3, std::chrono::milliseconds(1)});
  g.add_endpoint(endpoint());
  EXPECT_EQ(g.chat("wire", user("hi"), Sampling{0.7, 42, 64}), "echo:hi");
  EXPECT_EQ(last_request_["model"], "test-model");
  EXPECT_EQ(last_request_["messages"][0]["role"], "system");
  EXPECT_EQ(last_request_["messages"][1]["content"], "hi");
  EXPECT_EQ(last_request_["seed"], 42);
  EXPECT_EQ(last_request_["max_tokens"], 64);
  EXPECT_EQ(auth_, "Bearer secret-token");
  ::unsetenv("TIP_API_KEY_WIRE_TEST");
}

TEST_F(WireTest, RetriesServerErrors) {
  Gateway g(RetryPolicy{3, std::chrono::milliseconds(1)});
  g.add_endpoint(endpoint());
  fail_next_ = 2;
  EXPECT_EQ(g.chat("wire", user("x")), "echo:x");
  fail_next_ = 3;
  EXPECT_THROW(g.chat("wire", user("x")), EndpointError);
}

TEST_F(WireTest, MalformedResponseIsProtocolError) {
  Gateway g(RetryPolicy{1, std::chrono::milliseconds(0)});
  g.add_endpoint(endpoint("/broken"));
  EXPECT_THROW(g.chat("wire", user("x")), ProtocolError);
}

TEST_F(WireTest, EmbeddingsAndLogprobs) {
  Gateway g;
  auto e = endpoint();
  e.kind = EndpointKind::Embedding;
  g.add_endpoint(e);
  EXPECT_EQ(g.embed("wire", "x"), (std::vector<double>{0.5, 0.25}));
  // Context "abc" covers the first token; the text tokens score -1 and -2.
  EXPECT_NEAR(g.perplexity("wire", "defgh", "abc"), std::exp(1.5), 1e-12);
}

TEST_F(WireTest, NetworkGuardBlocksConnections) {
  Gateway g(RetryPolicy{1, std::chrono::milliseconds(0)});
  g.add_endpoint(endpoint());
  net::NetworkGuard guard;
  EXPECT_THROW(g.chat("wire", user("x")), Error);
  EXPECT_EQ(guard.blocked(), 1u);
}

}  // namespace
}  // namespace tip
