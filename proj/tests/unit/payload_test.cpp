#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "../support/gen.hpp"
#include "tip/error.hpp"
#include "tip/payload.hpp"
#include "tip/search_tree.hpp"

namespace tip {
namespace {

using testing::Rng;

// All ordered sequences of distinct elements of `alphabet` with length <= n.
std::vector<std::vector<std::string>> sequences(const std::vector<std::string>& alphabet,
                                                std::size_t n) {
  std::vector<std::vector<std::string>> out{{}};
  std::function<void(std::vector<std::string>&)> rec = [&](std::vector<std::string>& cur) {
    if (cur.size() == n) return;
    for (const auto& k : alphabet) {
      if (std::find(cur.begin(), cur.end(), k) != cur.end()) continue;
      cur.push_back(k);
      out.push_back(cur);
      rec(cur);
      cur.pop_back();
    }
  };
  std::vector<std::string> cur;
  rec(cur);
  return out;
}

// Reference merge over plain (key, value) lists.
std::vector<std::pair<std::string, std::string>> oracle_merge(
    const std::vector<std::pair<std::string, std::string>>& base,
    const std::vector<std::pair<std::string, std::string>>& payload) {
  auto out = base;
  for (const auto& [k, v] : payload) {
    bool replaced = false;
    for (auto& e : out) {
      if (e.first == k) {
        e.second = v;
        replaced = true;
      }
    }
    if (!replaced) out.emplace_back(k, v);
  }
  return out;
}

TEST(Merge, ExhaustiveSmallCasesMatchOracle) {
  auto bases = sequences({"a", "b", "c"}, 3);
  auto payloads = sequences({"a", "b", "c", "d"}, 3);
  ASSERT_EQ(bases.size(), 16u);
  ASSERT_EQ(payloads.size(), 41u);
  for (const auto& bk : bases) {
    for (const auto& pk : payloads) {
      std::vector<std::pair<std::string, std::string>> b, p;
      ToolResponse base("T");
      Payload pay;
      for (const auto& k : bk) {
        b.emplace_back(k, "base-" + k);
        base.add(FieldKey(k), Json("base-" + k));
      }
      for (const auto& k : pk) {
        p.emplace_back(k, "pay-" + k);
        pay.add(FieldKey(k), "pay-" + k);
      }
      ToolResponse merged = merge_payload(base, pay);
      auto expect = oracle_merge(b, p);
      ASSERT_EQ(merged.size(), expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) {
        EXPECT_EQ(merged.entries()[i].first.str(), expect[i].first);
        EXPECT_EQ(merged.entries()[i].second, Json(expect[i].second));
      }
      EXPECT_EQ(merged.tool_id(), "T");
    }
  }
}

TEST(Merge, SpecExamples) {
  ToolResponse base("GetWeather");
  base.add(FieldKey("temp"), "21C");
  EXPECT_EQ(canonical_serialize(merge_payload(base, {})), R"({"temp":"21C"})");
  EXPECT_EQ(canonical_serialize(merge_payload(base, {{"summary", "s"}})),
            R"({"temp":"21C","summary":"s"})");
  base.add(FieldKey("summary"), "clear");
  EXPECT_EQ(canonical_serialize(merge_payload(base, {{"summary", "s*"}})),
            R"({"temp":"21C","summary":"s*"})");
}

TEST(Merge, Laws) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    ToolResponse base = rng.response();
    Payload p = rng.payload();
    ToolResponse m = merge_payload(base, p);
    EXPECT_EQ(merge_payload(base, Payload{}), base);
    auto ks = base.keyset();
    auto pk = p.keyset();
    ks.insert(pk.begin(), pk.end());
    EXPECT_EQ(m.keyset(), ks);
    EXPECT_EQ(merge_payload(m, p), m);
    auto c = CompromisedResponse::build(base, p);
    EXPECT_EQ(c.merged, m);
  }
}

TEST(Canonical, Examples) {
  EXPECT_EQ(canonical_serialize(Payload{}), "{}");
  EXPECT_EQ(canonical_serialize(Payload{{"a", "1"}, {"b", "2"}}), "{\"a\":\"1\",\"b\":\"2\"}");
  // Insertion order, not lexicographic.
  EXPECT_EQ(canonical_serialize(Payload{{"b", "2"}, {"a", "1"}}), "{\"b\":\"2\",\"a\":\"1\"}");
}

TEST(Canonical, RoundTrip) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    Payload p = rng.payload(6);
    EXPECT_EQ(deserialize_payload(canonical_serialize(p)), p);
    ToolResponse r = rng.response(5);
    EXPECT_EQ(deserialize_tool_response("Tool", canonical_serialize(r)), r);
  }
}

TEST(Payload, RejectsDuplicatesAndBadKeys) {
  Payload p;
  p.add(FieldKey("a"), "1");
  EXPECT_THROW(p.add(FieldKey("a"), "2"), InvalidArgument);
  EXPECT_THROW(FieldKey(""), InvalidArgument);
  EXPECT_THROW(FieldKey("a\nb"), InvalidArgument);
  EXPECT_THROW(Payload::from_json(Json{{"a", 1}}), InvalidArgument);
  EXPECT_THROW(deserialize_payload("{\"a\":\"1\",\"a\":\"2\"}"), Error);
}

TEST(Score, ExactComparison) {
  EXPECT_EQ(ScoreValue(1, 2), ScoreValue(10, 20));
  EXPECT_FALSE(ScoreValue(1, 2).identical(ScoreValue(10, 20)));
  EXPECT_LT(ScoreValue(17, 20), ScoreValue(9, 10));
  EXPECT_GE(ScoreValue(18, 20), ScoreValue(9, 10));
  EXPECT_THROW(ScoreValue(3, 2), InvalidArgument);
  EXPECT_THROW(ScoreValue(0, 0), InvalidArgument);
  Rng rng(13);
  for (int i = 0; i < 2000; ++i) {
    long t1 = rng.range(1, 1000), t2 = rng.range(1, 1000);
    long s1 = rng.range(0, t1), s2 = rng.range(0, t2);
    long lhs = s1 * t2, rhs = s2 * t1;
    auto c = ScoreValue(s1, t1) <=> ScoreValue(s2, t2);
    EXPECT_EQ(c == std::strong_ordering::less, lhs < rhs);
    EXPECT_EQ(c == std::strong_ordering::equal, lhs == rhs);
  }
}

TEST(Tree, HistoryPathMatchesParentWalk) {
  Rng rng(14);
  for (int round = 0; round < 20; ++round) {
    SearchTree tree(Payload{{"note", "seed"}});
    for (int i = 1; i < 50; ++i) {
      NodeId parent = static_cast<NodeId>(rng.range(0, static_cast<long>(tree.size()) - 1));
      tree.add_child(parent, rng.payload(), StrategyLabel{});
    }
    for (const auto& n : tree.nodes()) {
      std::vector<NodeId> walk{n.id};
      for (auto p = n.parent; p; p = tree.node(*p).parent) walk.push_back(*p);
      std::reverse(walk.begin(), walk.end());
      auto path = history_path(tree, n.id);
      ASSERT_EQ(path.size(), walk.size());
      ASSERT_EQ(path.size(), static_cast<std::size_t>(n.iteration) + 1);
      for (std::size_t i = 0; i < walk.size(); ++i) EXPECT_EQ(path[i].id, walk[i]);
      if (n.parent) {
        EXPECT_LT(*n.parent, n.id);
        EXPECT_EQ(n.iteration, tree.node(*n.parent).iteration + 1);
      }
    }
  }
}

TEST(Tree, RootAndErrors) {
  SearchTree tree(Payload{{"note", "see details below"}});
  auto p = history_path(tree, 0);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_FALSE(p[0].parent);
  EXPECT_EQ(p[0].iteration, 0);
  EXPECT_THROW(history_path(tree, 5), LookupError);
  EXPECT_THROW(tree.add_child(3, Payload{}, StrategyLabel{}), LookupError);
  NodeId a = tree.add_child(0, Payload{{"x", "1"}}, StrategyLabel{});
  NodeId b = tree.add_child(a, Payload{{"x", "2"}}, StrategyLabel{});
  NodeId c = tree.add_child(b, Payload{{"x", "3"}}, StrategyLabel{});
  auto path = history_path(tree, c);
  ASSERT_EQ(path.size(), 4u);
  EXPECT_EQ(path[3].id, c);
  EXPECT_THROW(tree.set_frontier({99}), LookupError);
}

TEST(Strategy, ModeThreshold) {
  EXPECT_EQ(mode_for_parent_score(std::nullopt), SearchMode::BroadExploration);
  EXPECT_EQ(mode_for_parent_score(ScoreValue(9, 20)), SearchMode::BroadExploration);
  EXPECT_EQ(mode_for_parent_score(ScoreValue(10, 20)), SearchMode::StableRefinement);
  EXPECT_EQ(mode_for_parent_score(ScoreValue(11, 20)), SearchMode::StableRefinement);
}

}  // namespace
}  // namespace tip
