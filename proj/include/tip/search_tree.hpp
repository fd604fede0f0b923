#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tip/payload.hpp"

namespace tip {

enum class Tactic { ImplicitInduction, ExplicitControl };
enum class SearchMode { BroadExploration, StableRefinement };

std::string to_string(Tactic t);
std::string to_string(SearchMode m);
Tactic other(Tactic t);

struct StrategyLabel {
  Tactic tactic = Tactic::ImplicitInduction;
  SearchMode mode = SearchMode::BroadExploration;
  std::optional<std::string> defense_directive;

  friend bool operator==(const StrategyLabel&, const StrategyLabel&) = default;
  Json to_json() const;
};

// Broad exploration below 1/2 (or when unscored), stable refinement at or
// above it.
SearchMode mode_for_parent_score(const std::optional<ScoreValue>& score);

using NodeId = std::uint32_t;

struct SearchNode {
  NodeId id = 0;
  Payload payload;
  std::optional<ScoreValue> score;
  std::optional<NodeId> parent;
  StrategyLabel strategy_used;
  int iteration = 0;
  // Blocked-signal counts per defense id, gathered while scoring this node.
  std::map<std::string, int> blocked_signals;

  Json to_json() const;
};

// Append-only search tree. Node ids are vector indices, so a parent id is
// always smaller than its child's.
class SearchTree {
 public:
  explicit SearchTree(Payload seed);

  NodeId root_id() const { return 0; }
  NodeId add_child(NodeId parent, Payload payload, StrategyLabel strategy);
  void set_score(NodeId id, ScoreValue score);
  void set_blocked_signals(NodeId id, std::map<std::string, int> counts);

  const SearchNode& node(NodeId id) const;
  bool contains(NodeId id) const { return id < nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<SearchNode>& nodes() const { return nodes_; }

  const std::vector<NodeId>& frontier() const { return frontier_; }
  void set_frontier(std::vector<NodeId> ids);

 private:
  SearchNode& mutable_node(NodeId id);

  std::vector<SearchNode> nodes_;
  std::vector<NodeId> frontier_;
};

// Root..node inclusive, parent-to-child order. Throws LookupError.
std::vector<SearchNode> history_path(const SearchTree& tree, NodeId id);

}  // namespace tip
