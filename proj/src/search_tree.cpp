#include "tip/search_tree.hpp"

#include <algorithm>

#include "tip/error.hpp"

namespace tip {

std::string to_string(Tactic t) {
  return t == Tactic::ImplicitInduction ? "ImplicitInduction"
                                        : "ExplicitControl";
}

std::string to_string(SearchMode m) {
  return m == SearchMode::BroadExploration ? "BroadExploration"
                                           : "StableRefinement";
}

Tactic other(Tactic t) {
  return t == Tactic::ImplicitInduction ? Tactic::ExplicitControl
                                        : Tactic::ImplicitInduction;
}

Json StrategyLabel::to_json() const {
  Json j{{"tactic", to_string(tactic)}, {"mode", to_string(mode)}};
  j["defense_directive"] =
      defense_directive ? Json(*defense_directive) : Json(nullptr);
  return j;
}

SearchMode mode_for_parent_score(const std::optional<ScoreValue>& score) {
  if (!score || *score < ScoreValue(1, 2)) return SearchMode::BroadExploration;
  return SearchMode::StableRefinement;
}

Json SearchNode::to_json() const {
  Json j;
  j["id"] = id;
  j["parent"] = parent ? Json(*parent) : Json(nullptr);
  j["iteration"] = iteration;
  j["payload"] = payload.to_json();
  j["score"] = score ? score->to_json() : Json(nullptr);
  j["strategy"] = strategy_used.to_json();
  Json blocked = Json::object();
  for (const auto& [k, v] : blocked_signals) blocked[k] = v;
  j["blocked_signals"] = blocked;
  return j;
}

SearchTree::SearchTree(Payload seed) {
  SearchNode root;
  root.id = 0;
  root.payload = std::move(seed);
  root.iteration = 0;
  nodes_.push_back(std::move(root));
  frontier_ = {0};
}

NodeId SearchTree::add_child(NodeId parent, Payload payload,
                             StrategyLabel strategy) {
  const SearchNode& p = node(parent);
  SearchNode child;
  child.id = static_cast<NodeId>(nodes_.size());
  child.payload = std::move(payload);
  child.parent = parent;
  child.strategy_used = std::move(strategy);
  child.iteration = p.iteration + 1;
  nodes_.push_back(std::move(child));
  return nodes_.back().id;
}

void SearchTree::set_score(NodeId id, ScoreValue score) {
  mutable_node(id).score = score;
}

void SearchTree::set_blocked_signals(NodeId id,
                                     std::map<std::string, int> counts) {
  mutable_node(id).blocked_signals = std::move(counts);
}

const SearchNode& SearchTree::node(NodeId id) const {
  if (!contains(id)) {
    throw LookupError("unknown node id " + std::to_string(id));
  }
  return nodes_[id];
}

SearchNode& SearchTree::mutable_node(NodeId id) {
  if (!contains(id)) {
    throw LookupError("unknown node id " + std::to_string(id));
  }
  return nodes_[id];
}

void SearchTree::set_frontier(std::vector<NodeId> ids) {
  for (NodeId id : ids) {
    if (!contains(id)) {
      throw LookupError("frontier references unknown node " +
                        std::to_string(id));
    }
  }
  frontier_ = std::move(ids);
}

std::vector<SearchNode> history_path(const SearchTree& tree, NodeId id) {
  std::vector<SearchNode> path;
  const SearchNode* n = &tree.node(id);
  path.push_back(*n);
  while (n->parent) {
    n = &tree.node(*n->parent);
    path.push_back(*n);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace tip
