#pragma once

#include <compare>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tip {

// Insertion-ordered JSON is used everywhere so serialization keeps key order.
using Json = nlohmann::ordered_json;

// Name of a JSON object member. Non-empty, no control characters.
class FieldKey {
 public:
  explicit FieldKey(std::string name);

  const std::string& str() const { return name_; }

  friend bool operator==(const FieldKey&, const FieldKey&) = default;
  friend auto operator<=>(const FieldKey&, const FieldKey&) = default;

 private:
  std::string name_;
};

bool is_valid_field_key(std::string_view name);

// Ordered key -> text map of adversarial fields.
class Payload {
 public:
  using Entry = std::pair<FieldKey, std::string>;

  Payload() = default;
  Payload(std::initializer_list<std::pair<std::string, std::string>> entries);

  // Appends a new entry; throws InvalidArgument on a duplicate key.
  void add(FieldKey key, std::string value);
  // Replaces the value of an existing key, or appends.
  void set(const FieldKey& key, std::string value);

  const std::string* find(std::string_view key) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::set<std::string> keyset() const;

  Json to_json() const;
  // Requires a JSON object whose values are all strings.
  static Payload from_json(const Json& j);

  friend bool operator==(const Payload&, const Payload&) = default;

 private:
  std::vector<Entry> entries_;
};

// Structured response of one tool call. Values may be any JSON value.
class ToolResponse {
 public:
  using Entry = std::pair<FieldKey, Json>;

  ToolResponse() = default;
  explicit ToolResponse(std::string tool_id) : tool_id_(std::move(tool_id)) {}

  const std::string& tool_id() const { return tool_id_; }

  void add(FieldKey key, Json value);
  void set(const FieldKey& key, Json value);
  const Json* find(std::string_view key) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::set<std::string> keyset() const;

  Json to_json() const;
  static ToolResponse from_json(std::string tool_id, const Json& j);

  friend bool operator==(const ToolResponse&, const ToolResponse&) = default;

 private:
  std::string tool_id_;
  std::vector<Entry> entries_;
};

// Base keys keep their position; colliding keys take the payload value;
// payload-only keys are appended in payload order.
ToolResponse merge_payload(const ToolResponse& base, const Payload& payload);

struct CompromisedResponse {
  ToolResponse base;
  Payload payload;
  ToolResponse merged;

  static CompromisedResponse build(ToolResponse base, Payload payload);
};

// Compact JSON text, insertion key order, UTF-8, no whitespace.
std::string canonical_serialize(const Payload& p);
std::string canonical_serialize(const ToolResponse& r);
std::string canonical_dump(const Json& j);

Payload deserialize_payload(std::string_view text);
ToolResponse deserialize_tool_response(std::string tool_id,
                                       std::string_view text);

// Exact rational score successes/trials.
class ScoreValue {
 public:
  ScoreValue() : ScoreValue(0, 1) {}
  ScoreValue(std::int64_t successes, std::int64_t trials);

  std::int64_t successes() const { return successes_; }
  std::int64_t trials() const { return trials_; }
  double value() const {
    return static_cast<double>(successes_) / static_cast<double>(trials_);
  }

  // Cross-multiplied comparison. 1/2 == 10/20.
  friend std::strong_ordering operator<=>(const ScoreValue& a,
                                          const ScoreValue& b);
  friend bool operator==(const ScoreValue& a, const ScoreValue& b) {
    return (a <=> b) == std::strong_ordering::equal;
  }

  // Same numerator and denominator, not just equal value.
  bool identical(const ScoreValue& o) const {
    return successes_ == o.successes_ && trials_ == o.trials_;
  }

  std::string to_string() const;
  Json to_json() const;
  static ScoreValue from_json(const Json& j);

 private:
  std::int64_t successes_;
  std::int64_t trials_;
};

}  // namespace tip
