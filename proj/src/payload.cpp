#include "tip/payload.hpp"

#include <algorithm>
#include <set>

#include "tip/error.hpp"

namespace tip {

bool is_valid_field_key(std::string_view name) {
  if (name.empty()) return false;
  return std::none_of(name.begin(), name.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return u < 0x20 || u == 0x7f;
  });
}

FieldKey::FieldKey(std::string name) : name_(std::move(name)) {
  if (!is_valid_field_key(name_)) {
    throw InvalidArgument("invalid field key: \"" + name_ + "\"");
  }
}

namespace {

template <typename Entries>
auto find_entry(Entries& entries, std::string_view key) {
  return std::find_if(entries.begin(), entries.end(),
                      [&](const auto& e) { return e.first.str() == key; });
}

template <typename Entries>
std::set<std::string> keys_of(const Entries& entries) {
  std::set<std::string> out;
  for (const auto& e : entries) out.insert(e.first.str());
  return out;
}

}  // namespace

// Payload

Payload::Payload(
    std::initializer_list<std::pair<std::string, std::string>> entries) {
  for (const auto& [k, v] : entries) add(FieldKey(k), v);
}

void Payload::add(FieldKey key, std::string value) {
  if (find_entry(entries_, key.str()) != entries_.end()) {
    throw InvalidArgument("duplicate payload key: " + key.str());
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void Payload::set(const FieldKey& key, std::string value) {
  auto it = find_entry(entries_, key.str());
  if (it != entries_.end()) {
    it->second = std::move(value);
  } else {
    entries_.emplace_back(key, std::move(value));
  }
}

const std::string* Payload::find(std::string_view key) const {
  auto it = find_entry(entries_, key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::set<std::string> Payload::keyset() const { return keys_of(entries_); }

Json Payload::to_json() const {
  Json j = Json::object();
  for (const auto& [k, v] : entries_) j[k.str()] = v;
  return j;
}

Payload Payload::from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("payload must be a JSON object");
  Payload p;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) {
      throw InvalidArgument("payload value for key \"" + k +
                            "\" is not text");
    }
    p.add(FieldKey(k), v.get<std::string>());
  }
  return p;
}

// ToolResponse

void ToolResponse::add(FieldKey key, Json value) {
  if (find_entry(entries_, key.str()) != entries_.end()) {
    throw InvalidArgument("duplicate response key: " + key.str());
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void ToolResponse::set(const FieldKey& key, Json value) {
  auto it = find_entry(entries_, key.str());
  if (it != entries_.end()) {
    it->second = std::move(value);
  } else {
    entries_.emplace_back(key, std::move(value));
  }
}

const Json* ToolResponse::find(std::string_view key) const {
  auto it = find_entry(entries_, key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::set<std::string> ToolResponse::keyset() const {
  return keys_of(entries_);
}

Json ToolResponse::to_json() const {
  Json j = Json::object();
  for (const auto& [k, v] : entries_) j[k.str()] = v;
  return j;
}

ToolResponse ToolResponse::from_json(std::string tool_id, const Json& j) {
  if (!j.is_object()) {
    throw InvalidArgument("tool response must be a JSON object");
  }
  ToolResponse r(std::move(tool_id));
  for (const auto& [k, v] : j.items()) r.add(FieldKey(k), v);
  return r;
}

// Merge

ToolResponse merge_payload(const ToolResponse& base, const Payload& payload) {
  ToolResponse out = base;
  for (const auto& [k, v] : payload.entries()) out.set(k, Json(v));
  return out;
}

CompromisedResponse CompromisedResponse::build(ToolResponse base,
                                               Payload payload) {
  ToolResponse merged = merge_payload(base, payload);
  return {std::move(base), std::move(payload), std::move(merged)};
}

// Serialization

std::string canonical_dump(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::replace);
}

std::string canonical_serialize(const Payload& p) {
  return canonical_dump(p.to_json());
}

std::string canonical_serialize(const ToolResponse& r) {
  return canonical_dump(r.to_json());
}

namespace {

// Parses JSON, rejecting objects that repeat a key (the default parser keeps
// the last one silently).
Json parse_unique_keys(std::string_view text, const char* what) {
  std::vector<std::set<std::string>> seen;
  bool duplicate = false;
  Json::parser_callback_t cb = [&](int, Json::parse_event_t ev, Json& parsed) {
    if (ev == Json::parse_event_t::object_start) {
      seen.emplace_back();
    } else if (ev == Json::parse_event_t::object_end) {
      seen.pop_back();
    } else if (ev == Json::parse_event_t::key) {
      if (!seen.back().insert(parsed.get<std::string>()).second) duplicate = true;
    }
    return true;
  };
  Json j = Json::parse(text.begin(), text.end(), cb, false);
  if (j.is_discarded()) throw InvalidArgument(std::string(what) + " is not valid JSON");
  if (duplicate) throw InvalidArgument(std::string(what) + " repeats a key");
  return j;
}

}  // namespace

Payload deserialize_payload(std::string_view text) {
  return Payload::from_json(parse_unique_keys(text, "payload"));
}

ToolResponse deserialize_tool_response(std::string tool_id,
                                       std::string_view text) {
  Json j = parse_unique_keys(text, "tool response");
  return ToolResponse::from_json(std::move(tool_id), j);
}

// ScoreValue

ScoreValue::ScoreValue(std::int64_t successes, std::int64_t trials)
    : successes_(successes), trials_(trials) {
  if (trials_ < 1 || successes_ < 0 || successes_ > trials_) {
    throw InvalidArgument("score must satisfy 0 <= successes <= trials, "
                          "trials >= 1");
  }
}

std::strong_ordering operator<=>(const ScoreValue& a, const ScoreValue& b) {
  // Trials are small (tens to thousands); products cannot overflow int64.
  return a.successes_ * b.trials_ <=> b.successes_ * a.trials_;
}

std::string ScoreValue::to_string() const {
  return std::to_string(successes_) + "/" + std::to_string(trials_);
}

Json ScoreValue::to_json() const {
  return Json{{"successes", successes_}, {"trials", trials_}};
}

ScoreValue ScoreValue::from_json(const Json& j) {
  return ScoreValue(j.at("successes").get<std::int64_t>(),
                    j.at("trials").get<std::int64_t>());
}

}  // namespace tip
