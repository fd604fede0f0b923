#pragma once

#include <map>
#include <string>
#include <string_view>

#include "tip/payload.hpp"

namespace tip {

// Text templates with "{{slot}}" placeholders. Names are paths under
// data/templates without extension ("attacker/system"). The built-in set is
// compiled in from data/templates; a directory with the same layout can
// override individual entries.
class Templates {
 public:
  // Built-in set.
  Templates();

  static const Templates& builtin();
  // Built-ins overridden by any matching file found under `dir`.
  static Templates with_overrides(const std::string& dir);

  const std::string& text(const std::string& name) const;
  Json json(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace tip
