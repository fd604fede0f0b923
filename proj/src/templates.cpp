#include "tip/templates.hpp"

#include <filesystem>

#include "tip/error.hpp"
#include "tip/util.hpp"

namespace tip {

namespace detail {
const std::map<std::string, std::string>& embedded_templates();
}

Templates::Templates() : entries_(detail::embedded_templates()) {}

const Templates& Templates::builtin() {
  static const Templates t;
  return t;
}

Templates Templates::with_overrides(const std::string& dir) {
  namespace fs = std::filesystem;
  Templates t;
  for (auto& [name, content] : t.entries_) {
    for (const char* ext : {".txt", ".json"}) {
      fs::path p = fs::path(dir) / (name + ext);
      if (!fs::exists(p)) continue;
      std::string text = read_file(p.string());
      if (std::string(ext) == ".txt" && !text.empty() && text.back() == '\n') {
        text.pop_back();
      }
      content = std::move(text);
    }
  }
  return t;
}

const std::string& Templates::text(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("no template named " + name);
  return it->second;
}

Json Templates::json(const std::string& name) const {
  Json j = Json::parse(text(name), nullptr, false);
  if (j.is_discarded()) throw ConfigError("template " + name + " is not JSON");
  return j;
}

}  // namespace tip
