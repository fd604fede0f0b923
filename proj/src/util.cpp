#include "tip/util.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tip/error.hpp"

namespace tip {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0')
       << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string fill_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    auto open = tmpl.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, open - i));
    std::string_view name = tmpl.substr(open + 2, close - open - 2);
    auto it = std::find_if(slots.begin(), slots.end(),
                           [&](const auto& s) { return s.first == name; });
    if (it != slots.end()) {
      out.append(it->second);
    } else {
      out.append(tmpl.substr(open, close + 2 - open));
    }
    i = close + 2;
  }
  return out;
}

ParsedUrl parse_http_url(const std::string& url) {
  auto sep = url.find("://");
  if (sep == std::string::npos) throw InvalidArgument("malformed URL: " + url);
  ParsedUrl p;
  p.scheme = to_lower(url.substr(0, sep));
  if (p.scheme != "http" && p.scheme != "https") {
    throw InvalidArgument("unsupported URL scheme: " + url);
  }
  auto rest = url.substr(sep + 3);
  auto slash = rest.find('/');
  std::string host = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (host.empty()) throw InvalidArgument("URL without host: " + url);
  p.host_port = p.scheme + "://" + host;
  p.path_prefix = slash == std::string::npos ? "" : rest.substr(slash);
  while (!p.path_prefix.empty() && p.path_prefix.back() == '/') {
    p.path_prefix.pop_back();
  }
  return p;
}

bool is_well_formed_url(const std::string& url) {
  if (url.rfind("mock://", 0) == 0) return url.size() > 7;
  try {
    parse_http_url(url);
    return true;
  } catch (const InvalidArgument&) {
    return false;
  }
}

namespace net {

namespace {
std::atomic<std::uint64_t> g_attempts{0};
std::atomic<int> g_guards{0};
}  // namespace

void note_attempt(const std::string& target) {
  g_attempts.fetch_add(1);
  if (g_guards.load() > 0) {
    throw EndpointError("network access disabled by guard: " + target);
  }
}

std::uint64_t attempts() { return g_attempts.load(); }

NetworkGuard::NetworkGuard() : start_(g_attempts.load()) {
  g_guards.fetch_add(1);
}

NetworkGuard::~NetworkGuard() { g_guards.fetch_sub(1); }

std::uint64_t NetworkGuard::blocked() const {
  return g_attempts.load() - start_;
}

}  // namespace net

}  // namespace tip
