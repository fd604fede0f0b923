#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tip {

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

// splitmix64 finalizer; combines seeds without order-of-completion effects.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Replaces every "{{name}}" slot with its value; unknown slots stay as-is.
std::string fill_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& slots);

struct ParsedUrl {
  std::string scheme;   // "http" / "https"
  std::string host_port;  // scheme://host[:port], httplib client form
  std::string path_prefix;  // "/v1" or ""
};
ParsedUrl parse_http_url(const std::string& url);
bool is_well_formed_url(const std::string& url);

namespace net {

// Every outgoing connection attempt goes through note_attempt(), which
// throws EndpointError while a NetworkGuard is alive.
void note_attempt(const std::string& target);
std::uint64_t attempts();

class NetworkGuard {
 public:
  NetworkGuard();
  ~NetworkGuard();
  NetworkGuard(const NetworkGuard&) = delete;
  NetworkGuard& operator=(const NetworkGuard&) = delete;

  // Attempts recorded while this guard was active.
  std::uint64_t blocked() const;

 private:
  std::uint64_t start_;
};

}  // namespace net

}  // namespace tip
