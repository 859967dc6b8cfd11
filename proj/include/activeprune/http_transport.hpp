#pragma once

// HTTP transport for RemoteScorer. Kept out of quality.hpp so that only code
// talking to a real host pulls in cpp-httplib.

#include <chrono>
#include <string>

#include "httplib.h"

#include "activeprune/error.hpp"
#include "activeprune/quality.hpp"

namespace activeprune {

struct ParsedUrl {
  std::string scheme_host_port;  // e.g. "http://localhost:8080"
  std::string path;              // e.g. "/score"
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::kConfig, "scorer url needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (p.scheme_host_port.size() <= scheme_end + 3) throw Error(ErrorCode::kConfig, "scorer url has no host");
  return p;
}

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(30))
      : url_(parse_url(url)), timeout_(timeout) {}

  std::string post(const std::string& body) override {
    // One client per call keeps concurrent use safe.
    httplib::Client client(url_.scheme_host_port);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Post(url_.path, body, "application/json");
    if (!res) throw Error(ErrorCode::kScorerUnavailable, "HTTP error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(ErrorCode::kScorerUnavailable, "HTTP status " + std::to_string(res->status));
    return res->body;
  }

 private:
  ParsedUrl url_;
  std::chrono::seconds timeout_;
};

}  // namespace activeprune
