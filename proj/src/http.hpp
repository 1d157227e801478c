#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

#include "semiroute/error.hpp"

namespace semiroute::http {

struct Target {
  std::string scheme_host_port;  // "http://host:port"
  std::string path_prefix;       // "" or "/prefix"
};

Target parse_url(const std::string& url);

/// POST a JSON body to url + path. Transport failures and timeouts raise
/// `failure_category` / timeout; non-2xx statuses raise `failure_category`.
nlohmann::json post_json(const std::string& url, const std::string& path,
                         const nlohmann::json& body, std::chrono::milliseconds timeout,
                         ErrorCategory failure_category);

/// True when anything answers GET url + path with a status below 500.
bool probe(const std::string& url, const std::string& path, std::chrono::milliseconds timeout);

}  // namespace semiroute::http
