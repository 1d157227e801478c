#include "http.hpp"

#include <httplib.h>

namespace semiroute::http {

Target parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCategory::config, "URL '" + url + "' lacks a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Target target;
  if (path_start == std::string::npos) {
    target.scheme_host_port = url;
  } else {
    target.scheme_host_port = url.substr(0, path_start);
    target.path_prefix = url.substr(path_start);
    while (!target.path_prefix.empty() && target.path_prefix.back() == '/') {
      target.path_prefix.pop_back();
    }
  }
  return target;
}

namespace {

void set_timeouts(httplib::Client& client, std::chrono::milliseconds timeout) {
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
}

}  // namespace

nlohmann::json post_json(const std::string& url, const std::string& path,
                         const nlohmann::json& body, std::chrono::milliseconds timeout,
                         ErrorCategory failure_category) {
  const Target target = parse_url(url);
  httplib::Client client(target.scheme_host_port);
  set_timeouts(client, timeout);
  const std::string full_path = target.path_prefix + path;
  auto result = client.Post(full_path, body.dump(), "application/json");
  if (!result) {
    const auto err = result.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write ||
        err == httplib::Error::ConnectionTimeout) {
      throw Error(ErrorCategory::timeout,
                  "POST " + url + path + " timed out or stalled: " + httplib::to_string(err));
    }
    throw Error(failure_category, "POST " + url + path + " failed: " + httplib::to_string(err));
  }
  if (result->status < 200 || result->status >= 300) {
    throw Error(failure_category, "POST " + url + path + " returned HTTP " +
                                      std::to_string(result->status) + ": " + result->body);
  }
  try {
    return nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(failure_category, "POST " + url + path + " returned malformed JSON: " + e.what());
  }
}

bool probe(const std::string& url, const std::string& path, std::chrono::milliseconds timeout) {
  try {
    const Target target = parse_url(url);
    httplib::Client client(target.scheme_host_port);
    set_timeouts(client, timeout);
    auto result = client.Get(target.path_prefix + path);
    return result && result->status < 500;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace semiroute::http
