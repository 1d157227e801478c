#include "semiroute/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <set>

#include "http.hpp"
#include "semiroute/corpus.hpp"

namespace semiroute {

// ---------------------------------------------------------------------------
// Registry

BackendRegistry::BackendRegistry(std::map<DomainLabel, BackendEntry> backends,
                                 std::optional<DomainLabel> fallback)
    : fallback_(std::move(fallback)) {
  for (auto& [domain, entry] : backends) {
    backends_.emplace(domain, Slot{std::move(entry), std::make_shared<std::atomic<bool>>(true)});
  }
}

void BackendRegistry::validate(const CentroidIndex& index) const {
  std::set<std::string> endpoints;
  for (const auto& [domain, slot] : backends_) {
    if (slot.entry.endpoint.empty()) {
      throw Error(ErrorCategory::config, "backend for '" + domain + "' has no endpoint");
    }
    http::parse_url(slot.entry.endpoint);
    if (!endpoints.insert(slot.entry.endpoint).second) {
      throw Error(ErrorCategory::config, "endpoint '" + slot.entry.endpoint + "' is registered twice");
    }
  }
  if (fallback_ && !contains(*fallback_)) {
    throw Error(ErrorCategory::config, "fallback domain '" + *fallback_ + "' has no backend");
  }
  if (!fallback_) {
    for (const auto& domain : index.domains()) {
      if (!contains(domain)) {
        throw Error(ErrorCategory::config,
                    "index domain '" + domain + "' has no backend and no fallback is configured");
      }
    }
  }
}

const BackendEntry& BackendRegistry::entry(const DomainLabel& domain) const {
  auto it = backends_.find(domain);
  if (it == backends_.end()) {
    throw Error(ErrorCategory::unavailable, "no backend registered for '" + domain + "'");
  }
  return it->second.entry;
}

std::vector<DomainLabel> BackendRegistry::domains() const {
  std::vector<DomainLabel> out;
  for (const auto& [domain, slot] : backends_) out.push_back(domain);
  return out;
}

bool BackendRegistry::healthy(const DomainLabel& domain) const {
  auto it = backends_.find(domain);
  return it != backends_.end() && it->second.healthy->load();
}

void BackendRegistry::set_healthy(const DomainLabel& domain, bool healthy) const {
  auto it = backends_.find(domain);
  if (it != backends_.end()) it->second.healthy->store(healthy);
}

ResolvedBackend resolve_backend(const DomainLabel& chosen, const BackendRegistry& registry) {
  if (registry.contains(chosen) && registry.healthy(chosen)) {
    return {chosen, registry.entry(chosen), false};
  }
  const auto& fallback = registry.fallback();
  if (fallback && registry.contains(*fallback) && registry.healthy(*fallback)) {
    return {*fallback, registry.entry(*fallback), true};
  }
  throw Error(ErrorCategory::unavailable,
              "no healthy backend for '" + chosen + "'" + (fallback ? " and fallback '" + *fallback + "' is down" : " and no fallback configured"));
}

// ---------------------------------------------------------------------------
// HTTP backend client

std::vector<Outcome<std::string>> HttpBackendClient::translate(
    const DomainLabel& domain, const BackendEntry& backend, std::span<const TranslationRequest> requests) {
  std::vector<Outcome<std::string>> out;
  out.reserve(requests.size());
  for (const auto& request : requests) {
    try {
      const nlohmann::json body = {{"text", request.text},
                                   {"source_lang", request.source_lang},
                                   {"target_lang", request.target_lang}};
      const auto reply = http::post_json(backend.endpoint, "/translate", body, backend.timeout,
                                         ErrorCategory::backend);
      auto translation = reply.find("translation");
      if (translation == reply.end() || !translation->is_string()) {
        throw Error(ErrorCategory::backend, "backend reply lacks a 'translation' string");
      }
      out.emplace_back(translation->get<std::string>());
    } catch (const Error& e) {
      const std::string message = "backend '" + domain + "': " + e.what();
      out.emplace_back(Error(e.category(), message));
    }
  }
  return out;
}

bool HttpBackendClient::probe(const BackendEntry& backend) {
  return http::probe(backend.endpoint, "/health", std::min(backend.timeout, std::chrono::milliseconds(2000)));
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<const CentroidIndex> index, BackendRegistry registry,
                 std::shared_ptr<EmbedderClient> embedder, std::shared_ptr<BackendClient> backends,
                 GatewayConfig config)
    : index_(std::move(index)),
      registry_(std::move(registry)),
      embedder_(std::move(embedder)),
      backends_(std::move(backends)),
      config_(std::move(config)),
      started_(std::chrono::steady_clock::now()) {
  if (!index_ || !embedder_ || !backends_) {
    throw Error(ErrorCategory::config, "gateway needs an index, an embedder and a backend client");
  }
  registry_.validate(*index_);
  const std::string id = embedder_->id();
  if (id != index_->embedder_id()) {
    throw Error(ErrorCategory::config, "embedder '" + id + "' does not match the index embedder '" +
                                           index_->embedder_id() + "'");
  }
  const auto cap = static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight_per_backend));
  for (const auto& domain : registry_.domains()) {
    in_flight_.emplace(domain, std::make_unique<std::counting_semaphore<>>(cap));
  }
}

Gateway::~Gateway() { stop_health_prober(); }

void Gateway::validate_request(const TranslationRequest& request) const {
  if (normalize(request.text).empty()) {
    throw Error(ErrorCategory::validation, "text must be non-empty");
  }
  if (request.source_lang != config_.source_lang || request.target_lang != config_.target_lang) {
    throw Error(ErrorCategory::validation, "unsupported language pair " + request.source_lang + " -> " +
                                               request.target_lang + " (serving " + config_.source_lang +
                                               " -> " + config_.target_lang + ")");
  }
  if (request.force_domain && !registry_.contains(*request.force_domain)) {
    throw Error(ErrorCategory::validation, "forced domain '" + *request.force_domain + "' has no backend");
  }
}

std::vector<Outcome<std::string>> Gateway::forward(const ResolvedBackend& backend,
                                                   std::span<const TranslationRequest> requests) {
  auto& gate = *in_flight_.at(backend.domain);
  gate.acquire();
  std::vector<Outcome<std::string>> results;
  try {
    results = backends_->translate(backend.domain, backend.entry, requests);
  } catch (const Error& e) {
    results.assign(requests.size(), Outcome<std::string>(Error(e.category(), "backend '" + backend.domain + "': " + e.what())));
  } catch (const std::exception& e) {
    results.assign(requests.size(), Outcome<std::string>(Error(ErrorCategory::backend, "backend '" + backend.domain + "': " + e.what())));
  }
  gate.release();
  if (results.size() != requests.size()) {
    results.assign(requests.size(), Outcome<std::string>(Error(ErrorCategory::backend, "backend '" + backend.domain + "' returned a misaligned batch")));
  }
  return results;
}

TranslationResponse Gateway::handle_translate(const TranslationRequest& request) {
  auto results = handle_batch(std::span<const TranslationRequest>(&request, 1));
  return results.front().value();
}

std::vector<Outcome<TranslationResponse>> Gateway::handle_batch(std::span<const TranslationRequest> requests) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = requests.size();

  struct Plan {
    std::optional<Error> error;
    std::optional<RoutingDecision> routing;
    std::optional<ResolvedBackend> backend;
    bool forced = false;
    bool routing_failed = false;
    std::optional<std::string> translation;
  };
  std::vector<Plan> plans(n);

  // Validation, then routing of everything not forced.
  std::vector<std::size_t> to_route;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      validate_request(requests[i]);
      if (requests[i].force_domain) {
        plans[i].forced = true;
      } else {
        to_route.push_back(i);
      }
    } catch (const Error& e) {
      plans[i].error = e;
    }
  }
  if (!to_route.empty()) {
    std::vector<std::string> texts;
    for (auto i : to_route) texts.push_back(requests[i].text);
    try {
      auto decisions = route_batch(texts, *index_, *embedder_, config_.embed_batching);
      for (std::size_t k = 0; k < to_route.size(); ++k) plans[to_route[k]].routing = std::move(decisions[k]);
    } catch (const Error&) {
      // Retry one at a time so a single bad input does not sink the batch.
      for (auto i : to_route) {
        try {
          plans[i].routing = route(requests[i].text, *index_, *embedder_);
        } catch (const Error& e) {
          if (config_.embed_failure_policy == EmbedFailurePolicy::fallback && registry_.fallback()) {
            plans[i].routing_failed = true;
          } else {
            plans[i].error = Error(e.category() == ErrorCategory::config ? ErrorCategory::config : ErrorCategory::routing,
                                   e.what());
          }
        }
      }
    }
  }

  // Resolve backends and group by the domain actually served.
  std::map<DomainLabel, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    auto& plan = plans[i];
    if (plan.error) continue;
    try {
      if (plan.forced) {
        plan.backend = resolve_backend(*requests[i].force_domain, registry_);
      } else if (plan.routing_failed) {
        plan.backend = resolve_backend(*registry_.fallback(), registry_);
        plan.backend->fallback_used = true;
      } else {
        plan.backend = resolve_backend(*plan.routing, registry_);
      }
      groups[plan.backend->domain].push_back(i);
    } catch (const Error& e) {
      plan.error = e;
    }
  }

  auto run_group = [&](const DomainLabel& domain, const std::vector<std::size_t>& members) {
    const std::size_t chunk = std::max<std::size_t>(1, config_.backend_batch_size);
    for (std::size_t begin = 0; begin < members.size(); begin += chunk) {
      const std::size_t end = std::min(members.size(), begin + chunk);
      std::vector<TranslationRequest> outbound;
      for (std::size_t k = begin; k < end; ++k) outbound.push_back(requests[members[k]]);
      const ResolvedBackend backend = *plans[members[begin]].backend;
      auto results = forward(backend, outbound);
      for (std::size_t k = begin; k < end; ++k) {
        auto& result = results[k - begin];
        if (result) {
          plans[members[k]].translation = std::move(result.value());
        } else {
          const auto& e = result.error();
          plans[members[k]].error = Error(e.category(), e.category() == ErrorCategory::timeout
                                                            ? "backend '" + domain + "' timed out: " + e.what()
                                                            : std::string(e.what()));
        }
      }
    }
  };
  if (groups.size() == 1) {
    run_group(groups.begin()->first, groups.begin()->second);
  } else if (!groups.empty()) {
    std::vector<std::jthread> workers;
    for (const auto& [domain, members] : groups) {
      workers.emplace_back([&, &d = domain, &m = members] { run_group(d, m); });
    }
  }

  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  std::vector<Outcome<TranslationResponse>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& plan = plans[i];
    if (plan.error) {
      out.emplace_back(std::move(*plan.error));
      continue;
    }
    TranslationResponse response;
    response.translation = std::move(*plan.translation);
    response.routing = std::move(plan.routing);
    response.backend_domain = plan.backend->domain;
    response.latency_ms = latency;
    response.forced = plan.forced;
    response.fallback_used = plan.backend->fallback_used;
    out.emplace_back(std::move(response));
  }
  return out;
}

nlohmann::json Gateway::health() const {
  nlohmann::json backends = nlohmann::json::object();
  bool all_healthy = true;
  for (const auto& domain : registry_.domains()) {
    const bool ok = registry_.healthy(domain);
    all_healthy = all_healthy && ok;
    backends[domain] = {{"endpoint", registry_.entry(domain).endpoint}, {"healthy", ok}};
  }
  const auto uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {{"status", all_healthy ? "ok" : "degraded"},
          {"uptime_s", uptime},
          {"index", describe(*index_)},
          {"backends", backends},
          {"fallback_domain", registry_.fallback() ? nlohmann::json(*registry_.fallback()) : nlohmann::json(nullptr)}};
}

void Gateway::probe_backends() {
  for (const auto& domain : registry_.domains()) {
    registry_.set_healthy(domain, backends_->probe(registry_.entry(domain)));
  }
}

void Gateway::start_health_prober(std::chrono::milliseconds interval) {
  stop_health_prober();
  prober_ = std::jthread([this, interval](std::stop_token stop) {
    std::mutex m;
    std::condition_variable_any cv;
    while (!stop.stop_requested()) {
      probe_backends();
      std::unique_lock lock(m);
      cv.wait_for(lock, stop, interval, [] { return false; });
    }
  });
}

void Gateway::stop_health_prober() {
  if (prober_.joinable()) {
    prober_.request_stop();
    prober_.join();
  }
}

// ---------------------------------------------------------------------------
// Wire formats

int http_status_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::validation:
    case ErrorCategory::parse:
    case ErrorCategory::degenerate_input:
      return 400;
    case ErrorCategory::unavailable: return 503;
    case ErrorCategory::timeout: return 504;
    case ErrorCategory::backend:
    case ErrorCategory::routing:
    case ErrorCategory::embedder:
    case ErrorCategory::classifier:
      return 502;
    default:
      return 500;
  }
}

nlohmann::json to_json(const TranslationRequest& request) {
  nlohmann::json j = {{"text", request.text},
                      {"source_lang", request.source_lang},
                      {"target_lang", request.target_lang}};
  if (request.force_domain) j["force_domain"] = *request.force_domain;
  return j;
}

TranslationRequest request_from_json(const nlohmann::json& j) {
  try {
    TranslationRequest request;
    request.text = j.at("text").get<std::string>();
    request.source_lang = j.value("source_lang", request.source_lang);
    request.target_lang = j.value("target_lang", request.target_lang);
    if (j.contains("force_domain") && !j.at("force_domain").is_null()) {
      request.force_domain = j.at("force_domain").get<std::string>();
    }
    return request;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::validation, std::string("malformed translation request: ") + e.what());
  }
}

nlohmann::json to_json(const TranslationResponse& response) {
  return {{"translation", response.translation},
          {"routing", response.routing ? to_json(*response.routing) : nlohmann::json(nullptr)},
          {"backend_domain", response.backend_domain},
          {"latency_ms", response.latency_ms},
          {"forced", response.forced},
          {"fallback_used", response.fallback_used}};
}

TranslationResponse response_from_json(const nlohmann::json& j) {
  try {
    TranslationResponse response;
    response.translation = j.at("translation").get<std::string>();
    if (!j.at("routing").is_null()) response.routing = routing_from_json(j.at("routing"));
    response.backend_domain = j.at("backend_domain").get<std::string>();
    response.latency_ms = j.at("latency_ms").get<std::int64_t>();
    response.forced = j.value("forced", false);
    response.fallback_used = j.value("fallback_used", false);
    return response;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::parse, std::string("malformed translation response: ") + e.what());
  }
}

nlohmann::json error_json(const Error& error) {
  return {{"error", {{"category", std::string(category_name(error.category()))}, {"message", error.what()}}}};
}

// ---------------------------------------------------------------------------
// HTTP server

struct GatewayServer::Impl {
  Gateway& gateway;
  httplib::Server server;
  std::jthread thread;

  explicit Impl(Gateway& g) : gateway(g) {
    auto reply_error = [](httplib::Response& res, const Error& e) {
      res.status = http_status_for(e.category());
      res.set_content(error_json(e).dump(), "application/json");
    };
    server.Post("/translate", [this, reply_error](const httplib::Request& req, httplib::Response& res) {
      try {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCategory::validation, std::string("request body is not JSON: ") + e.what());
        }
        const auto response = gateway.handle_translate(request_from_json(body));
        res.set_content(to_json(response).dump(), "application/json");
      } catch (const Error& e) {
        reply_error(res, e);
      }
    });
    server.Post("/translate/batch", [this, reply_error](const httplib::Request& req, httplib::Response& res) {
      try {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCategory::validation, std::string("request body is not JSON: ") + e.what());
        }
        const auto& items = body.is_array() ? body : body.at("requests");
        if (!items.is_array() || items.empty()) {
          throw Error(ErrorCategory::validation, "batch must be a non-empty array of requests");
        }
        std::vector<Outcome<TranslationRequest>> parsed;
        std::vector<TranslationRequest> valid;
        for (const auto& item : items) {
          try {
            valid.push_back(request_from_json(item));
            parsed.emplace_back(valid.back());
          } catch (const Error& e) {
            parsed.emplace_back(e);
          }
        }
        auto outcomes = gateway.handle_batch(valid);
        nlohmann::json results = nlohmann::json::array();
        std::size_t next = 0;
        for (const auto& p : parsed) {
          if (!p) {
            results.push_back(error_json(p.error()));
            continue;
          }
          const auto& outcome = outcomes[next++];
          results.push_back(outcome ? to_json(outcome.value()) : error_json(outcome.error()));
        }
        res.set_content(nlohmann::json{{"results", results}}.dump(), "application/json");
      } catch (const Error& e) {
        reply_error(res, e);
      } catch (const nlohmann::json::exception& e) {
        reply_error(res, Error(ErrorCategory::validation, e.what()));
      }
    });
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(gateway.health().dump(), "application/json");
    });
  }
};

GatewayServer::GatewayServer(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    throw Error(ErrorCategory::io, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::jthread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void GatewayServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorCategory::io, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void GatewayServer::stop() {
  if (impl_) {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
  }
}

// ---------------------------------------------------------------------------
// Settings

GatewaySettings parse_gateway_settings(const nlohmann::json& j,
                                       const std::function<std::optional<std::string>(const std::string&)>& env) {
  GatewaySettings s;
  try {
    s.index_path = j.at("index_path").get<std::string>();
    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      if (e.contains("url")) s.embedder_url = e.at("url").get<std::string>();
      if (e.contains("mock")) {
        s.mock_embedder = std::make_pair(e.at("mock").at("dim").get<Eigen::Index>(),
                                         e.at("mock").at("seed").get<std::uint64_t>());
      }
      s.embedder_timeout = std::chrono::milliseconds(e.value("timeout_ms", 30000));
    }
    for (const auto& [domain, b] : j.at("registry").items()) {
      s.backends[domain] = {b.at("endpoint").get<std::string>(),
                            std::chrono::milliseconds(b.value("timeout_ms", 30000))};
    }
    if (j.contains("fallback_domain") && !j.at("fallback_domain").is_null()) {
      s.fallback_domain = j.at("fallback_domain").get<std::string>();
    }
    const std::string policy = j.value("embed_failure_policy", std::string("error"));
    if (policy == "error") {
      s.config.embed_failure_policy = EmbedFailurePolicy::error;
    } else if (policy == "fallback") {
      s.config.embed_failure_policy = EmbedFailurePolicy::fallback;
    } else {
      throw Error(ErrorCategory::config, "embed_failure_policy must be 'error' or 'fallback'");
    }
    if (j.contains("languages")) {
      s.config.source_lang = j.at("languages").value("source", s.config.source_lang);
      s.config.target_lang = j.at("languages").value("target", s.config.target_lang);
    }
    s.config.max_in_flight_per_backend = j.value("max_in_flight_per_backend", s.config.max_in_flight_per_backend);
    s.config.backend_batch_size = j.value("backend_batch_size", s.config.backend_batch_size);
    s.host = j.value("host", s.host);
    s.port = j.value("port", s.port);
    s.health_interval = std::chrono::milliseconds(j.value("health_interval_ms", 5000));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("bad gateway settings: ") + e.what());
  }
  if (auto url = env("SEMIROUTE_EMBED_URL")) {
    s.embedder_url = *url;
    s.mock_embedder.reset();
  }
  if (auto port = env("SEMIROUTE_PORT")) {
    try {
      s.port = std::stoi(*port);
    } catch (const std::exception&) {
      throw Error(ErrorCategory::config, "SEMIROUTE_PORT is not a number: '" + *port + "'");
    }
  }
  if (!s.embedder_url && !s.mock_embedder) {
    throw Error(ErrorCategory::config, "gateway settings need an embedder url or mock embedder");
  }
  return s;
}

}  // namespace semiroute
