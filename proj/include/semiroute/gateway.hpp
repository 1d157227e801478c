#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "semiroute/centroids.hpp"
#include "semiroute/error.hpp"
#include "semiroute/labeler.hpp"

namespace semiroute {

struct BackendEntry {
  std::string endpoint;
  std::chrono::milliseconds timeout{30000};
};

/// Per-domain translation endpoints. Health flags are shared between copies
/// and flipped atomically by the prober.
class BackendRegistry {
 public:
  BackendRegistry() = default;
  BackendRegistry(std::map<DomainLabel, BackendEntry> backends, std::optional<DomainLabel> fallback);

  /// Every index domain needs a backend unless a fallback is set; endpoints
  /// must be unique and the fallback itself registered.
  void validate(const CentroidIndex& index) const;

  bool contains(const DomainLabel& domain) const { return backends_.count(domain) != 0; }
  const BackendEntry& entry(const DomainLabel& domain) const;
  const std::optional<DomainLabel>& fallback() const { return fallback_; }
  std::vector<DomainLabel> domains() const;

  bool healthy(const DomainLabel& domain) const;
  void set_healthy(const DomainLabel& domain, bool healthy) const;

 private:
  struct Slot {
    BackendEntry entry;
    std::shared_ptr<std::atomic<bool>> healthy;
  };
  std::map<DomainLabel, Slot> backends_;
  std::optional<DomainLabel> fallback_;
};

struct ResolvedBackend {
  DomainLabel domain;
  BackendEntry entry;
  bool fallback_used = false;
};

/// The chosen domain's backend if registered and healthy, else the fallback
/// (flagged); unavailable error when neither exists.
ResolvedBackend resolve_backend(const DomainLabel& chosen, const BackendRegistry& registry);
inline ResolvedBackend resolve_backend(const RoutingDecision& decision, const BackendRegistry& registry) {
  return resolve_backend(decision.chosen, registry);
}

struct TranslationRequest {
  std::string text;
  std::string source_lang = "eng_Latn";
  std::string target_lang = "gle_Latn";
  std::optional<DomainLabel> force_domain;
};

struct TranslationResponse {
  std::string translation;
  std::optional<RoutingDecision> routing;
  DomainLabel backend_domain;
  std::int64_t latency_ms = 0;
  bool forced = false;
  bool fallback_used = false;
};

/// Outbound side of the gateway: POST {endpoint}/translate
/// {text, source_lang, target_lang} -> {translation}.
class BackendClient {
 public:
  virtual ~BackendClient() = default;
  /// One outcome per request, in order. Must tolerate concurrent calls.
  virtual std::vector<Outcome<std::string>> translate(const DomainLabel& domain,
                                                      const BackendEntry& backend,
                                                      std::span<const TranslationRequest> requests) = 0;
  virtual bool probe(const BackendEntry& backend) = 0;
};

class HttpBackendClient final : public BackendClient {
 public:
  std::vector<Outcome<std::string>> translate(const DomainLabel& domain, const BackendEntry& backend,
                                              std::span<const TranslationRequest> requests) override;
  bool probe(const BackendEntry& backend) override;
};

enum class EmbedFailurePolicy { error, fallback };

struct GatewayConfig {
  std::string source_lang = "eng_Latn";
  std::string target_lang = "gle_Latn";
  EmbedFailurePolicy embed_failure_policy = EmbedFailurePolicy::error;
  std::size_t max_in_flight_per_backend = 8;
  std::size_t backend_batch_size = 16;
  BatchOptions embed_batching{32, 4};
};

class Gateway {
 public:
  Gateway(std::shared_ptr<const CentroidIndex> index, BackendRegistry registry,
          std::shared_ptr<EmbedderClient> embedder, std::shared_ptr<BackendClient> backends,
          GatewayConfig config = {});
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  TranslationResponse handle_translate(const TranslationRequest& request);
  std::vector<Outcome<TranslationResponse>> handle_batch(std::span<const TranslationRequest> requests);

  /// Index metadata, per-backend health and uptime.
  nlohmann::json health() const;

  /// Probes every backend once and records the result.
  void probe_backends();
  void start_health_prober(std::chrono::milliseconds interval);
  void stop_health_prober();

  const CentroidIndex& index() const { return *index_; }
  const BackendRegistry& registry() const { return registry_; }

 private:
  void validate_request(const TranslationRequest& request) const;
  std::vector<Outcome<std::string>> forward(const ResolvedBackend& backend,
                                            std::span<const TranslationRequest> requests);

  std::shared_ptr<const CentroidIndex> index_;
  BackendRegistry registry_;
  std::shared_ptr<EmbedderClient> embedder_;
  std::shared_ptr<BackendClient> backends_;
  GatewayConfig config_;
  std::map<DomainLabel, std::unique_ptr<std::counting_semaphore<>>> in_flight_;
  std::chrono::steady_clock::time_point started_;
  std::jthread prober_;
};

/// HTTP front end: POST /translate, POST /translate/batch, GET /health.
class GatewayServer {
 public:
  explicit GatewayServer(Gateway& gateway);
  ~GatewayServer();

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status_for(ErrorCategory category);

nlohmann::json to_json(const TranslationRequest& request);
TranslationRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TranslationResponse& response);
TranslationResponse response_from_json(const nlohmann::json& j);
nlohmann::json error_json(const Error& error);

/// Gateway settings file (JSON).
struct GatewaySettings {
  std::string index_path;
  std::optional<std::string> embedder_url;
  std::optional<std::pair<Eigen::Index, std::uint64_t>> mock_embedder;  // dim, seed
  std::map<DomainLabel, BackendEntry> backends;
  std::optional<DomainLabel> fallback_domain;
  GatewayConfig config;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::chrono::milliseconds health_interval{5000};
  std::chrono::milliseconds embedder_timeout{30000};
};

/// `env` looks up environment overrides (SEMIROUTE_EMBED_URL, SEMIROUTE_PORT).
GatewaySettings parse_gateway_settings(const nlohmann::json& j,
                                       const std::function<std::optional<std::string>(const std::string&)>& env);

}  // namespace semiroute
