#include "semiroute/gateway.hpp"

#include <doctest.h>

#include <atomic>
#include <future>
#include <mutex>

#include "stub_server.hpp"
#include "synthetic.hpp"

using namespace semiroute;
using namespace std::chrono_literals;

namespace {

/// Echoes "<domain>:<text>"; "fail" items error, "slow" items time out.
class RecordingBackend final : public BackendClient {
 public:
  std::vector<Outcome<std::string>> translate(const DomainLabel& domain, const BackendEntry&,
                                              std::span<const TranslationRequest> requests) override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    {
      std::lock_guard lock(mutex);
      calls.emplace_back(domain, requests.size());
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    std::vector<Outcome<std::string>> out;
    for (const auto& r : requests) {
      if (r.text.find("fail") != std::string::npos) {
        out.emplace_back(Error(ErrorCategory::backend, "backend rejected the input"));
      } else if (r.text.find("slow") != std::string::npos) {
        out.emplace_back(Error(ErrorCategory::timeout, "read timed out"));
      } else {
        out.emplace_back(domain + ":" + r.text);
      }
    }
    --active;
    return out;
  }
  bool probe(const BackendEntry& backend) override { return backend.endpoint.find("down") == std::string::npos; }

  std::size_t call_count() {
    std::lock_guard lock(mutex);
    return calls.size();
  }

  std::mutex mutex;
  std::vector<std::pair<DomainLabel, std::size_t>> calls;
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  std::chrono::milliseconds delay{0};
};

/// Mock embedder that cannot embed texts containing "poison".
class FlakyEmbedder final : public EmbedderClient {
 public:
  FlakyEmbedder(Eigen::Index dim, std::uint64_t seed) : inner_(dim, seed) {}
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
    for (const auto& t : texts) {
      if (t.find("poison") != std::string::npos) throw Error(ErrorCategory::embedder, "sidecar crashed");
    }
    return inner_.embed(texts);
  }
  std::string id() override { return inner_.id(); }

 private:
  MockEmbedder inner_;
};

std::map<DomainLabel, BackendEntry> four_backends(const std::string& prefix = "http://backend-") {
  std::map<DomainLabel, BackendEntry> m;
  for (const auto& d : default_domains()) m[d] = {prefix + d + ":9000", 2000ms};
  return m;
}

struct Fixture {
  std::shared_ptr<MockEmbedder> embedder = std::make_shared<MockEmbedder>(64, 42);
  std::shared_ptr<const CentroidIndex> index;
  testing::SyntheticSet synthetic = testing::make_synthetic(50, 10);

  Fixture() { index = std::make_shared<const CentroidIndex>(build_index(synthetic.train, *embedder).index); }

  std::string sentence(const DomainLabel& d) const {
    for (const auto& [text, domain] : synthetic.held_out) {
      if (domain == d) return text;
    }
    return {};
  }
};

TranslationRequest req(std::string text, std::optional<DomainLabel> force = std::nullopt) {
  TranslationRequest r;
  r.text = std::move(text);
  r.force_domain = std::move(force);
  return r;
}

}  // namespace

TEST_CASE("resolve_backend") {
  BackendRegistry registry(four_backends(), "general");
  const auto legal = resolve_backend("legal", registry);
  CHECK(legal.domain == "legal");
  CHECK(legal.entry.endpoint == "http://backend-legal:9000");
  CHECK_FALSE(legal.fallback_used);

  registry.set_healthy("medical", false);
  const auto medical = resolve_backend("medical", registry);
  CHECK(medical.domain == "general");
  CHECK(medical.fallback_used);

  BackendRegistry no_fallback(four_backends(), std::nullopt);
  no_fallback.set_healthy("medical", false);
  try {
    resolve_backend("medical", no_fallback);
    FAIL("expected unavailable");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::unavailable);
    CHECK(http_status_for(e.category()) == 503);
  }
  SUBCASE("health flags are shared between copies") {
    const BackendRegistry copy = registry;
    registry.set_healthy("legal", false);
    CHECK_FALSE(copy.healthy("legal"));
  }
}

TEST_CASE("registry validation") {
  Fixture f;
  auto partial = four_backends();
  partial.erase("wiki_news");
  CHECK_THROWS_AS(BackendRegistry(partial, std::nullopt).validate(*f.index), Error);
  CHECK_NOTHROW(BackendRegistry(partial, "general").validate(*f.index));
  CHECK_THROWS_AS(BackendRegistry(partial, "wiki_news").validate(*f.index), Error);
  auto duplicate = four_backends();
  duplicate["legal"].endpoint = duplicate["medical"].endpoint;
  CHECK_THROWS_AS(BackendRegistry(duplicate, "general").validate(*f.index), Error);
  auto schemeless = four_backends();
  schemeless["legal"].endpoint = "backend-legal:9000";
  CHECK_THROWS_AS(BackendRegistry(schemeless, "general").validate(*f.index), Error);
}

TEST_CASE("single requests") {
  Fixture f;
  auto backend = std::make_shared<RecordingBackend>();
  Gateway gateway(f.index, BackendRegistry(four_backends(), "general"), f.embedder, backend);

  SUBCASE("routed by content") {
    for (const auto& d : default_domains()) {
      const auto text = f.sentence(d);
      const auto r = gateway.handle_translate(req(text));
      CHECK(r.backend_domain == d);
      CHECK(r.translation == d + ":" + text);
      REQUIRE(r.routing);
      CHECK(r.routing->chosen == d);
      CHECK(r.routing->similarities.size() == 4);
      CHECK_FALSE(r.forced);
    }
  }
  SUBCASE("force_domain bypasses routing") {
    const auto r = gateway.handle_translate(req(f.sentence("medical"), "legal"));
    CHECK(r.backend_domain == "legal");
    CHECK_FALSE(r.routing);
    CHECK(r.forced);
  }
  SUBCASE("invalid requests never reach a backend") {
    CHECK_THROWS_AS(gateway.handle_translate(req("   ")), Error);
    auto wrong_lang = req("hello");
    wrong_lang.target_lang = "fra_Latn";
    CHECK_THROWS_AS(gateway.handle_translate(wrong_lang), Error);
    CHECK_THROWS_AS(gateway.handle_translate(req("hello", "astronomy")), Error);
    CHECK(backend->call_count() == 0);
  }
  SUBCASE("backend timeouts name the domain") {
    try {
      gateway.handle_translate(req("slow", "medical"));
      FAIL("expected a timeout");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::timeout);
      CHECK(std::string(e.what()).find("medical") != std::string::npos);
      CHECK(http_status_for(e.category()) == 504);
    }
  }
  SUBCASE("unhealthy backend falls back") {
    gateway.registry().set_healthy("legal", false);
    const auto r = gateway.handle_translate(req(f.sentence("legal")));
    CHECK(r.backend_domain == "general");
    CHECK(r.fallback_used);
    REQUIRE(r.routing);
    CHECK(r.routing->chosen == "legal");
  }
  SUBCASE("identical text routes identically") {
    const auto a = gateway.handle_translate(req(f.sentence("wiki_news")));
    const auto b = gateway.handle_translate(req(f.sentence("wiki_news")));
    CHECK(a.routing == b.routing);
  }
}

TEST_CASE("embed failures follow the configured policy") {
  Fixture f;
  auto flaky = std::make_shared<FlakyEmbedder>(64, 42);
  auto backend = std::make_shared<RecordingBackend>();
  GatewayConfig config;
  config.embed_failure_policy = EmbedFailurePolicy::fallback;
  Gateway lenient(f.index, BackendRegistry(four_backends(), "general"), flaky, backend, config);
  const auto r = lenient.handle_translate(req("poison pill"));
  CHECK(r.backend_domain == "general");
  CHECK(r.fallback_used);
  CHECK_FALSE(r.routing);

  Gateway strict(f.index, BackendRegistry(four_backends(), "general"), flaky, backend);
  try {
    strict.handle_translate(req("poison pill"));
    FAIL("expected a routing error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::routing);
  }
  SUBCASE("one bad text does not sink its batch") {
    const std::vector<TranslationRequest> batch{req(f.sentence("legal")), req("poison"), req(f.sentence("medical"))};
    const auto out = strict.handle_batch(batch);
    CHECK(out[0]);
    CHECK_FALSE(out[1]);
    CHECK(out[2]);
  }
}

TEST_CASE("gateway refuses an embedder that did not build the index") {
  Fixture f;
  CHECK_THROWS_AS(Gateway(f.index, BackendRegistry(four_backends(), "general"), std::make_shared<MockEmbedder>(64, 7),
                          std::make_shared<RecordingBackend>()),
                  Error);
}

TEST_CASE("batches") {
  Fixture f;
  auto backend = std::make_shared<RecordingBackend>();
  Gateway gateway(f.index, BackendRegistry(four_backends(), "general"), f.embedder, backend);

  SUBCASE("grouped per domain, order preserved") {
    const std::vector<TranslationRequest> batch{req(f.sentence("legal")), req(f.sentence("medical")),
                                                req(f.sentence("legal") + " " + f.sentence("legal"))};
    const auto out = gateway.handle_batch(batch);
    CHECK(backend->call_count() == 2);
    REQUIRE(out.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      REQUIRE(out[i]);
      CHECK(out[i].value().translation.ends_with(batch[i].text));
    }
    CHECK(out[0].value().backend_domain == "legal");
    CHECK(out[1].value().backend_domain == "medical");
    CHECK(out[2].value().backend_domain == "legal");
  }
  SUBCASE("batch of one matches a single request") {
    const std::vector<TranslationRequest> one{req(f.sentence("general"))};
    const auto batched = gateway.handle_batch(one).front().value();
    const auto single = gateway.handle_translate(one.front());
    CHECK(batched.translation == single.translation);
    CHECK(batched.routing == single.routing);
    CHECK(batched.backend_domain == single.backend_domain);
  }
  SUBCASE("per-item errors stay in place") {
    const std::vector<TranslationRequest> batch{req(f.sentence("legal")), req(f.sentence("medical")),
                                                req("fail " + f.sentence("wiki_news")), req(f.sentence("general")),
                                                req(f.sentence("legal"))};
    const auto out = gateway.handle_batch(batch);
    REQUIRE(out.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(static_cast<bool>(out[i]) == (i != 2));
    CHECK(out[2].error().category() == ErrorCategory::backend);
  }
  SUBCASE("large groups are chunked") {
    GatewayConfig config;
    config.backend_batch_size = 4;
    Gateway chunked(f.index, BackendRegistry(four_backends(), "general"), f.embedder, backend, config);
    std::vector<TranslationRequest> batch(10, req(f.sentence("medical")));
    const auto out = chunked.handle_batch(batch);
    CHECK(backend->call_count() == 3);
    for (const auto& o : out) CHECK(o.value().backend_domain == "medical");
  }
  SUBCASE("validation failures are isolated") {
    const std::vector<TranslationRequest> batch{req(""), req(f.sentence("legal"))};
    const auto out = gateway.handle_batch(batch);
    CHECK(out[0].error().category() == ErrorCategory::validation);
    CHECK(out[1]);
  }
}

TEST_CASE("in-flight cap per backend") {
  Fixture f;
  auto backend = std::make_shared<RecordingBackend>();
  backend->delay = 20ms;
  GatewayConfig config;
  config.max_in_flight_per_backend = 2;
  Gateway gateway(f.index, BackendRegistry(four_backends(), "general"), f.embedder, backend, config);
  std::vector<std::future<TranslationResponse>> futures;
  for (int i = 0; i < 12; ++i) {
    futures.push_back(std::async(std::launch::async, [&] { return gateway.handle_translate(req("x", "legal")); }));
  }
  for (auto& fut : futures) CHECK(fut.get().backend_domain == "legal");
  CHECK(backend->peak.load() <= 2);
  CHECK(backend->peak.load() >= 1);
}

TEST_CASE("health reporting") {
  Fixture f;
  std::vector<std::unique_ptr<testing::StubServer>> stubs;
  std::map<DomainLabel, BackendEntry> backends;
  for (const auto& d : default_domains()) {
    auto stub = std::make_unique<testing::StubServer>();
    stub->server().Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("{}", "application/json"); });
    stub->server().Post("/translate", [d](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      res.set_content(nlohmann::json{{"translation", d + ":" + body.at("text").get<std::string>()}}.dump(), "application/json");
    });
    stub->start();
    backends[d] = {stub->url(), 2000ms};
    stubs.push_back(std::move(stub));
  }
  Gateway gateway(f.index, BackendRegistry(backends, "general"), f.embedder, std::make_shared<HttpBackendClient>());
  gateway.probe_backends();
  auto h = gateway.health();
  CHECK(h["status"] == "ok");
  CHECK(h["index"]["domains"].size() == 4);
  for (const auto& d : default_domains()) CHECK(h["backends"][d]["healthy"] == true);

  stubs[2]->stop();  // medical
  gateway.probe_backends();
  h = gateway.health();
  CHECK(h["status"] == "degraded");
  CHECK(h["backends"]["medical"]["healthy"] == false);
  CHECK(h["backends"]["legal"]["healthy"] == true);

  SUBCASE("requests for a down backend are served by the fallback") {
    const auto r = gateway.handle_translate(req(f.sentence("medical")));
    CHECK(r.backend_domain == "general");
    CHECK(r.translation == "general:" + f.sentence("medical"));
  }
  SUBCASE("periodic prober restores health") {
    gateway.registry().set_healthy("legal", false);
    gateway.start_health_prober(20ms);
    for (int i = 0; i < 100 && !gateway.registry().healthy("legal"); ++i) std::this_thread::sleep_for(10ms);
    gateway.stop_health_prober();
    CHECK(gateway.registry().healthy("legal"));
    CHECK_FALSE(gateway.registry().healthy("medical"));
  }
}

TEST_CASE("HTTP backend contract") {
  testing::StubServer stub;
  std::mutex mutex;
  nlohmann::json seen;
  stub.server().Post("/v1/translate", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    {
      std::lock_guard lock(mutex);
      seen = body;
    }
    const auto text = body.at("text").get<std::string>();
    if (text == "sleep") std::this_thread::sleep_for(600ms);
    if (text == "broken") {
      res.set_content(R"({"nope": 1})", "application/json");
      return;
    }
    if (text == "crash") {
      res.status = 500;
      return;
    }
    res.set_content(nlohmann::json{{"translation", "GA " + text}}.dump(), "application/json");
  });
  stub.start();
  HttpBackendClient client;
  const BackendEntry entry{stub.url() + "/v1/", 300ms};
  const std::vector<TranslationRequest> requests{req("hello"), req("broken"), req("crash"), req("sleep")};
  const auto out = client.translate("legal", entry, requests);
  REQUIRE(out.size() == 4);
  CHECK(out[0].value() == "GA hello");
  CHECK(out[1].error().category() == ErrorCategory::backend);
  CHECK(out[2].error().category() == ErrorCategory::backend);
  CHECK(out[3].error().category() == ErrorCategory::timeout);
  CHECK(seen["source_lang"] == "eng_Latn");
  CHECK(seen["target_lang"] == "gle_Latn");
  CHECK_FALSE(seen.contains("force_domain"));
  CHECK_FALSE(client.probe({"http://127.0.0.1:1", 200ms}));
}

TEST_CASE("HTTP front end") {
  Fixture f;
  auto backend = std::make_shared<RecordingBackend>();
  Gateway gateway(f.index, BackendRegistry(four_backends(), "general"), f.embedder, backend);
  GatewayServer server(gateway);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  auto ok = client.Post("/translate", to_json(req(f.sentence("legal"))).dump(), "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  const auto response = response_from_json(nlohmann::json::parse(ok->body));
  CHECK(response.backend_domain == "legal");
  CHECK(response.routing->chosen == "legal");

  auto empty = client.Post("/translate", R"({"text": ""})", "application/json");
  REQUIRE(empty);
  CHECK(empty->status == 400);
  CHECK(nlohmann::json::parse(empty->body)["error"]["category"] == "validation");

  auto garbage = client.Post("/translate", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);

  const nlohmann::json batch = {{"requests", {to_json(req(f.sentence("medical"))), nlohmann::json{{"txt", "x"}},
                                              to_json(req("fail", "wiki_news"))}}};
  auto b = client.Post("/translate/batch", batch.dump(), "application/json");
  REQUIRE(b);
  CHECK(b->status == 200);
  const auto results = nlohmann::json::parse(b->body)["results"];
  REQUIRE(results.size() == 3);
  CHECK(results[0]["backend_domain"] == "medical");
  CHECK(results[1]["error"]["category"] == "validation");
  CHECK(results[2]["error"]["category"] == "backend");

  auto empty_batch = client.Post("/translate/batch", "[]", "application/json");
  REQUIRE(empty_batch);
  CHECK(empty_batch->status == 400);

  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(nlohmann::json::parse(health->body)["index"]["embedder_id"] == f.embedder->id());
  server.stop();
}

TEST_CASE("settings and wire helpers") {
  const nlohmann::json j = {{"index_path", "index.bin"},
                            {"embedder", {{"mock", {{"dim", 64}, {"seed", 42}}}}},
                            {"registry", {{"legal", {{"endpoint", "http://l:1"}, {"timeout_ms", 500}}}}},
                            {"fallback_domain", "legal"},
                            {"port", 9000}};
  auto none = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
  const auto s = parse_gateway_settings(j, none);
  CHECK(s.port == 9000);
  CHECK(s.mock_embedder->first == 64);
  CHECK(s.backends.at("legal").timeout == 500ms);
  CHECK(s.config.embed_failure_policy == EmbedFailurePolicy::error);

  auto env = [](const std::string& key) -> std::optional<std::string> {
    if (key == "SEMIROUTE_PORT") return "7001";
    if (key == "SEMIROUTE_EMBED_URL") return "http://embed:8000";
    return std::nullopt;
  };
  const auto o = parse_gateway_settings(j, env);
  CHECK(o.port == 7001);
  CHECK(o.embedder_url == "http://embed:8000");
  CHECK_FALSE(o.mock_embedder);

  auto bad_port = [](const std::string& key) -> std::optional<std::string> {
    return key == "SEMIROUTE_PORT" ? std::optional<std::string>("http") : std::nullopt;
  };
  CHECK_THROWS_AS(parse_gateway_settings(j, bad_port), Error);
  auto no_embedder = j;
  no_embedder.erase("embedder");
  CHECK_THROWS_AS(parse_gateway_settings(no_embedder, none), Error);

  CHECK(http_status_for(ErrorCategory::validation) == 400);
  CHECK(http_status_for(ErrorCategory::backend) == 502);
  CHECK(http_status_for(ErrorCategory::io) == 500);

  auto r = req("Dia duit", "legal");
  CHECK(request_from_json(to_json(r)).force_domain == "legal");
  CHECK(request_from_json(nlohmann::json{{"text", "x"}}).source_lang == "eng_Latn");
  CHECK_THROWS_AS(request_from_json(nlohmann::json{{"text", 3}}), Error);
}
