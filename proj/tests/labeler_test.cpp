#include "semiroute/labeler.hpp"

#include <doctest.h>

#include <atomic>
#include <mutex>

#include "semiroute/error.hpp"
#include "semiroute/util.hpp"
#include "stub_server.hpp"

using namespace semiroute;

namespace {

SentencePair sp(std::string s, std::string origin = "test") { return {std::move(s), "ga", std::move(origin), 1}; }

/// Returns fixed score rows keyed by source text.
class TableClassifier final : public ClassifierClient {
 public:
  explicit TableClassifier(std::map<std::string, std::map<DomainLabel, double>> table) : table_(std::move(table)) {}

  std::vector<Classification> classify(std::span<const std::string> texts, std::span<const DomainLabel> labels,
                                       bool multi_label) override {
    ++calls;
    last_multi_label = multi_label;
    std::vector<Classification> out;
    for (const auto& t : texts) {
      if (t.find("boom") != std::string::npos) throw Error(ErrorCategory::classifier, "model crashed on '" + t + "'");
      Classification c;
      for (const auto& l : labels) c.scores[l] = table_.at(t).count(l) ? table_.at(t).at(l) : 0.0;
      out.push_back(std::move(c));
    }
    return out;
  }

  std::atomic<int> calls{0};
  std::atomic<bool> last_multi_label{false};

 private:
  std::map<std::string, std::map<DomainLabel, double>> table_;
};

Classification scores(std::map<DomainLabel, double> s) { return Classification{std::move(s)}; }

}  // namespace

TEST_CASE("default domain set") {
  CHECK(default_domains() == std::vector<DomainLabel>{"general", "legal", "medical", "wiki_news"});
  const LabelerConfig config;
  CHECK(config.threshold == 0.45);
  CHECK(config.fallback_domain == "general");
}

TEST_CASE("regime A chooses the argmax") {
  const auto& domains = default_domains();
  CHECK(choose_argmax(scores({{"general", 0.7}, {"legal", 0.2}, {"medical", 0.05}, {"wiki_news", 0.05}}), domains).domain ==
        "general");
  SUBCASE("ties go to the configured order") {
    const auto tie = scores({{"general", 0.0}, {"legal", 0.5}, {"medical", 0.5}, {"wiki_news", 0.0}});
    CHECK(choose_argmax(tie, domains).domain == "legal");
    const std::vector<DomainLabel> reordered{"medical", "legal", "general", "wiki_news"};
    CHECK(choose_argmax(tie, reordered).domain == "medical");
  }
  SUBCASE("mock classifier keyword scoring") {
    MockClassifier mock(std::map<DomainLabel, std::vector<std::string>>{{"legal", {"court"}}});
    const std::vector<SentencePair> pairs{sp("the court ruled")};
    const auto result = label_regime_a(pairs, domains, mock);
    REQUIRE(result.labeled.size() == 1);
    CHECK(result.labeled[0].domain == "legal");
    // Single-label mode renormalizes: legal holds all the mass.
    CHECK(result.labeled[0].confidence == doctest::Approx(1.0));
    CHECK(result.labeled[0].regime == Regime::four_domain);
  }
}

TEST_CASE("mock classifier scores are matched-keyword fractions") {
  MockClassifier mock({{"legal", {"court", "Act", "judge"}}, {"medical", {"covid"}}});
  const std::vector<std::string> texts{"The COURT applied the act", "nothing here"};
  const std::vector<DomainLabel> labels{"legal", "medical", "wiki_news"};
  const auto multi = mock.classify(texts, labels, true);
  CHECK(multi[0].scores.at("legal") == doctest::Approx(2.0 / 3.0));
  CHECK(multi[0].scores.at("medical") == 0.0);
  CHECK(multi[0].scores.at("wiki_news") == 0.0);
  const auto single = mock.classify(texts, labels, false);
  CHECK(single[0].scores.at("legal") == doctest::Approx(1.0));
  CHECK(single[1].scores.at("medical") == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(mock.classify(texts, std::span<const DomainLabel>{}, true), Error);
}

TEST_CASE("regime B threshold semantics") {
  const LabelerConfig config;
  SUBCASE("a score above the threshold wins") {
    const auto c = choose_with_threshold(scores({{"legal", 0.50}, {"medical", 0.30}, {"wiki_news", 0.10}}), config);
    CHECK(c.domain == "legal");
    CHECK(c.confidence == 0.50);
  }
  SUBCASE("nothing exceeds the threshold") {
    const auto c = choose_with_threshold(scores({{"legal", 0.44}, {"medical", 0.44}, {"wiki_news", 0.44}}), config);
    CHECK(c.domain == "general");
    CHECK(c.confidence == doctest::Approx(0.56));
  }
  SUBCASE("exactly at the threshold falls back") {
    const auto c = choose_with_threshold(scores({{"legal", 0.45}, {"medical", 0.0}, {"wiki_news", 0.0}}), config);
    CHECK(c.domain == "general");
  }
}

TEST_CASE("regime B law on random score vectors") {
  const LabelerConfig config;
  SeededRng rng(2024);
  for (int i = 0; i < 2000; ++i) {
    Classification c;
    double max_score = 0.0;
    for (const auto& d : config.candidate_domains) {
      double s = rng.unit();
      if (rng.below(10) == 0) s = 0.45;
      c.scores[d] = s;
      max_score = std::max(max_score, s);
    }
    const auto choice = choose_with_threshold(c, config);
    CHECK((choice.domain == "general") == (max_score <= 0.45));
    if (choice.domain != "general") {
      for (const auto& [d, s] : c.scores) CHECK(choice.confidence >= s);
    }
  }
}

TEST_CASE("label_regime_b drives the classifier in multi-label mode over candidates only") {
  TableClassifier table({{"law text", {{"legal", 0.9}}}, {"chat", {{"medical", 0.2}}}});
  const std::vector<SentencePair> pairs{sp("law text"), sp("chat")};
  const auto result = label_regime_b(pairs, LabelerConfig{}, table);
  CHECK(table.last_multi_label);
  REQUIRE(result.labeled.size() == 2);
  CHECK(result.labeled[0].domain == "legal");
  CHECK(result.labeled[1].domain == "general");
  CHECK(result.labeled[1].confidence == doctest::Approx(0.8));
  CHECK(result.labeled[1].regime == Regime::threshold_fallback);

  LabelerConfig bad;
  bad.candidate_domains.push_back("general");
  CHECK_THROWS_AS(label_regime_b(pairs, bad, table), Error);
}

TEST_CASE("classifier failures are isolated per pair") {
  std::map<std::string, std::map<DomainLabel, double>> rows;
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 10; ++i) {
    const std::string t = (i == 6 ? "boom " : "ok ") + std::to_string(i);
    rows[t] = {{"legal", 0.9}};
    pairs.push_back(sp(t));
  }
  TableClassifier table(rows);
  const auto result = label_regime_a(pairs, default_domains(), table, {4, 2});
  CHECK(result.labeled.size() == 9);
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].index == 6);
  CHECK(result.failures[0].message.find("crashed") != std::string::npos);
  // Order of survivors is the input order.
  CHECK(result.labeled[6].pair.source_text == "ok 7");
}

TEST_CASE("labeling is deterministic regardless of batching") {
  MockClassifier mock({{"legal", {"court", "law"}}, {"medical", {"virus", "covid"}}, {"wiki_news", {"city"}}});
  std::vector<SentencePair> pairs;
  const std::vector<std::string> words{"court", "law", "virus", "covid", "city", "the", "a"};
  SeededRng rng(9);
  for (int i = 0; i < 300; ++i) {
    std::string s;
    for (int k = 0; k < 4; ++k) s += words[rng.below(words.size())] + " ";
    pairs.push_back(sp(s));
  }
  const auto serial = label_regime_a(pairs, default_domains(), mock, {1, 1});
  const auto parallel = label_regime_a(pairs, default_domains(), mock, {7, 6});
  CHECK(serial.labeled == parallel.labeled);
  for (const auto& l : serial.labeled) {
    const auto c = mock.classify(std::span<const std::string>(&l.pair.source_text, 1), default_domains(), false)[0];
    for (const auto& [d, s] : c.scores) CHECK(l.confidence >= s);
  }
}

TEST_CASE("label_by_corpus") {
  const std::map<std::string, DomainLabel> map{{"LoResMT", "medical"}, {"Foclóir", "general"}};
  const std::vector<SentencePair> pairs{sp("a", "LoResMT"), sp("b", "Foclóir")};
  const auto labeled = label_by_corpus(pairs, map);
  CHECK(labeled[0].domain == "medical");
  CHECK(labeled[1].domain == "general");
  CHECK(labeled[0].confidence == 1.0);
  CHECK(labeled[0].regime == Regime::by_corpus);

  const std::vector<SentencePair> unmapped{sp("c", "X")};
  try {
    label_by_corpus(unmapped, map);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::config);
    CHECK(std::string(e.what()).find("'X'") != std::string::npos);
  }
}

TEST_CASE("partition_by_domain") {
  auto lp = [](std::string d) { return LabeledPair{sp("x"), std::move(d), 1.0, Regime::four_domain}; };
  const std::vector<LabeledPair> three{lp("general"), lp("general"), lp("legal")};
  const auto buckets = partition_by_domain(three);
  CHECK(buckets.size() == 2);
  CHECK(buckets.at("general").size() == 2);
  CHECK(buckets.at("legal").size() == 1);
  CHECK(partition_by_domain(std::vector<LabeledPair>{}).empty());

  SUBCASE("bucket sizes match an independent histogram") {
    SeededRng rng(1);
    std::vector<LabeledPair> many;
    std::map<DomainLabel, std::size_t> histogram;
    for (int i = 0; i < 1000; ++i) {
      const auto& d = default_domains()[rng.below(4)];
      many.push_back(lp(d));
      ++histogram[d];
    }
    const auto b = partition_by_domain(many);
    std::size_t total = 0;
    for (const auto& [d, corpus] : b) {
      CHECK(corpus.size() == histogram.at(d));
      total += corpus.size();
    }
    CHECK(total == 1000);
  }
}

TEST_CASE("labeled records round trip") {
  const LabeledPair l{{"The court", "An chúirt", "DGT", 3}, "legal", 0.625, Regime::threshold_fallback};
  CHECK(labeled_from_json(to_json(l)) == l);
  const auto j = to_json(l);
  for (const char* key : {"source", "target", "origin", "domain", "confidence", "regime"}) CHECK(j.contains(key));
}

TEST_CASE("HTTP classifier speaks the sidecar contract") {
  semiroute::testing::StubServer stub;
  std::mutex mutex;
  nlohmann::json last_request;
  stub.server().Post("/classify", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    {
      std::lock_guard lock(mutex);
      last_request = body;
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : body["texts"]) {
      nlohmann::json row = nlohmann::json::array();
      for (const auto& l : body["labels"]) {
        const bool hit = t.get<std::string>().find(l.get<std::string>()) != std::string::npos;
        row.push_back(hit ? 0.9 : (t.get<std::string>() == "bad" ? 1.5 : 0.1));
      }
      rows.push_back(row);
    }
    res.set_content(nlohmann::json{{"scores", rows}}.dump(), "application/json");
  });
  stub.start();

  HttpClassifierClient client(stub.url());
  const std::vector<SentencePair> pairs{sp("medical trial"), sp("legal act"), sp("bad")};
  const auto result = label_regime_b(pairs, LabelerConfig{}, client, {8, 1});
  CHECK(last_request["multi_label"] == true);
  CHECK(last_request["labels"] == nlohmann::json{"legal", "medical", "wiki_news"});
  REQUIRE(result.labeled.size() == 2);
  CHECK(result.labeled[0].domain == "medical");
  CHECK(result.labeled[1].domain == "legal");
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].index == 2);

  SUBCASE("misaligned response rows are rejected") {
    const std::vector<DomainLabel> labels{"a", "b"};
    CHECK_THROWS_AS(parse_classify_response(nlohmann::json{{"scores", {{0.1}}}}, 1, labels), Error);
    CHECK_THROWS_AS(parse_classify_response(nlohmann::json{{"scores", nlohmann::json::array()}}, 1, labels), Error);
  }
  SUBCASE("unreachable sidecar reports every pair as failed") {
    HttpClassifierClient dead("http://127.0.0.1:1", std::chrono::milliseconds(300));
    const auto r = label_regime_a(pairs, default_domains(), dead);
    CHECK(r.labeled.empty());
    CHECK(r.failures.size() == 3);
  }
}

TEST_CASE("mock classifier ignores edge punctuation") {
  MockClassifier mock(std::map<DomainLabel, std::vector<std::string>>{{"legal", {"court"}}});
  const std::vector<std::string> texts{"The court.", "(court)", "courtroom", "..."};
  const std::vector<DomainLabel> labels{"legal"};
  const auto scores = mock.classify(texts, labels, true);
  CHECK(scores[0].scores.at("legal") == 1.0);
  CHECK(scores[1].scores.at("legal") == 1.0);
  CHECK(scores[2].scores.at("legal") == 0.0);
  CHECK(scores[3].scores.at("legal") == 0.0);
}
