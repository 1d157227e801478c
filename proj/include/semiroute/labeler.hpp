#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "semiroute/corpus.hpp"

namespace semiroute {

using DomainLabel = std::string;

/// {general, legal, medical, wiki_news}, in that order.
const std::vector<DomainLabel>& default_domains();

/// Per-label confidence in [0, 1]; the key set is the candidate label set.
struct Classification {
  std::map<DomainLabel, double> scores;
};

enum class Regime { four_domain, threshold_fallback, by_corpus };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

struct LabeledPair {
  SentencePair pair;
  DomainLabel domain;
  double confidence = 0.0;
  Regime regime = Regime::four_domain;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct LabelerConfig {
  double threshold = 0.45;
  DomainLabel fallback_domain = "general";
  std::vector<DomainLabel> candidate_domains{"legal", "medical", "wiki_news"};
};

/// Zero-shot classifier. Implementations must tolerate concurrent calls.
class ClassifierClient {
 public:
  virtual ~ClassifierClient() = default;

  /// One Classification per text, each keyed exactly by `labels`.
  virtual std::vector<Classification> classify(std::span<const std::string> texts,
                                                std::span<const DomainLabel> labels,
                                                bool multi_label) = 0;
};

/// Deterministic stand-in: a label's score is the fraction of its keywords
/// that occur as lowercase whitespace tokens of the text. In single-label
/// mode the scores are renormalized to sum to one (uniform when none match).
class MockClassifier final : public ClassifierClient {
 public:
  explicit MockClassifier(std::map<DomainLabel, std::vector<std::string>> keywords);

  std::vector<Classification> classify(std::span<const std::string> texts,
                                       std::span<const DomainLabel> labels,
                                       bool multi_label) override;

 private:
  std::map<DomainLabel, std::vector<std::string>> keywords_;
};

/// Client for the sidecar's POST /classify
/// {texts, labels, multi_label} -> {scores: [[float]]}.
class HttpClassifierClient final : public ClassifierClient {
 public:
  explicit HttpClassifierClient(std::string base_url,
                                std::chrono::milliseconds timeout = std::chrono::seconds(60));

  std::vector<Classification> classify(std::span<const std::string> texts,
                                       std::span<const DomainLabel> labels,
                                       bool multi_label) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

nlohmann::json classify_request_json(std::span<const std::string> texts,
                                     std::span<const DomainLabel> labels, bool multi_label);
/// Validates shape and range of a /classify response.
std::vector<Classification> parse_classify_response(const nlohmann::json& body,
                                                    std::size_t text_count,
                                                    std::span<const DomainLabel> labels);

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
};

struct LabelFailure {
  std::size_t index = 0;
  SentencePair pair;
  std::string message;
};

struct LabelingResult {
  std::vector<LabeledPair> labeled;
  std::vector<LabelFailure> failures;
};

struct Choice {
  DomainLabel domain;
  double confidence = 0.0;
};

/// Argmax over `domains`; ties go to the earliest domain in that order.
Choice choose_argmax(const Classification& scores, std::span<const DomainLabel> domains);

/// Argmax over the candidates if its score strictly exceeds the threshold,
/// else the fallback domain with confidence 1 - max.
Choice choose_with_threshold(const Classification& scores, const LabelerConfig& config);

/// Regime A: all domains offered to the classifier, single-label scores.
LabelingResult label_regime_a(std::span<const SentencePair> pairs,
                              std::span<const DomainLabel> domains,
                              ClassifierClient& classifier, const BatchOptions& batching = {});

/// Regime B: fallback excluded from the candidates, multi-label scores.
LabelingResult label_regime_b(std::span<const SentencePair> pairs, const LabelerConfig& config,
                              ClassifierClient& classifier, const BatchOptions& batching = {});

/// Every pair inherits its origin's domain with confidence 1.
std::vector<LabeledPair> label_by_corpus(std::span<const SentencePair> pairs,
                                         const std::map<std::string, DomainLabel>& corpus_domain_map);

std::map<DomainLabel, Corpus> partition_by_domain(std::span<const LabeledPair> labeled);
std::map<DomainLabel, std::vector<LabeledPair>> group_by_domain(std::span<const LabeledPair> labeled);

// Line-delimited record: {source, target, origin, line_no, domain, confidence, regime}.
nlohmann::json to_json(const LabeledPair& labeled);
LabeledPair labeled_from_json(const nlohmann::json& record);

}  // namespace semiroute
