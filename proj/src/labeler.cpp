#include "semiroute/labeler.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <set>
#include <thread>

#include "http.hpp"
#include "semiroute/error.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

const std::vector<DomainLabel>& default_domains() {
  static const std::vector<DomainLabel> domains{"general", "legal", "medical", "wiki_news"};
  return domains;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::four_domain: return "four_domain";
    case Regime::threshold_fallback: return "threshold_fallback";
    case Regime::by_corpus: return "by_corpus";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& name) {
  if (name == "four_domain" || name == "a") return Regime::four_domain;
  if (name == "threshold_fallback" || name == "b") return Regime::threshold_fallback;
  if (name == "by_corpus" || name == "by-corpus") return Regime::by_corpus;
  throw Error(ErrorCategory::config, "unknown labeling regime '" + name + "'");
}

// ---------------------------------------------------------------------------
// Classifier clients

MockClassifier::MockClassifier(std::map<DomainLabel, std::vector<std::string>> keywords)
    : keywords_(std::move(keywords)) {
  for (auto& [label, words] : keywords_) {
    for (auto& word : words) {
      std::transform(word.begin(), word.end(), word.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
  }
}

namespace {
constexpr const char* kEdgePunct = ".,;:!?\"'()[]{}";
}  // namespace

std::vector<Classification> MockClassifier::classify(std::span<const std::string> texts,
                                                     std::span<const DomainLabel> labels,
                                                     bool multi_label) {
  if (labels.empty()) {
    throw Error(ErrorCategory::classifier, "classifier called with an empty label set");
  }
  std::vector<Classification> out;
  out.reserve(texts.size());
  for (const auto& text_value : texts) {
    std::set<std::string> tokens;
    for (auto token : text::split_whitespace(text_value)) {
      // Edge punctuation never counts: "ruled." matches "ruled".
      const auto first = token.find_first_not_of(kEdgePunct);
      if (first == std::string::npos) continue;
      token = token.substr(first, token.find_last_not_of(kEdgePunct) - first + 1);
      std::transform(token.begin(), token.end(), token.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      tokens.insert(std::move(token));
    }
    Classification c;
    double total = 0.0;
    for (const auto& label : labels) {
      double score = 0.0;
      if (auto it = keywords_.find(label); it != keywords_.end() && !it->second.empty()) {
        std::size_t hits = 0;
        for (const auto& word : it->second) hits += tokens.count(word);
        score = static_cast<double>(hits) / static_cast<double>(it->second.size());
      }
      c.scores[label] = score;
      total += score;
    }
    if (!multi_label) {
      for (auto& [label, score] : c.scores) {
        score = total > 0.0 ? score / total : 1.0 / static_cast<double>(labels.size());
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

HttpClassifierClient::HttpClassifierClient(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

nlohmann::json classify_request_json(std::span<const std::string> texts,
                                     std::span<const DomainLabel> labels, bool multi_label) {
  return {{"texts", std::vector<std::string>(texts.begin(), texts.end())},
          {"labels", std::vector<std::string>(labels.begin(), labels.end())},
          {"multi_label", multi_label}};
}

std::vector<Classification> parse_classify_response(const nlohmann::json& body,
                                                    std::size_t text_count,
                                                    std::span<const DomainLabel> labels) {
  const auto scores = body.find("scores");
  if (scores == body.end() || !scores->is_array() || scores->size() != text_count) {
    throw Error(ErrorCategory::classifier,
                "classify response must hold one score row per text (" +
                    std::to_string(text_count) + ")");
  }
  std::vector<Classification> out;
  out.reserve(text_count);
  for (const auto& row : *scores) {
    if (!row.is_array() || row.size() != labels.size()) {
      throw Error(ErrorCategory::classifier, "classify response row is not aligned to the labels");
    }
    Classification c;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (!row[j].is_number()) {
        throw Error(ErrorCategory::classifier, "classify response holds a non-numeric score");
      }
      const double value = row[j].get<double>();
      if (!(value >= 0.0 && value <= 1.0)) {
        throw Error(ErrorCategory::classifier, "classify score outside [0, 1]");
      }
      c.scores[labels[j]] = value;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Classification> HttpClassifierClient::classify(std::span<const std::string> texts,
                                                           std::span<const DomainLabel> labels,
                                                           bool multi_label) {
  const auto body = http::post_json(base_url_, "/classify",
                                    classify_request_json(texts, labels, multi_label), timeout_,
                                    ErrorCategory::classifier);
  return parse_classify_response(body, texts.size(), labels);
}

// ---------------------------------------------------------------------------
// Label choice

namespace {

double score_of(const Classification& c, const DomainLabel& label) {
  auto it = c.scores.find(label);
  if (it == c.scores.end()) {
    throw Error(ErrorCategory::classifier, "classification lacks a score for '" + label + "'");
  }
  return it->second;
}

void check_scores(const Classification& c, std::span<const DomainLabel> labels) {
  if (c.scores.size() != labels.size()) {
    throw Error(ErrorCategory::classifier, "classification key set differs from the label set");
  }
  for (const auto& label : labels) {
    const double s = score_of(c, label);
    if (!(s >= 0.0 && s <= 1.0)) {
      throw Error(ErrorCategory::classifier, "score for '" + label + "' outside [0, 1]");
    }
  }
}

}  // namespace

Choice choose_argmax(const Classification& scores, std::span<const DomainLabel> domains) {
  if (domains.empty()) {
    throw Error(ErrorCategory::config, "no domains to choose from");
  }
  Choice best{domains.front(), score_of(scores, domains.front())};
  for (const auto& domain : domains.subspan(1)) {
    const double s = score_of(scores, domain);
    if (s > best.confidence) best = {domain, s};
  }
  return best;
}

Choice choose_with_threshold(const Classification& scores, const LabelerConfig& config) {
  const Choice top = choose_argmax(scores, config.candidate_domains);
  if (top.confidence > config.threshold) return top;
  return {config.fallback_domain, 1.0 - top.confidence};
}

// ---------------------------------------------------------------------------
// Labeling drivers

namespace {

template <typename Chooser>
LabelingResult run_labeling(std::span<const SentencePair> pairs,
                            std::span<const DomainLabel> labels, bool multi_label,
                            Regime regime, ClassifierClient& classifier,
                            const BatchOptions& batching, Chooser choose) {
  const std::size_t batch_size = std::max<std::size_t>(1, batching.batch_size);
  const std::size_t batch_count = (pairs.size() + batch_size - 1) / batch_size;

  struct Slot {
    std::optional<LabeledPair> labeled;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(pairs.size());

  auto label_one = [&](std::size_t i, const Classification& c) {
    try {
      check_scores(c, labels);
      Choice choice = choose(c);
      slots[i].labeled = LabeledPair{pairs[i], std::move(choice.domain), choice.confidence, regime};
    } catch (const Error& e) {
      slots[i].error = e.what();
    }
  };

  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(pairs.size(), begin + batch_size);
    std::vector<std::string> texts;
    texts.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) texts.push_back(pairs[i].source_text);
    try {
      const auto results = classifier.classify(texts, labels, multi_label);
      if (results.size() != texts.size()) {
        throw Error(ErrorCategory::classifier, "classifier returned a misaligned batch");
      }
      for (std::size_t i = begin; i < end; ++i) label_one(i, results[i - begin]);
      return;
    } catch (const std::exception& e) {
      if (end - begin == 1) {
        slots[begin].error = e.what();
        return;
      }
    }
    // Isolate failures: retry the batch one text at a time.
    for (std::size_t i = begin; i < end; ++i) {
      try {
        const auto results =
            classifier.classify(std::span<const std::string>(&texts[i - begin], 1), labels, multi_label);
        if (results.size() != 1) {
          throw Error(ErrorCategory::classifier, "classifier returned a misaligned batch");
        }
        label_one(i, results.front());
      } catch (const std::exception& e) {
        slots[i].error = e.what();
      }
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(1, batching.max_in_flight), batch_count);
  if (workers <= 1) {
    for (std::size_t b = 0; b < batch_count; ++b) run_batch(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < batch_count; b = next++) run_batch(b);
      });
    }
  }

  LabelingResult result;
  result.labeled.reserve(pairs.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].labeled) {
      result.labeled.push_back(std::move(*slots[i].labeled));
    } else {
      result.failures.push_back({i, pairs[i], slots[i].error.value_or("unknown failure")});
    }
  }
  return result;
}

}  // namespace

LabelingResult label_regime_a(std::span<const SentencePair> pairs,
                              std::span<const DomainLabel> domains, ClassifierClient& classifier,
                              const BatchOptions& batching) {
  if (domains.empty()) {
    throw Error(ErrorCategory::config, "regime A needs at least one domain");
  }
  return run_labeling(pairs, domains, /*multi_label=*/false, Regime::four_domain, classifier,
                      batching, [&](const Classification& c) { return choose_argmax(c, domains); });
}

LabelingResult label_regime_b(std::span<const SentencePair> pairs, const LabelerConfig& config,
                              ClassifierClient& classifier, const BatchOptions& batching) {
  if (config.candidate_domains.empty()) {
    throw Error(ErrorCategory::config, "regime B needs at least one candidate domain");
  }
  if (std::find(config.candidate_domains.begin(), config.candidate_domains.end(),
                config.fallback_domain) != config.candidate_domains.end()) {
    throw Error(ErrorCategory::config, "fallback domain '" + config.fallback_domain +
                                           "' must not be a regime B candidate");
  }
  if (!(config.threshold >= 0.0 && config.threshold <= 1.0)) {
    throw Error(ErrorCategory::config, "threshold must lie in [0, 1]");
  }
  return run_labeling(pairs, config.candidate_domains, /*multi_label=*/true,
                      Regime::threshold_fallback, classifier, batching,
                      [&](const Classification& c) { return choose_with_threshold(c, config); });
}

std::vector<LabeledPair> label_by_corpus(std::span<const SentencePair> pairs,
                                         const std::map<std::string, DomainLabel>& corpus_domain_map) {
  std::vector<LabeledPair> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    auto it = corpus_domain_map.find(pair.origin);
    if (it == corpus_domain_map.end()) {
      throw Error(ErrorCategory::config, "origin '" + pair.origin + "' has no corpus domain mapping");
    }
    out.push_back({pair, it->second, 1.0, Regime::by_corpus});
  }
  return out;
}

std::map<DomainLabel, std::vector<LabeledPair>> group_by_domain(std::span<const LabeledPair> labeled) {
  std::map<DomainLabel, std::vector<LabeledPair>> groups;
  for (const auto& item : labeled) groups[item.domain].push_back(item);
  return groups;
}

std::map<DomainLabel, Corpus> partition_by_domain(std::span<const LabeledPair> labeled) {
  std::map<DomainLabel, Corpus> buckets;
  for (const auto& item : labeled) {
    auto& bucket = buckets[item.domain];
    bucket.name = item.domain;
    bucket.pairs.push_back(item.pair);
  }
  return buckets;
}

nlohmann::json to_json(const LabeledPair& labeled) {
  nlohmann::json record = to_json(labeled.pair);
  record["domain"] = labeled.domain;
  record["confidence"] = labeled.confidence;
  record["regime"] = to_string(labeled.regime);
  return record;
}

LabeledPair labeled_from_json(const nlohmann::json& record) {
  LabeledPair labeled;
  labeled.pair = pair_from_json(record);
  try {
    labeled.domain = record.at("domain").get<std::string>();
    labeled.confidence = record.at("confidence").get<double>();
    labeled.regime = regime_from_string(record.at("regime").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::parse, std::string("bad labeled record: ") + e.what());
  }
  return labeled;
}

}  // namespace semiroute
