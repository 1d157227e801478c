#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "semiroute/labeler.hpp"

namespace semiroute {

/// Case-preserving. Punctuation becomes a standalone token unless it sits
/// between two digits ("3.14", "1,000"); the result is whitespace split.
std::vector<std::string> tokenize_eval(std::string_view text);

inline constexpr int kBleuOrder = 4;

struct BleuOptions {
  /// Add one to matched and total counts of orders 2..4.
  bool add_one_smoothing = false;
};

struct BleuScore {
  double score = 0.0;  // 0..100
  std::array<double, kBleuOrder> precisions{};
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  bool smoothed = false;

  friend bool operator==(const BleuScore&, const BleuScore&) = default;
};

/// Corpus BLEU from already tokenized sentences, single reference each.
BleuScore corpus_bleu_tokenized(std::span<const std::vector<std::string>> hypotheses,
                                std::span<const std::vector<std::string>> references,
                                const BleuOptions& options = {});

/// Corpus BLEU over raw text, tokenized with tokenize_eval.
BleuScore corpus_bleu(std::span<const std::string> hypotheses,
                      std::span<const std::string> references, const BleuOptions& options = {});

enum class RoutingMode { classifier_labeled, centroid_routed, by_corpus };
std::string to_string(RoutingMode mode);
RoutingMode routing_mode_from_string(const std::string& name);

struct DomainResult {
  std::size_t pair_count = 0;    // evaluation pairs assigned to the domain
  std::size_t scored_count = 0;  // those with a hypothesis
  std::optional<BleuScore> bleu; // absent when nothing was scored

  friend bool operator==(const DomainResult&, const DomainResult&) = default;
};

struct EvalReport {
  std::string config_id;
  RoutingMode routing_mode = RoutingMode::classifier_labeled;
  std::map<DomainLabel, DomainResult> per_domain;
  std::size_t eval_size = 0;
  /// Source texts of evaluation pairs that had no hypothesis.
  std::vector<std::string> missing;
  bool smoothed = false;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Maps evaluation pairs to the domain they are scored under.
using DomainAssigner = std::function<std::vector<DomainLabel>(std::span<const LabeledPair>)>;

struct EvalOptions {
  std::string config_id;
  BleuOptions bleu;
  /// Empty: use each pair's own label.
  DomainAssigner assigner;
};

DomainAssigner corpus_assigner(std::map<std::string, DomainLabel> corpus_domain_map);

/// Groups the pairs by domain and scores each group against its hypotheses,
/// looked up by source text.
EvalReport stratified_eval(std::span<const LabeledPair> eval_pairs,
                           const std::map<std::string, std::string>& hypotheses, RoutingMode mode,
                           const EvalOptions& options);

enum class ReportFormat { json, markdown_table };

/// One table row per report, one column per domain; the best score in each
/// column is bold.
std::string render_reports(std::span<const EvalReport> reports, ReportFormat format);
std::string render_report(const EvalReport& report, ReportFormat format);

nlohmann::json to_json(const BleuScore& bleu);
nlohmann::json to_json(const EvalReport& report);
BleuScore bleu_from_json(const nlohmann::json& j);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace semiroute
