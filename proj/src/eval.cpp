#include "semiroute/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "semiroute/error.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

std::vector<std::string> tokenize_eval(std::string_view text_value) {
  const std::u32string cps = text::decode_utf8(text_value);
  std::u32string spaced;
  spaced.reserve(cps.size() * 2);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (text::is_punct(c)) {
      const bool digit_before = i > 0 && text::is_digit(cps[i - 1]);
      const bool digit_after = i + 1 < cps.size() && text::is_digit(cps[i + 1]);
      if (!(digit_before && digit_after)) {
        spaced.push_back(U' ');
        spaced.push_back(c);
        spaced.push_back(U' ');
        continue;
      }
    }
    spaced.push_back(c);
  }
  return text::split_whitespace(text::encode_utf8(spaced));
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuScore corpus_bleu_tokenized(std::span<const std::vector<std::string>> hypotheses,
                                std::span<const std::vector<std::string>> references,
                                const BleuOptions& options) {
  if (hypotheses.size() != references.size()) {
    throw Error(ErrorCategory::validation,
                "BLEU needs one reference per hypothesis (" + std::to_string(hypotheses.size()) +
                    " hypotheses, " + std::to_string(references.size()) + " references)");
  }
  if (hypotheses.empty()) {
    throw Error(ErrorCategory::validation, "BLEU of an empty corpus is undefined");
  }
  BleuScore bleu;
  bleu.smoothed = options.add_one_smoothing;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    bleu.hyp_len += hyp.size();
    bleu.ref_len += ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const auto hyp_counts = count_ngrams(hyp, n);
      const auto ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) bleu.matches[n - 1] += std::min(count, it->second);
      }
      if (hyp.size() >= n) bleu.totals[n - 1] += hyp.size() - n + 1;
    }
  }

  bool any_zero = false;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < kBleuOrder; ++k) {
    double m = static_cast<double>(bleu.matches[k]);
    double t = static_cast<double>(bleu.totals[k]);
    if (options.add_one_smoothing && k > 0) {
      m += 1.0;
      t += 1.0;
    }
    bleu.precisions[k] = t > 0.0 ? m / t : 0.0;
    if (bleu.precisions[k] == 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(bleu.precisions[k]);
    }
  }
  if (bleu.hyp_len == 0) {
    bleu.brevity_penalty = 0.0;
  } else if (bleu.hyp_len < bleu.ref_len) {
    bleu.brevity_penalty =
        std::exp(1.0 - static_cast<double>(bleu.ref_len) / static_cast<double>(bleu.hyp_len));
  } else {
    bleu.brevity_penalty = 1.0;
  }
  bleu.score = any_zero ? 0.0 : bleu.brevity_penalty * std::exp(log_sum / kBleuOrder) * 100.0;
  return bleu;
}

BleuScore corpus_bleu(std::span<const std::string> hypotheses,
                      std::span<const std::string> references, const BleuOptions& options) {
  std::vector<std::vector<std::string>> hyp, ref;
  hyp.reserve(hypotheses.size());
  ref.reserve(references.size());
  for (const auto& h : hypotheses) hyp.push_back(tokenize_eval(h));
  for (const auto& r : references) ref.push_back(tokenize_eval(r));
  return corpus_bleu_tokenized(hyp, ref, options);
}

std::string to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::classifier_labeled: return "classifier_labeled";
    case RoutingMode::centroid_routed: return "centroid_routed";
    case RoutingMode::by_corpus: return "by_corpus";
  }
  return "unknown";
}

RoutingMode routing_mode_from_string(const std::string& name) {
  if (name == "classifier_labeled" || name == "classifier-labeled") return RoutingMode::classifier_labeled;
  if (name == "centroid_routed" || name == "centroid-routed") return RoutingMode::centroid_routed;
  if (name == "by_corpus" || name == "by-corpus") return RoutingMode::by_corpus;
  throw Error(ErrorCategory::config, "unknown routing mode '" + name + "'");
}

DomainAssigner corpus_assigner(std::map<std::string, DomainLabel> corpus_domain_map) {
  return [map = std::move(corpus_domain_map)](std::span<const LabeledPair> pairs) {
    std::vector<DomainLabel> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
      auto it = map.find(p.pair.origin);
      if (it == map.end()) {
        throw Error(ErrorCategory::config, "origin '" + p.pair.origin + "' has no corpus domain mapping");
      }
      out.push_back(it->second);
    }
    return out;
  };
}

EvalReport stratified_eval(std::span<const LabeledPair> eval_pairs,
                           const std::map<std::string, std::string>& hypotheses, RoutingMode mode,
                           const EvalOptions& options) {
  EvalReport report;
  report.config_id = options.config_id;
  report.routing_mode = mode;
  report.eval_size = eval_pairs.size();
  report.smoothed = options.bleu.add_one_smoothing;

  std::vector<DomainLabel> domains;
  if (options.assigner) {
    domains = options.assigner(eval_pairs);
    if (domains.size() != eval_pairs.size()) {
      throw Error(ErrorCategory::validation, "domain assigner returned a misaligned result");
    }
  } else {
    for (const auto& p : eval_pairs) domains.push_back(p.domain);
  }

  std::map<DomainLabel, std::pair<std::vector<std::string>, std::vector<std::string>>> groups;
  for (std::size_t i = 0; i < eval_pairs.size(); ++i) {
    auto& result = report.per_domain[domains[i]];
    ++result.pair_count;
    auto& [hyps, refs] = groups[domains[i]];
    auto it = hypotheses.find(eval_pairs[i].pair.source_text);
    if (it == hypotheses.end()) {
      report.missing.push_back(eval_pairs[i].pair.source_text);
      continue;
    }
    hyps.push_back(it->second);
    refs.push_back(eval_pairs[i].pair.target_text);
  }
  for (auto& [domain, group] : groups) {
    auto& result = report.per_domain[domain];
    result.scored_count = group.first.size();
    if (!group.first.empty()) result.bleu = corpus_bleu(group.first, group.second, options.bleu);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Rendering

nlohmann::json to_json(const BleuScore& bleu) {
  return {{"score", bleu.score},
          {"precisions", bleu.precisions},
          {"matches", bleu.matches},
          {"totals", bleu.totals},
          {"brevity_penalty", bleu.brevity_penalty},
          {"hyp_len", bleu.hyp_len},
          {"ref_len", bleu.ref_len},
          {"smoothed", bleu.smoothed}};
}

BleuScore bleu_from_json(const nlohmann::json& j) {
  BleuScore bleu;
  bleu.score = j.at("score").get<double>();
  bleu.precisions = j.at("precisions").get<std::array<double, kBleuOrder>>();
  bleu.matches = j.at("matches").get<std::array<std::size_t, kBleuOrder>>();
  bleu.totals = j.at("totals").get<std::array<std::size_t, kBleuOrder>>();
  bleu.brevity_penalty = j.at("brevity_penalty").get<double>();
  bleu.hyp_len = j.at("hyp_len").get<std::size_t>();
  bleu.ref_len = j.at("ref_len").get<std::size_t>();
  bleu.smoothed = j.at("smoothed").get<bool>();
  return bleu;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json per_domain = nlohmann::json::object();
  for (const auto& [domain, result] : report.per_domain) {
    per_domain[domain] = {{"pair_count", result.pair_count},
                          {"scored_count", result.scored_count},
                          {"bleu", result.bleu ? to_json(*result.bleu) : nlohmann::json(nullptr)}};
  }
  return {{"config_id", report.config_id},
          {"routing_mode", to_string(report.routing_mode)},
          {"eval_size", report.eval_size},
          {"smoothed", report.smoothed},
          {"missing", report.missing},
          {"per_domain", per_domain}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport report;
    report.config_id = j.at("config_id").get<std::string>();
    report.routing_mode = routing_mode_from_string(j.at("routing_mode").get<std::string>());
    report.eval_size = j.at("eval_size").get<std::size_t>();
    report.smoothed = j.at("smoothed").get<bool>();
    report.missing = j.at("missing").get<std::vector<std::string>>();
    for (const auto& [domain, value] : j.at("per_domain").items()) {
      DomainResult result;
      result.pair_count = value.at("pair_count").get<std::size_t>();
      result.scored_count = value.at("scored_count").get<std::size_t>();
      if (!value.at("bleu").is_null()) result.bleu = bleu_from_json(value.at("bleu"));
      report.per_domain.emplace(domain, std::move(result));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::parse, std::string("bad evaluation report: ") + e.what());
  }
}

namespace {

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", score);
  return buf;
}

std::string render_markdown(std::span<const EvalReport> reports) {
  std::vector<DomainLabel> columns;
  for (const auto& report : reports) {
    for (const auto& [domain, result] : report.per_domain) {
      if (std::find(columns.begin(), columns.end(), domain) == columns.end()) columns.push_back(domain);
    }
  }
  std::sort(columns.begin(), columns.end(), [](const DomainLabel& a, const DomainLabel& b) {
    const auto& order = default_domains();
    auto ia = std::find(order.begin(), order.end(), a) - order.begin();
    auto ib = std::find(order.begin(), order.end(), b) - order.begin();
    return ia != ib ? ia < ib : a < b;
  });

  // Compare at display precision so equal-looking cells are marked alike.
  std::map<DomainLabel, std::string> best;
  for (const auto& domain : columns) {
    std::optional<double> top;
    for (const auto& report : reports) {
      auto it = report.per_domain.find(domain);
      if (it == report.per_domain.end() || !it->second.bleu) continue;
      const double s = it->second.bleu->score;
      if (!top || s > *top) top = s;
    }
    if (top) best[domain] = format_score(*top);
  }

  std::string out = "| Model |";
  for (const auto& domain : columns) out += " " + domain + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& report : reports) {
    out += "| " + (report.config_id.empty() ? std::string("(unnamed)") : report.config_id) + " |";
    for (const auto& domain : columns) {
      auto it = report.per_domain.find(domain);
      if (it == report.per_domain.end() || !it->second.bleu) {
        out += " n/a |";
        continue;
      }
      const std::string cell = format_score(it->second.bleu->score);
      const bool is_best = best.count(domain) && best[domain] == cell;
      out += is_best ? " **" + cell + "** |" : " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace

std::string render_reports(std::span<const EvalReport> reports, ReportFormat format) {
  if (format == ReportFormat::markdown_table) return render_markdown(reports);
  nlohmann::json array = nlohmann::json::array();
  for (const auto& r : reports) array.push_back(to_json(r));
  return array.dump(2) + "\n";
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::json) return to_json(report).dump(2) + "\n";
  if (report.per_domain.empty()) return render_markdown({});
  return render_markdown(std::span<const EvalReport>(&report, 1));
}

}  // namespace semiroute
