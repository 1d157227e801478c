#include "semiroute/blockalign.hpp"

#include <algorithm>
#include <regex>
#include <tuple>

#include <json.hpp>

#include "semiroute/error.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

void validate(const BlockDocument& doc) {
  for (std::size_t p = 0; p < doc.pages.size(); ++p) {
    const auto& page = doc.pages[p];
    const std::string where = "page " + std::to_string(p + 1);
    if (!(page.width > 0.0) || !(page.height > 0.0)) {
      throw Error(ErrorCategory::format, where + " has a non-positive dimension");
    }
    for (const auto& block : page.blocks) {
      const auto& b = block.bbox;
      if (!(b.x0 < b.x1) || !(b.y0 < b.y1)) {
        throw Error(ErrorCategory::format, where + ": block '" + block.text + "' has an empty box");
      }
      if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > page.width || b.y1 > page.height) {
        throw Error(ErrorCategory::format, where + ": block '" + block.text + "' exceeds the page");
      }
    }
  }
}

BlockDocument normalize_blocks(const BlockDocument& doc) {
  validate(doc);
  BlockDocument out;
  out.lang = doc.lang;
  out.normalized = true;
  out.pages.reserve(doc.pages.size());
  for (const auto& page : doc.pages) {
    BlockPage scaled;
    for (const auto& block : page.blocks) {
      std::string text_value = normalize(block.text);
      if (text_value.empty()) continue;
      const auto& b = block.bbox;
      scaled.blocks.push_back({block.page,
                               {b.x0 / page.width, b.y0 / page.height, b.x1 / page.width,
                                b.y1 / page.height},
                               std::move(text_value)});
    }
    out.pages.push_back(std::move(scaled));
  }
  return out;
}

FilterResult filter_blocks(const BlockDocument& doc, std::span<const std::string> ignore_patterns) {
  std::vector<std::regex> compiled;
  compiled.reserve(ignore_patterns.size());
  for (const auto& pattern : ignore_patterns) {
    try {
      compiled.emplace_back(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCategory::config, "invalid ignore pattern '" + pattern + "': " + e.what());
    }
  }
  FilterResult result;
  result.removed_per_pattern.assign(compiled.size(), 0);
  result.document.lang = doc.lang;
  result.document.normalized = doc.normalized;
  for (const auto& page : doc.pages) {
    BlockPage kept{page.width, page.height, {}};
    for (const auto& block : page.blocks) {
      auto hit = std::find_if(compiled.begin(), compiled.end(),
                              [&](const std::regex& re) { return std::regex_match(block.text, re); });
      if (hit == compiled.end()) {
        kept.blocks.push_back(block);
      } else {
        ++result.removed;
        ++result.removed_per_pattern[static_cast<std::size_t>(hit - compiled.begin())];
      }
    }
    result.document.pages.push_back(std::move(kept));
  }
  return result;
}

MatchResult match_blocks(const BlockDocument& src, const BlockDocument& tgt, double threshold) {
  if (!src.normalized || !tgt.normalized) {
    throw Error(ErrorCategory::validation, "match_blocks expects normalized documents");
  }
  if (!(threshold >= 0.0)) {
    throw Error(ErrorCategory::config, "match threshold must be non-negative");
  }
  MatchResult result;
  const std::size_t shared = std::min(src.pages.size(), tgt.pages.size());
  result.excess_source_pages = src.pages.size() - shared;
  result.excess_target_pages = tgt.pages.size() - shared;

  for (std::size_t p = 0; p < shared; ++p) {
    const auto& a = src.pages[p].blocks;
    const auto& b = tgt.pages[p].blocks;
    std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const Eigen::Vector2d ca = a[i].bbox.center();
      for (std::size_t j = 0; j < b.size(); ++j) {
        const double d = (ca - b[j].bbox.center()).norm();
        if (d <= threshold) candidates.emplace_back(d, i, j);
      }
    }
    std::sort(candidates.begin(), candidates.end());
    std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
    std::vector<std::tuple<std::size_t, std::size_t, double>> page_matches;
    for (const auto& [d, i, j] : candidates) {
      if (used_a[i] || used_b[j]) continue;
      used_a[i] = used_b[j] = true;
      page_matches.emplace_back(i, j, d);
    }
    // Emit in source block order so mined pairs follow the page.
    std::sort(page_matches.begin(), page_matches.end());
    for (const auto& [i, j, d] : page_matches) result.matches.push_back({a[i], b[j], d});
    const std::size_t matched = page_matches.size();
    result.unmatched_source += a.size() - matched;
    result.unmatched_target += b.size() - matched;
  }
  for (std::size_t p = shared; p < src.pages.size(); ++p) result.unmatched_source += src.pages[p].blocks.size();
  for (std::size_t p = shared; p < tgt.pages.size(); ++p) result.unmatched_target += tgt.pages[p].blocks.size();
  return result;
}

std::vector<SentencePair> matches_to_pairs(std::span<const BlockMatch> matches, const std::string& origin) {
  std::vector<SentencePair> pairs;
  for (const auto& match : matches) {
    SentencePair whole{normalize(match.source_block.text), normalize(match.target_block.text), origin, 0};
    if (whole.source_text.empty() || whole.target_text.empty()) continue;
    for (auto& pair : split_multi_sentence(whole)) {
      pair.line_no = static_cast<std::int64_t>(pairs.size() + 1);
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

BlockDocument parse_block_records(std::string_view jsonl, const std::string& lang) {
  BlockDocument doc;
  doc.lang = lang;
  std::vector<bool> seen;
  const auto lines = split_lines(jsonl);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (normalize(lines[n]).empty()) continue;
    const std::string where = "block record line " + std::to_string(n + 1);
    TextBlock block;
    double width = 0, height = 0;
    try {
      const auto record = nlohmann::json::parse(lines[n]);
      block.page = record.at("page").get<int>();
      width = record.at("page_width").get<double>();
      height = record.at("page_height").get<double>();
      block.bbox = {record.at("x0").get<double>(), record.at("y0").get<double>(),
                    record.at("x1").get<double>(), record.at("y1").get<double>()};
      block.text = record.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCategory::parse, where + ": " + e.what());
    }
    if (block.page < 1) throw Error(ErrorCategory::format, where + ": page numbers start at 1");
    const auto index = static_cast<std::size_t>(block.page - 1);
    if (doc.pages.size() <= index) {
      doc.pages.resize(index + 1);
      seen.resize(index + 1, false);
    }
    auto& page = doc.pages[index];
    if (!seen[index]) {
      page.width = width;
      page.height = height;
      seen[index] = true;
    } else if (page.width != width || page.height != height) {
      throw Error(ErrorCategory::format, where + ": page size disagrees with earlier records");
    }
    page.blocks.push_back(std::move(block));
  }
  validate(doc);
  return doc;
}

BlockDocument read_block_records(const std::filesystem::path& path, const std::string& lang) {
  return parse_block_records(read_file(path), lang);
}

}  // namespace semiroute
