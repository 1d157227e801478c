#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "semiroute/corpus.hpp"

namespace semiroute {

struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Eigen::Vector2d center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct TextBlock {
  int page = 1;
  BoundingBox bbox;
  std::string text;

  friend bool operator==(const TextBlock&, const TextBlock&) = default;
};

struct BlockPage {
  double width = 1.0;
  double height = 1.0;
  std::vector<TextBlock> blocks;
};

struct BlockDocument {
  std::vector<BlockPage> pages;
  std::string lang;
  /// Set by normalize_blocks: coordinates live in the unit square.
  bool normalized = false;
};

struct BlockMatch {
  TextBlock source_block;
  TextBlock target_block;
  double distance = 0.0;
};

inline constexpr double kDefaultMatchThreshold = 0.15;

/// Throws a format error on non-positive page sizes, inverted boxes or boxes
/// outside their page.
void validate(const BlockDocument& doc);

/// Divides every box by its page size and normalizes block text. Blocks whose
/// text normalizes to empty are dropped.
BlockDocument normalize_blocks(const BlockDocument& doc);

struct FilterResult {
  BlockDocument document;
  std::size_t removed = 0;
  /// Blocks removed by each pattern (first matching pattern wins).
  std::vector<std::size_t> removed_per_pattern;
};

/// Removes blocks whose whole text matches any ECMAScript pattern.
FilterResult filter_blocks(const BlockDocument& doc, std::span<const std::string> ignore_patterns);

struct MatchResult {
  std::vector<BlockMatch> matches;
  std::size_t unmatched_source = 0;
  std::size_t unmatched_target = 0;
  /// Pages beyond the shorter document, per side.
  std::size_t excess_source_pages = 0;
  std::size_t excess_target_pages = 0;
};

/// Per page pair: greedy one-to-one matching by ascending Euclidean distance
/// between box centers; candidates farther than `threshold` are discarded.
MatchResult match_blocks(const BlockDocument& src, const BlockDocument& tgt,
                         double threshold = kDefaultMatchThreshold);

/// Sentence-segments both blocks of each match; equal counts give one pair
/// per sentence, otherwise one pair of the whole blocks. line_no numbers the
/// emitted pairs from 1.
std::vector<SentencePair> matches_to_pairs(std::span<const BlockMatch> matches,
                                           const std::string& origin);

/// Line-delimited {page, page_width, page_height, x0, y0, x1, y1, text}.
BlockDocument parse_block_records(std::string_view jsonl, const std::string& lang);
BlockDocument read_block_records(const std::filesystem::path& path, const std::string& lang);

}  // namespace semiroute
