#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace semiroute {

/// One aligned English/Irish sentence with provenance.
struct SentencePair {
  std::string source_text;
  std::string target_text;
  std::string origin;
  std::int64_t line_no = 0;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct Corpus {
  std::string name;
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct TsvIngestResult {
  Corpus corpus;
  std::size_t skipped_count = 0;
};

struct CorpusStats {
  std::size_t pair_count = 0;
  std::size_t en_tokens = 0;
  std::size_t ga_tokens = 0;
  // Absent for an empty corpus / zero English tokens.
  std::optional<double> mean_en_tokens_per_sentence;
  std::optional<double> mean_ga_tokens_per_sentence;
  std::optional<double> length_ratio;
};

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 42;
};

struct TrainEvalSplit {
  Corpus train;
  Corpus eval;
  std::vector<std::string> warnings;
};

/// NFC composition, whitespace runs collapsed to one space, ends trimmed.
std::string normalize(std::string_view text);

/// Two line-aligned files. Lines are normalized; pair i carries line_no i.
/// Pairs whose either side normalizes to empty are dropped.
Corpus ingest_moses(const std::filesystem::path& source_path,
                    const std::filesystem::path& target_path,
                    const std::string& origin);

/// Tab-separated records; the first two fields are source and target.
TsvIngestResult ingest_tsv(const std::filesystem::path& path, const std::string& origin);
TsvIngestResult parse_tsv(std::string_view contents, const std::string& origin);

Corpus deduplicate(const Corpus& corpus);

/// Sentence boundaries: `.`, `!` or `?` followed by whitespace and then an
/// uppercase letter or an opening quote.
std::vector<std::string> segment_sentences(std::string_view text);

/// One pair per segment when both sides segment into the same number (>1) of
/// sentences; otherwise the input pair unchanged.
std::vector<SentencePair> split_multi_sentence(const SentencePair& pair);
Corpus split_multi_sentence(const Corpus& corpus);

CorpusStats corpus_stats(const Corpus& corpus);

/// Seeded shuffle, then the first round(train_fraction * n) pairs train.
TrainEvalSplit train_eval_split(const Corpus& corpus, const SplitSpec& spec);

// Line-delimited record format: {"source","target","origin","line_no"}.
nlohmann::json to_json(const SentencePair& pair);
SentencePair pair_from_json(const nlohmann::json& record);

}  // namespace semiroute
