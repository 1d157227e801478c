#include "semiroute/corpus.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "semiroute/error.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

std::string normalize(std::string_view input) {
  const std::u32string composed = text::decode_utf8(text::nfc(input));
  std::u32string out;
  out.reserve(composed.size());
  bool pending_space = false;
  for (char32_t c : composed) {
    if (text::is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(c);
  }
  return text::encode_utf8(out);
}

Corpus ingest_moses(const std::filesystem::path& source_path,
                    const std::filesystem::path& target_path,
                    const std::string& origin) {
  const auto source_lines = read_lines(source_path);
  const auto target_lines = read_lines(target_path);
  if (source_lines.size() != target_lines.size()) {
    throw Error(ErrorCategory::alignment,
                "line count mismatch: '" + source_path.string() + "' has " +
                    std::to_string(source_lines.size()) + " lines, '" +
                    target_path.string() + "' has " +
                    std::to_string(target_lines.size()));
  }
  Corpus corpus{origin, {}};
  corpus.pairs.reserve(source_lines.size());
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    std::string source = normalize(source_lines[i]);
    std::string target = normalize(target_lines[i]);
    if (source.empty() || target.empty()) continue;
    corpus.pairs.push_back({std::move(source), std::move(target), origin,
                            static_cast<std::int64_t>(i + 1)});
  }
  return corpus;
}

TsvIngestResult parse_tsv(std::string_view contents, const std::string& origin) {
  TsvIngestResult result{{origin, {}}, 0};
  const auto lines = split_lines(contents);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (normalize(line).empty()) {
      ++result.skipped_count;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCategory::parse, "line " + std::to_string(i + 1) +
                                            ": expected at least 2 tab-separated fields");
    }
    const auto next_tab = line.find('\t', tab + 1);
    std::string source = normalize(std::string_view(line).substr(0, tab));
    std::string target = normalize(std::string_view(line).substr(
        tab + 1, next_tab == std::string::npos ? std::string::npos : next_tab - tab - 1));
    if (source.empty() || target.empty()) {
      ++result.skipped_count;
      continue;
    }
    result.corpus.pairs.push_back({std::move(source), std::move(target), origin,
                                   static_cast<std::int64_t>(i + 1)});
  }
  return result;
}

TsvIngestResult ingest_tsv(const std::filesystem::path& path, const std::string& origin) {
  return parse_tsv(read_file(path), origin);
}

Corpus deduplicate(const Corpus& corpus) {
  Corpus out{corpus.name, {}};
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& pair : corpus.pairs) {
    if (seen.emplace(normalize(pair.source_text), normalize(pair.target_text)).second) {
      out.pairs.push_back(pair);
    }
  }
  return out;
}

std::vector<std::string> segment_sentences(std::string_view input) {
  const std::u32string cps = text::decode_utf8(input);
  std::vector<std::string> segments;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    std::string segment = normalize(text::encode_utf8(
        std::u32string_view(cps).substr(start, end - start)));
    if (!segment.empty()) segments.push_back(std::move(segment));
  };
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (c != U'.' && c != U'!' && c != U'?') continue;
    if (!text::is_space(cps[i + 1])) continue;
    std::size_t j = i + 1;
    while (j < cps.size() && text::is_space(cps[j])) ++j;
    if (j == cps.size()) break;
    if (text::is_upper(cps[j]) || text::is_opening_quote(cps[j])) {
      emit(i + 1);
      start = j;
      i = j - 1;
    }
  }
  emit(cps.size());
  return segments;
}

std::vector<SentencePair> split_multi_sentence(const SentencePair& pair) {
  const auto sources = segment_sentences(pair.source_text);
  const auto targets = segment_sentences(pair.target_text);
  if (sources.size() != targets.size() || sources.size() <= 1) {
    return {pair};
  }
  std::vector<SentencePair> out;
  out.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out.push_back({sources[i], targets[i], pair.origin, pair.line_no});
  }
  return out;
}

Corpus split_multi_sentence(const Corpus& corpus) {
  Corpus out{corpus.name, {}};
  out.pairs.reserve(corpus.pairs.size());
  for (const auto& pair : corpus.pairs) {
    for (auto& piece : split_multi_sentence(pair)) out.pairs.push_back(std::move(piece));
  }
  return out;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.pair_count = corpus.pairs.size();
  for (const auto& pair : corpus.pairs) {
    stats.en_tokens += text::split_whitespace(normalize(pair.source_text)).size();
    stats.ga_tokens += text::split_whitespace(normalize(pair.target_text)).size();
  }
  if (stats.pair_count > 0) {
    const auto n = static_cast<double>(stats.pair_count);
    stats.mean_en_tokens_per_sentence = static_cast<double>(stats.en_tokens) / n;
    stats.mean_ga_tokens_per_sentence = static_cast<double>(stats.ga_tokens) / n;
  }
  if (stats.en_tokens > 0) {
    stats.length_ratio =
        static_cast<double>(stats.ga_tokens) / static_cast<double>(stats.en_tokens);
  }
  return stats;
}

TrainEvalSplit train_eval_split(const Corpus& corpus, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCategory::validation, "train_fraction must lie strictly between 0 and 1");
  }
  if (corpus.empty()) {
    throw Error(ErrorCategory::validation, "cannot split an empty corpus");
  }
  std::vector<SentencePair> shuffled = corpus.pairs;
  SeededRng rng(spec.seed);
  rng.shuffle(shuffled);

  const std::size_t n = shuffled.size();
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n)));

  TrainEvalSplit split;
  split.train.name = corpus.name + ".train";
  split.eval.name = corpus.name + ".eval";
  split.train.pairs.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.eval.pairs.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  if (split.train.empty()) {
    split.warnings.push_back("corpus '" + corpus.name + "' of " + std::to_string(n) +
                             " pairs yields an empty train split");
  }
  if (split.eval.empty()) {
    split.warnings.push_back("corpus '" + corpus.name + "' of " + std::to_string(n) +
                             " pairs yields an empty eval split");
  }
  return split;
}

nlohmann::json to_json(const SentencePair& pair) {
  return {{"source", pair.source_text},
          {"target", pair.target_text},
          {"origin", pair.origin},
          {"line_no", pair.line_no}};
}

SentencePair pair_from_json(const nlohmann::json& record) {
  try {
    SentencePair pair;
    pair.source_text = record.at("source").get<std::string>();
    pair.target_text = record.at("target").get<std::string>();
    pair.origin = record.at("origin").get<std::string>();
    pair.line_no = record.value("line_no", std::int64_t{0});
    return pair;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::parse, std::string("bad sentence record: ") + e.what());
  }
}

}  // namespace semiroute
