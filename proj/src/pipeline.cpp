#include "semiroute/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include "semiroute/blockalign.hpp"
#include "semiroute/corpus.hpp"
#include "semiroute/error.hpp"
#include "semiroute/eval.hpp"
#include "semiroute/gateway.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::string> process_env(const std::string& name) {
  if (const char* value = std::getenv(name.c_str()); value && *value) return std::string(value);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config

const json& PipelineConfig::section(const std::string& name) const {
  static const json empty = json::object();
  auto it = raw.find(name);
  return it == raw.end() ? empty : *it;
}

fs::path PipelineConfig::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

PipelineConfig parse_pipeline_config(const json& raw, fs::path base_dir, EnvLookup env) {
  if (!raw.is_object()) throw Error(ErrorCategory::config, "config must be a JSON object");
  PipelineConfig config;
  config.raw = raw;
  config.base_dir = std::move(base_dir);
  config.env = std::move(env);
  config.config_id = hex64(fnv1a64(raw.dump()));
  try {
    config.seed = config.section("run").value("seed", std::uint64_t{42});
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, std::string("run.seed: ") + e.what());
  }
  return config;
}

PipelineConfig load_pipeline_config(const fs::path& path, EnvLookup env) {
  json raw;
  try {
    raw = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_pipeline_config(raw, path.has_parent_path() ? path.parent_path() : fs::path("."),
                               std::move(env));
}

// ---------------------------------------------------------------------------
// Artifacts

void write_jsonl(const fs::path& path, const json& meta, const std::vector<json>& records) {
  std::string out = json{{"_meta", meta}}.dump() + "\n";
  for (const auto& r : records) out += r.dump() + "\n";
  write_file(path, out);
}

JsonlArtifact read_jsonl(const fs::path& path) {
  JsonlArtifact artifact;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json record;
    try {
      record = json::parse(lines[i]);
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::parse, path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    if (record.is_object() && record.contains("_meta")) {
      artifact.meta = record["_meta"];
    } else {
      artifact.records.push_back(std::move(record));
    }
  }
  return artifact;
}

std::vector<SentencePair> read_pairs(const fs::path& path) {
  std::vector<SentencePair> pairs;
  for (const auto& r : read_jsonl(path).records) pairs.push_back(pair_from_json(r));
  return pairs;
}

std::vector<LabeledPair> read_labeled(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<LabeledPair> out;
  for (const auto& f : files) {
    for (const auto& r : read_jsonl(f).records) out.push_back(labeled_from_json(r));
  }
  return out;
}

namespace {

json meta_for(const PipelineConfig& config, const std::string& command, json extra = json::object()) {
  extra["command"] = command;
  extra["config_id"] = config.config_id;
  extra["seed"] = config.seed;
  return extra;
}

template <typename T>
T get_or(const json& section, const std::string& key, T fallback) {
  try {
    return section.value(key, fallback);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, "config key '" + key + "': " + e.what());
  }
}

std::string required_path(const PipelineConfig& config, const std::optional<std::string>& flag,
                          const std::string& section, const std::string& key) {
  if (flag) return *flag;
  const auto& s = config.section(section);
  if (!s.contains(key)) {
    throw Error(ErrorCategory::config, "missing " + section + "." + key + " (or the matching flag)");
  }
  return config.resolve(s.at(key).get<std::string>()).string();
}

std::vector<DomainLabel> string_list(const json& section, const std::string& key,
                                     std::vector<DomainLabel> fallback) {
  if (!section.contains(key)) return fallback;
  try {
    return section.at(key).get<std::vector<DomainLabel>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, "config key '" + key + "': " + e.what());
  }
}

std::map<std::string, DomainLabel> corpus_domain_map(const PipelineConfig& config) {
  const auto& corpus = config.section("corpus");
  if (!corpus.contains("corpus_domains")) {
    throw Error(ErrorCategory::config, "corpus.corpus_domains is required for corpus-level labels");
  }
  return corpus.at("corpus_domains").get<std::map<std::string, DomainLabel>>();
}

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string fmt(const std::optional<double>& v, int decimals = 2) { return v ? fmt(*v, decimals) : "n/a"; }

json stats_json(const std::string& name, const CorpusStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"name", name},
          {"pair_count", s.pair_count},
          {"en_tokens", s.en_tokens},
          {"ga_tokens", s.ga_tokens},
          {"mean_en_tokens_per_sentence", opt(s.mean_en_tokens_per_sentence)},
          {"mean_ga_tokens_per_sentence", opt(s.mean_ga_tokens_per_sentence)},
          {"length_ratio", opt(s.length_ratio)}};
}

std::int64_t index_timestamp(const PipelineConfig& config) {
  const auto& index = config.section("index");
  if (index.contains("timestamp")) return index.at("timestamp").get<std::int64_t>();
  if (auto epoch = config.env("SOURCE_DATE_EPOCH")) {
    try {
      return std::stoll(*epoch);
    } catch (const std::exception&) {
      throw Error(ErrorCategory::config, "SOURCE_DATE_EPOCH is not a number");
    }
  }
  return 0;
}

}  // namespace

std::unique_ptr<ClassifierClient> make_classifier(const PipelineConfig& config) {
  const auto& classifier = config.section("labeler").value("classifier", json::object());
  if (auto url = config.env("SEMIROUTE_CLASSIFY_URL")) {
    return std::make_unique<HttpClassifierClient>(*url);
  }
  if (classifier.contains("mock_keywords")) {
    return std::make_unique<MockClassifier>(
        classifier.at("mock_keywords").get<std::map<DomainLabel, std::vector<std::string>>>());
  }
  if (classifier.contains("url")) {
    return std::make_unique<HttpClassifierClient>(
        classifier.at("url").get<std::string>(),
        std::chrono::milliseconds(classifier.value("timeout_ms", 60000)));
  }
  throw Error(ErrorCategory::config, "labeler.classifier needs 'url' or 'mock_keywords'");
}

std::unique_ptr<EmbedderClient> make_embedder(const PipelineConfig& config) {
  const auto& embedder = config.section("embedder");
  if (auto url = config.env("SEMIROUTE_EMBED_URL")) return std::make_unique<HttpEmbedder>(*url);
  if (embedder.contains("mock")) {
    const auto& mock = embedder.at("mock");
    return std::make_unique<MockEmbedder>(get_or<Eigen::Index>(mock, "dim", 64),
                                          get_or<std::uint64_t>(mock, "seed", 42));
  }
  if (embedder.contains("url")) {
    return std::make_unique<HttpEmbedder>(embedder.at("url").get<std::string>(),
                                          std::chrono::milliseconds(embedder.value("timeout_ms", 30000)));
  }
  throw Error(ErrorCategory::config, "embedder needs 'url' or 'mock'");
}

// ---------------------------------------------------------------------------
// Subcommands

int run_ingest(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const auto& section = config.section("corpus");
  if (!section.contains("sources") || !section.at("sources").is_array()) {
    throw Error(ErrorCategory::config, "corpus.sources must be a list");
  }
  const bool split_sentences = get_or(section, "split_sentences", true);
  const bool dedup = get_or(section, "deduplicate", true);

  Corpus all{"ingested", {}};
  json per_source = json::array();
  for (const auto& source : section.at("sources")) {
    const std::string format = get_or<std::string>(source, "format", "moses");
    const std::string origin = source.at("origin").get<std::string>();
    if (origin.empty()) throw Error(ErrorCategory::config, "corpus source origin must be non-empty");
    Corpus corpus;
    std::size_t skipped = 0;
    if (format == "moses") {
      corpus = ingest_moses(config.resolve(source.at("source").get<std::string>()),
                            config.resolve(source.at("target").get<std::string>()), origin);
    } else if (format == "tsv") {
      auto result = ingest_tsv(config.resolve(source.at("path").get<std::string>()), origin);
      corpus = std::move(result.corpus);
      skipped = result.skipped_count;
      if (skipped) io.err << "ingest: " << origin << ": skipped " << skipped << " empty records\n";
    } else {
      throw Error(ErrorCategory::config, "unknown corpus format '" + format + "'");
    }
    per_source.push_back({{"origin", origin}, {"format", format}, {"pairs", corpus.size()}, {"skipped", skipped}});
    for (auto& p : corpus.pairs) all.pairs.push_back(std::move(p));
  }
  const std::size_t raw_count = all.size();
  if (split_sentences) all = split_multi_sentence(all);
  const std::size_t split_count = all.size();
  if (dedup) all = deduplicate(all);

  std::vector<json> records;
  records.reserve(all.size());
  for (const auto& p : all.pairs) records.push_back(to_json(p));
  const fs::path output = required_path(config, flags.output, "corpus", "output");
  write_jsonl(output, meta_for(config, "ingest",
                               {{"artifact", "corpus"},
                                {"normalization", "nfc+whitespace"},
                                {"split_sentences", split_sentences},
                                {"deduplicate", dedup},
                                {"sources", per_source},
                                {"pairs_read", raw_count},
                                {"pairs_after_split", split_count},
                                {"pairs_written", all.size()}}),
              records);
  io.out << "ingest: " << all.size() << " pairs -> " << output.string() << "\n";
  return 0;
}

int run_stats(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const fs::path input = required_path(config, flags.input, "corpus", "output");
  const auto pairs = read_pairs(input);
  std::map<std::string, Corpus> by_origin;
  std::vector<std::string> origin_order;
  for (const auto& p : pairs) {
    auto [it, inserted] = by_origin.try_emplace(p.origin, Corpus{p.origin, {}});
    if (inserted) origin_order.push_back(p.origin);
    it->second.pairs.push_back(p);
  }
  Corpus total{"Total", pairs};
  std::vector<std::pair<std::string, CorpusStats>> rows;
  for (const auto& origin : origin_order) rows.emplace_back(origin, corpus_stats(by_origin.at(origin)));
  rows.emplace_back("Total", corpus_stats(total));

  if (flags.json) {
    json out = json::array();
    for (const auto& [name, s] : rows) out.push_back(stats_json(name, s));
    io.out << json{{"config_id", config.config_id}, {"stats", out}}.dump(2) << "\n";
    return 0;
  }
  io.out << "| Dataset | Sent. | EN | GA | EN/sent | GA/sent | GA/EN |\n";
  io.out << "|---|---|---|---|---|---|---|\n";
  for (const auto& [name, s] : rows) {
    io.out << "| " << name << " | " << s.pair_count << " | " << s.en_tokens << " | " << s.ga_tokens
           << " | " << fmt(s.mean_en_tokens_per_sentence) << " | " << fmt(s.mean_ga_tokens_per_sentence)
           << " | " << fmt(s.length_ratio, 3) << " |\n";
  }
  return 0;
}

int run_label(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const auto& section = config.section("labeler");
  const Regime regime = regime_from_string(flags.regime.value_or(get_or<std::string>(section, "regime", "a")));
  const fs::path input = required_path(config, flags.input, "corpus", "output");
  const fs::path output = required_path(config, flags.output, "labeler", "output");
  const auto pairs = read_pairs(input);

  BatchOptions batching{get_or<std::size_t>(section, "batch_size", 32),
                        get_or<std::size_t>(section, "max_in_flight", 4)};
  LabelingResult result;
  json extra = {{"artifact", "labeled"}, {"regime", to_string(regime)}};
  if (regime == Regime::by_corpus) {
    result.labeled = label_by_corpus(pairs, corpus_domain_map(config));
  } else {
    auto classifier = make_classifier(config);
    if (regime == Regime::four_domain) {
      const auto domains = string_list(section, "domains", default_domains());
      extra["domains"] = domains;
      result = label_regime_a(pairs, domains, *classifier, batching);
    } else {
      LabelerConfig lc;
      lc.threshold = flags.threshold.value_or(get_or(section, "threshold", lc.threshold));
      lc.fallback_domain = get_or(section, "fallback_domain", lc.fallback_domain);
      lc.candidate_domains = string_list(section, "candidate_domains", lc.candidate_domains);
      extra["threshold"] = lc.threshold;
      extra["fallback_domain"] = lc.fallback_domain;
      extra["candidate_domains"] = lc.candidate_domains;
      result = label_regime_b(pairs, lc, *classifier, batching);
    }
  }
  for (const auto& f : result.failures) {
    io.err << "label: pair " << f.index << " (" << f.pair.origin << ":" << f.pair.line_no
           << ") failed: " << f.message << "\n";
  }
  std::vector<json> records;
  for (const auto& l : result.labeled) records.push_back(to_json(l));
  extra["failures"] = result.failures.size();
  write_jsonl(output, meta_for(config, "label", extra), records);
  io.out << "label: " << result.labeled.size() << " labeled, " << result.failures.size()
         << " failed -> " << output.string() << "\n";
  return 0;
}

int run_split(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const auto& section = config.section("split");
  const fs::path input = required_path(config, flags.input, "labeler", "output");
  const fs::path out_dir = required_path(config, flags.output_dir, "split", "output_dir");
  SplitSpec spec;
  spec.train_fraction = flags.train_fraction.value_or(get_or(section, "train_fraction", spec.train_fraction));
  spec.seed = flags.seed.value_or(get_or<std::uint64_t>(section, "seed", config.seed));

  const auto labeled = read_labeled(input);
  const auto groups = group_by_domain(labeled);
  std::vector<json> all_train, all_eval;
  json sizes = json::object();
  for (const auto& [domain, items] : groups) {
    // Split positions, not pairs, so labels travel with their pairs.
    Corpus positions{domain, {}};
    for (std::size_t i = 0; i < items.size(); ++i) {
      positions.pairs.push_back({std::to_string(i), std::to_string(i), domain, static_cast<std::int64_t>(i)});
    }
    const auto split = train_eval_split(positions, spec);
    for (const auto& w : split.warnings) io.err << "split: " << w << "\n";
    std::vector<json> train, eval;
    for (const auto& p : split.train.pairs) train.push_back(to_json(items[static_cast<std::size_t>(p.line_no)]));
    for (const auto& p : split.eval.pairs) eval.push_back(to_json(items[static_cast<std::size_t>(p.line_no)]));
    const json meta = meta_for(config, "split", {{"artifact", "split"}, {"domain", domain},
                                                 {"train_fraction", spec.train_fraction}, {"split_seed", spec.seed}});
    auto train_meta = meta;
    train_meta["part"] = "train";
    auto eval_meta = meta;
    eval_meta["part"] = "eval";
    write_jsonl(out_dir / "train" / (domain + ".jsonl"), train_meta, train);
    write_jsonl(out_dir / "eval" / (domain + ".jsonl"), eval_meta, eval);
    sizes[domain] = {{"train", train.size()}, {"eval", eval.size()}};
    all_train.insert(all_train.end(), train.begin(), train.end());
    all_eval.insert(all_eval.end(), eval.begin(), eval.end());
  }
  const json summary = {{"artifact", "split"}, {"train_fraction", spec.train_fraction},
                        {"split_seed", spec.seed}, {"domains", sizes}};
  auto eval_meta = meta_for(config, "split", summary);
  eval_meta["part"] = "eval";
  write_jsonl(out_dir / "eval.jsonl", eval_meta, all_eval);
  if (flags.merge_domains || get_or(section, "merge_domains", false)) {
    auto merged_meta = meta_for(config, "split", summary);
    merged_meta["part"] = "train";
    merged_meta["merged"] = true;
    write_jsonl(out_dir / "merged" / "train.jsonl", merged_meta, all_train);
    io.out << "split: merged train split of " << all_train.size() << " pairs -> "
           << (out_dir / "merged" / "train.jsonl").string() << "\n";
  }
  io.out << "split: " << all_train.size() << " train, " << all_eval.size() << " eval across "
         << groups.size() << " domains -> " << out_dir.string() << "\n";
  return 0;
}

int run_centroids(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  fs::path input;
  if (flags.input) {
    input = *flags.input;
  } else {
    input = fs::path(required_path(config, std::nullopt, "split", "output_dir")) / "train";
  }
  const fs::path output = required_path(config, flags.output ? flags.output : flags.index, "index", "path");
  const auto labeled = read_labeled(input);
  auto embedder = make_embedder(config);

  BuildOptions options;
  options.domain_order = string_list(config.section("index"), "domain_order", default_domains());
  options.metadata.regime = labeled.empty() ? "" : to_string(labeled.front().regime);
  options.metadata.config_id = config.config_id;
  options.metadata.seed = config.seed;
  options.metadata.timestamp = index_timestamp(config);
  auto result = build_index(labeled, *embedder, options);
  for (const auto& w : result.warnings) io.err << "centroids: " << w << "\n";
  save_index(result.index, output);
  io.out << "centroids: " << result.index.size() << " domains, dim " << result.index.dim() << " -> "
         << output.string() << "\n";
  return 0;
}

int run_route(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const fs::path index_path = required_path(config, flags.index, "index", "path");
  const auto index = load_index(index_path);
  auto embedder = make_embedder(config);
  std::string line;
  while (std::getline(io.in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize(line).empty()) continue;
    const auto decision = route(line, index, *embedder);
    io.out << json{{"text", line}, {"routing", to_json(decision)}}.dump() << "\n";
  }
  return 0;
}

int run_serve(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  json settings_json = config.section("gateway");
  if (!settings_json.contains("index_path")) {
    settings_json["index_path"] = required_path(config, flags.index, "index", "path");
  } else {
    settings_json["index_path"] = config.resolve(settings_json["index_path"].get<std::string>()).string();
  }
  if (!settings_json.contains("embedder") && config.has("embedder")) settings_json["embedder"] = config.section("embedder");
  auto settings = parse_gateway_settings(settings_json, config.env);
  if (flags.port) settings.port = *flags.port;

  auto index = std::make_shared<const CentroidIndex>(load_index(settings.index_path));
  std::shared_ptr<EmbedderClient> embedder;
  if (settings.embedder_url) {
    embedder = std::make_shared<HttpEmbedder>(*settings.embedder_url, settings.embedder_timeout);
  } else {
    embedder = std::make_shared<MockEmbedder>(settings.mock_embedder->first, settings.mock_embedder->second);
  }
  Gateway gateway(index, BackendRegistry(settings.backends, settings.fallback_domain), embedder,
                  std::make_shared<HttpBackendClient>(), settings.config);
  gateway.start_health_prober(settings.health_interval);
  io.err << "serve: listening on " << settings.host << ":" << settings.port << "\n";
  GatewayServer server(gateway);
  server.run(settings.host, settings.port);
  return 0;
}

int run_align_blocks(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const auto& section = config.section("align");
  const fs::path source = required_path(config, flags.source, "align", "source_blocks");
  const fs::path target = required_path(config, flags.target, "align", "target_blocks");
  const fs::path output = required_path(config, flags.output, "align", "output");
  const double tau = flags.tau.value_or(get_or(section, "threshold", kDefaultMatchThreshold));
  const std::string origin = flags.origin.value_or(get_or<std::string>(section, "origin", "SEC"));
  const auto patterns = string_list(section, "ignore_patterns", {});

  const auto src = filter_blocks(normalize_blocks(read_block_records(source, "eng_Latn")), patterns);
  const auto tgt = filter_blocks(normalize_blocks(read_block_records(target, "gle_Latn")), patterns);
  const auto matched = match_blocks(src.document, tgt.document, tau);
  const auto pairs = matches_to_pairs(matched.matches, origin);

  std::vector<json> records;
  for (const auto& p : pairs) records.push_back(to_json(p));
  write_jsonl(output,
              meta_for(config, "align-blocks",
                       {{"artifact", "corpus"},
                        {"distance", "euclidean_bbox_center_unit_square"},
                        {"threshold", tau},
                        {"matching", "greedy_ascending"},
                        {"removed_source_blocks", src.removed},
                        {"removed_target_blocks", tgt.removed},
                        {"matches", matched.matches.size()},
                        {"unmatched_source", matched.unmatched_source},
                        {"unmatched_target", matched.unmatched_target},
                        {"excess_source_pages", matched.excess_source_pages},
                        {"excess_target_pages", matched.excess_target_pages},
                        {"pairs", pairs.size()}}),
              records);
  if (matched.excess_source_pages || matched.excess_target_pages) {
    io.err << "align-blocks: page counts differ; " << matched.excess_source_pages << " source and "
           << matched.excess_target_pages << " target pages left unpaired\n";
  }
  io.out << "align-blocks: " << matched.matches.size() << " matches, " << pairs.size() << " pairs -> "
         << output.string() << "\n";
  return 0;
}

int run_evaluate(const PipelineConfig& config, const CommandFlags& flags, CommandIo io) {
  const auto& section = config.section("eval");
  fs::path input;
  if (flags.input) {
    input = *flags.input;
  } else if (section.contains("eval_set")) {
    input = config.resolve(section.at("eval_set").get<std::string>());
  } else {
    input = fs::path(required_path(config, std::nullopt, "split", "output_dir")) / "eval.jsonl";
  }
  const fs::path hyp_path = required_path(config, flags.hypotheses, "eval", "hypotheses");
  const RoutingMode mode =
      routing_mode_from_string(flags.mode.value_or(get_or<std::string>(section, "mode", "classifier_labeled")));
  const auto eval_pairs = read_labeled(input);

  std::map<std::string, std::string> hypotheses;
  if (hyp_path.extension() == ".json") {
    try {
      hypotheses = json::parse(read_file(hyp_path)).get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::parse, "hypotheses '" + hyp_path.string() + "': " + e.what());
    }
  } else {
    const auto lines = read_lines(hyp_path);
    if (lines.size() != eval_pairs.size()) {
      throw Error(ErrorCategory::alignment, "hypothesis file has " + std::to_string(lines.size()) +
                                                " lines but the evaluation set has " +
                                                std::to_string(eval_pairs.size()) + " pairs");
    }
    for (std::size_t i = 0; i < lines.size(); ++i) hypotheses[eval_pairs[i].pair.source_text] = lines[i];
  }

  EvalOptions options;
  options.config_id = get_or<std::string>(section, "config_name", config.config_id);
  options.bleu.add_one_smoothing = get_or(section, "smoothing", false);
  std::shared_ptr<EmbedderClient> embedder;
  std::shared_ptr<CentroidIndex> index;
  if (mode == RoutingMode::centroid_routed) {
    index = std::make_shared<CentroidIndex>(load_index(required_path(config, flags.index, "index", "path")));
    embedder = make_embedder(config);
    options.assigner = [index, embedder](std::span<const LabeledPair> pairs) {
      std::vector<std::string> texts;
      for (const auto& p : pairs) texts.push_back(p.pair.source_text);
      std::vector<DomainLabel> out;
      for (const auto& d : route_batch(texts, *index, *embedder)) out.push_back(d.chosen);
      return out;
    };
  } else if (mode == RoutingMode::by_corpus) {
    options.assigner = corpus_assigner(corpus_domain_map(config));
  }
  const auto report = stratified_eval(eval_pairs, hypotheses, mode, options);
  if (!report.missing.empty()) {
    io.err << "evaluate: " << report.missing.size() << " evaluation pairs have no hypothesis\n";
  }
  json report_json = to_json(report);
  report_json["_meta"] = meta_for(config, "evaluate", {{"artifact", "eval_report"}});
  const fs::path output = required_path(config, flags.output, "eval", "output_json");
  write_file(output, report_json.dump(2) + "\n");
  const std::string markdown = render_report(report, ReportFormat::markdown_table);
  if (flags.output_markdown || section.contains("output_markdown")) {
    write_file(required_path(config, flags.output_markdown, "eval", "output_markdown"), markdown);
  }
  io.out << markdown;
  return 0;
}

int run_command(const std::string& subcommand, const PipelineConfig& config, const CommandFlags& flags,
                CommandIo io) {
  static const std::map<std::string, int (*)(const PipelineConfig&, const CommandFlags&, CommandIo)> table{
      {"ingest", run_ingest},       {"stats", run_stats},   {"label", run_label},
      {"split", run_split},         {"centroids", run_centroids}, {"route", run_route},
      {"serve", run_serve},         {"align-blocks", run_align_blocks}, {"evaluate", run_evaluate},
  };
  try {
    auto it = table.find(subcommand);
    if (it == table.end()) throw Error(ErrorCategory::config, "unknown subcommand '" + subcommand + "'");
    return it->second(config, flags, io);
  } catch (const Error& e) {
    io.err << "error " << category_name(e.category()) << ": " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    io.err << "error config: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    io.err << "error io: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace semiroute
