#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semiroute/centroids.hpp"
#include "semiroute/labeler.hpp"

namespace semiroute {

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Parsed pipeline configuration. Relative paths resolve against the
/// directory of the config file.
struct PipelineConfig {
  nlohmann::json raw;
  std::filesystem::path base_dir;
  /// Stable digest of the canonical config JSON.
  std::string config_id;
  std::uint64_t seed = 42;
  EnvLookup env;

  const nlohmann::json& section(const std::string& name) const;
  bool has(const std::string& name) const { return raw.contains(name); }
  std::filesystem::path resolve(const std::string& path) const;
};

PipelineConfig parse_pipeline_config(const nlohmann::json& raw, std::filesystem::path base_dir,
                                     EnvLookup env = process_env);
PipelineConfig load_pipeline_config(const std::filesystem::path& path, EnvLookup env = process_env);

/// Artifact files are JSON lines; the first line is {"_meta": {...}} with
/// the producing command, config_id and seed.
struct JsonlArtifact {
  nlohmann::json meta;
  std::vector<nlohmann::json> records;
};
void write_jsonl(const std::filesystem::path& path, const nlohmann::json& meta,
                 const std::vector<nlohmann::json>& records);
JsonlArtifact read_jsonl(const std::filesystem::path& path);

std::vector<SentencePair> read_pairs(const std::filesystem::path& path);
/// A file, or every *.jsonl directly inside a directory (name order).
std::vector<LabeledPair> read_labeled(const std::filesystem::path& path);

std::unique_ptr<ClassifierClient> make_classifier(const PipelineConfig& config);
std::unique_ptr<EmbedderClient> make_embedder(const PipelineConfig& config);

/// Flags shared by the subcommands; unset fields fall back to the config.
struct CommandFlags {
  std::optional<std::string> input;
  std::optional<std::string> output;
  std::optional<std::string> output_dir;
  std::optional<std::string> regime;
  std::optional<double> threshold;
  std::optional<double> train_fraction;
  std::optional<std::uint64_t> seed;
  bool merge_domains = false;
  bool json = false;
  std::optional<std::string> index;
  std::optional<int> port;
  std::optional<std::string> source;
  std::optional<std::string> target;
  std::optional<double> tau;
  std::optional<std::string> origin;
  std::optional<std::string> hypotheses;
  std::optional<std::string> mode;
  std::optional<std::string> output_markdown;
};

struct CommandIo {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

int run_ingest(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_stats(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_label(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_split(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_centroids(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_route(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_serve(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_align_blocks(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);
int run_evaluate(const PipelineConfig& config, const CommandFlags& flags, CommandIo io);

/// Dispatches by subcommand name; Errors become a one-line
/// "error <category>: <message>" on `err` and exit status 1.
int run_command(const std::string& subcommand, const PipelineConfig& config,
                const CommandFlags& flags, CommandIo io);

}  // namespace semiroute
