// semiroute: domain-labeling, centroid routing and evaluation pipeline.
//
//   semiroute <subcommand> --config <path> [flags]

#include <CLI11.hpp>

#include <iostream>

#include "semiroute/error.hpp"
#include "semiroute/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"semiroute: semi-supervised domain routing for English-Irish translation"};
  app.require_subcommand(1);

  std::string config_path;
  semiroute::CommandFlags flags;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  };

  auto* ingest = app.add_subcommand("ingest", "read corpus sources into unified records");
  add_config(ingest);
  ingest->add_option("--output,-o", flags.output, "corpus records (JSONL)");

  auto* stats = app.add_subcommand("stats", "corpus statistics table");
  add_config(stats);
  stats->add_option("--input,-i", flags.input, "corpus records (JSONL)");
  stats->add_flag("--json", flags.json, "emit JSON instead of a markdown table");

  auto* label = app.add_subcommand("label", "assign domain labels");
  add_config(label);
  label->add_option("--input,-i", flags.input, "corpus records (JSONL)");
  label->add_option("--output,-o", flags.output, "labeled records (JSONL)");
  label->add_option("--regime", flags.regime, "a | b | by-corpus")
      ->check(CLI::IsMember({"a", "b", "by-corpus", "by_corpus", "four_domain", "threshold_fallback"}));
  label->add_option("--threshold", flags.threshold, "regime b confidence threshold")->check(CLI::Range(0.0, 1.0));

  auto* split = app.add_subcommand("split", "partition by domain and split train/eval");
  add_config(split);
  split->add_option("--input,-i", flags.input, "labeled records (file or directory)");
  split->add_option("--output-dir,-o", flags.output_dir, "output directory");
  split->add_option("--train-fraction", flags.train_fraction, "train fraction in (0,1)");
  split->add_option("--seed", flags.seed, "shuffle seed");
  split->add_flag("--merge-domains", flags.merge_domains, "also write the merged full-dataset train split");

  auto* centroids = app.add_subcommand("centroids", "build and save the centroid index");
  add_config(centroids);
  centroids->add_option("--input,-i", flags.input, "labeled train records (file or directory)");
  centroids->add_option("--output,-o", flags.output, "index path");

  auto* route = app.add_subcommand("route", "route stdin lines with the centroid index");
  add_config(route);
  route->add_option("--index", flags.index, "index path");

  auto* serve = app.add_subcommand("serve", "start the translation gateway");
  add_config(serve);
  serve->add_option("--index", flags.index, "index path");
  serve->add_option("--port", flags.port, "listen port");

  auto* align = app.add_subcommand("align-blocks", "mine sentence pairs from aligned text blocks");
  add_config(align);
  align->add_option("--source", flags.source, "English block records (JSONL)");
  align->add_option("--target", flags.target, "Irish block records (JSONL)");
  align->add_option("--tau", flags.tau, "match threshold in unit-square units");
  align->add_option("--origin", flags.origin, "origin tag for emitted pairs");
  align->add_option("--output,-o", flags.output, "corpus records (JSONL)");

  auto* evaluate = app.add_subcommand("evaluate", "domain-stratified BLEU report");
  add_config(evaluate);
  evaluate->add_option("--input,-i", flags.input, "labeled evaluation records");
  evaluate->add_option("--hypotheses", flags.hypotheses, "hypotheses: JSON map or line-aligned text");
  evaluate->add_option("--mode", flags.mode, "classifier_labeled | centroid_routed | by_corpus");
  evaluate->add_option("--index", flags.index, "index path (centroid_routed)");
  evaluate->add_option("--output,-o", flags.output, "report JSON");
  evaluate->add_option("--markdown", flags.output_markdown, "report markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // Keep usage errors on the same one-line format as runtime errors.
    std::cerr << "error config: " << e.what() << "\n";
    return 2;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    const auto config = semiroute::load_pipeline_config(config_path);
    return semiroute::run_command(subcommand, config, flags, {std::cin, std::cout, std::cerr});
  } catch (const semiroute::Error& e) {
    std::cerr << "error " << semiroute::category_name(e.category()) << ": " << e.what() << "\n";
    return 1;
  }
}
