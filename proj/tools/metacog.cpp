// metacog: synthesize corpora, run the models, and build report tables.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metacog/error.hpp"
#include "metacog/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitParameter = 2;
constexpr int kExitInput = 3;
constexpr int kExitIo = 4;

// Flag values as typed; applied on top of the config file.
struct Flags {
  std::optional<std::string> config;
  std::vector<std::pair<std::string, std::string>> given;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_setting(CLI::App* app, Flags& flags, const std::string& name, const std::string& key,
                 const std::string& help) {
  app->add_option_function<std::string>(
      name, [&flags, key](const std::string& v) { flags.given.emplace_back(key, v); }, help);
}

void add_common(CLI::App* app, Flags& flags) {
  app->add_option("--config", flags.config, "key=value configuration file");
  add_setting(app, flags, "--systems", "systems", "Number of sampled visual systems");
  add_setting(app, flags, "--world-states", "world_states", "World states per visual system");
  add_setting(app, flags, "--particles", "particles", "Particles in the online filter");
  add_setting(app, flags, "--frames-min", "frames_min", "Fewest frames per observation");
  add_setting(app, flags, "--frames-max", "frames_max", "Most frames per observation");
  add_setting(app, flags, "--seed", "seed", "Root random seed");
  add_setting(app, flags, "--models", "models", "Comma-separated model list");
  add_setting(app, flags, "--out", "out", "Output directory");
  add_setting(app, flags, "--format", "format", "Table format: csv or jsonl");
  add_setting(app, flags, "--jobs", "jobs", "Worker threads");
  add_setting(app, flags, "--categories", "categories", "Number of object categories");
  add_setting(app, flags, "--inference", "inference", "World-state inference: sampled or exact");
  add_setting(app, flags, "--error-map-run", "error_map_run", "Run id for an error-map table");
  app->add_option("--set", flags.sets, "Any setting as key=value (repeatable)");
  app->add_flag("-q,--quiet", flags.quiet, "No progress output");
}

metacog::ExperimentConfig resolve(const Flags& flags) {
  metacog::ExperimentConfig config;
  if (flags.config) metacog::apply_config_file(config, *flags.config);
  for (const auto& s : flags.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw metacog::ParameterError("--set expects key=value, got " + s);
    metacog::apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : flags.given) metacog::apply_setting(config, key, value);
  config.quiet = flags.quiet;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metacognitive inference of visual-system noise"};
  app.require_subcommand(1);

  Flags flags;
  std::string input;
  std::string vocab;

  auto* synth = app.add_subcommand("synth", "Sample visual systems, world states and percepts");
  add_common(synth, flags);

  auto* run = app.add_subcommand("run", "Run every model over a corpus");
  run->add_option("corpus", input, "Corpus file (jsonl)")->required();
  add_common(run, flags);

  auto* report = app.add_subcommand("report", "Aggregate a results file into tables");
  report->add_option("results", input, "Results file (jsonl)")->required();
  add_common(report, flags);

  auto* ingest = app.add_subcommand("ingest", "Infer from an external percept log");
  ingest->add_option("percepts", input, "Percept log (jsonl)")->required();
  ingest->add_option("--vocab", vocab, "Comma-separated category labels")->required();
  add_common(ingest, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitParameter;
  }

  try {
    const metacog::ExperimentConfig config = resolve(flags);
    if (synth->parsed()) {
      const auto out = metacog::cmd_synth(config);
      if (!config.quiet) {
        std::cerr << "wrote " << out.corpus.string() << " (sha256 " << out.sha256 << ")\n";
      }
    } else if (run->parsed()) {
      const auto out = metacog::cmd_run(config, input);
      if (!config.quiet) {
        std::cerr << "wrote " << out.results.string() << " (" << out.completed << " runs";
        if (out.resumed > 0) std::cerr << ", " << out.resumed << " resumed";
        std::cerr << ")\n";
      }
      if (!out.skipped.empty()) {
        std::cerr << out.skipped.size() << " corrupted corpus records skipped\n";
        return kExitInput;
      }
    } else if (report->parsed()) {
      const auto agg = metacog::cmd_report(config, input);
      if (!config.quiet) {
        std::cerr << "report over " << agg.runs << " runs written to "
                  << config.out_dir.string() << "\n";
      }
    } else if (ingest->parsed()) {
      std::vector<std::string> labels;
      std::string item;
      for (char ch : vocab + ",") {
        if (ch == ',') {
          if (!item.empty()) labels.push_back(item);
          item.clear();
        } else {
          item += ch;
        }
      }
      const auto out = metacog::cmd_ingest(config, input, labels);
      if (!config.quiet) std::cerr << "wrote " << out.output.string() << "\n";
    }
  } catch (const metacog::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParameter;
  } catch (const metacog::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const metacog::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
