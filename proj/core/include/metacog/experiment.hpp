#pragma once

// End-to-end experiment driver behind the `metacog` command line tool:
// corpus synthesis, running every model on every run, aggregation into
// report tables, and inference over ingested percept logs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metacog/baselines.hpp"
#include "metacog/dataset.hpp"
#include "metacog/inference.hpp"
#include "metacog/metrics.hpp"
#include "metacog/model.hpp"

namespace metacog {

/// How world states are handled inside joint inference.
enum class InferenceMode {
  kSampled,  // prior-sampled world states per particle; particle-vote MAPs
  kExact,    // exact enumeration of the world-state support
};

enum class OutputFormat { kCsv, kJsonl };

inline constexpr std::string_view kModelOnline = "online";
inline constexpr std::string_view kModelRetrospective = "retrospective";
inline constexpr std::string_view kModelThresholding = "thresholding";
inline constexpr std::string_view kModelLesioned = "lesioned";
inline constexpr std::string_view kModelFitted = "fitted_thresholding";

std::vector<std::string> all_models();

struct ExperimentConfig {
  PriorConfig prior;
  int categories = 5;
  ParticleFilterConfig filter;
  InferenceMode inference = InferenceMode::kSampled;
  LesionPoint lesion_point = LesionPoint::kPriorMap;
  ThresholdPolicy threshold;
  std::int64_t num_systems = 1000;
  int world_states_per_system = 75;
  std::vector<std::string> models = all_models();
  std::filesystem::path out_dir = ".";
  OutputFormat format = OutputFormat::kCsv;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::optional<std::string> error_map_run;
  bool quiet = false;

  /// Throws ParameterError describing the first problem found.
  void validate() const;
  CategorySet category_set() const { return CategorySet(categories); }
  /// Filter settings with the world-state mode implied by `inference`.
  ParticleFilterConfig effective_filter() const;
};

/// Applies one `key=value` setting. Keys use '_' or '-' interchangeably.
/// Unknown keys and unparsable values throw ParameterError.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Flat key=value file; '#' starts a comment.
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);

/// Settings that affect results, as sorted key=value lines.
std::map<std::string, std::string> config_echo(const ExperimentConfig& config);

std::string sha256_hex_of_file(const std::filesystem::path& path);

// -- per-run evaluation -------------------------------------------------------

struct ModelOutput {
  std::vector<WorldState> states;
  std::vector<double> mass;  // posterior mass of each MAP state (empty for thresholding)
};

/// Online then retrospective inference on one sequence, seeded from `seed`.
struct JointOutput {
  PosteriorTrace trace;
  ModelOutput online;
  ModelOutput retrospective;
};

JointOutput infer_joint(std::span<const DetectionStats> observations,
                            const ExperimentConfig& config, std::uint64_t seed,
                            const VisualSystem* v_true = nullptr,
                            std::span<const WorldState> w_true = {});

struct RunResult {
  std::string run_id;
  std::uint64_t seed = 0;
  VisualSystem v_true;
  MetaEstimate v_mu;
  std::vector<WorldState> truth;
  std::vector<DetectionStats> stats;
  std::vector<NoiseScore> noise;
  MseBreakdown prior_mse;
  std::vector<MseBreakdown> online_mse;
  std::map<std::string, ModelOutput> models;
};

RunResult evaluate_run(const Run& run, const ExperimentConfig& config);

std::string serialize_result(const RunResult& result);
RunResult parse_result(const std::string& line, CategorySet categories);

// -- commands ---------------------------------------------------------------

struct SynthOutcome {
  std::filesystem::path corpus;
  std::filesystem::path manifest;
  std::string sha256;
};
SynthOutcome cmd_synth(const ExperimentConfig& config);

struct RunOutcome {
  std::filesystem::path results;
  std::int64_t completed = 0;  // records in the results file
  std::int64_t resumed = 0;    // records found from an earlier invocation
  std::vector<std::string> skipped;  // corrupted corpus records
};
RunOutcome cmd_run(const ExperimentConfig& config, const std::filesystem::path& corpus);

/// Everything the report tables are built from.
struct ReportAggregate {
  std::vector<std::string> models;  // includes fitted_thresholding when thresholding ran
  std::int64_t runs = 0;
  std::int64_t observations = 0;
  double prior_variance = 0.0;
  // MSE curves: index 0 is the prior ensemble, index t is after t observations.
  std::vector<double> mse_fa;
  std::vector<double> mse_miss;
  std::vector<double> mse_combined;
  std::vector<std::int64_t> mse_runs;
  // accuracy[model][t-1] for observation t.
  std::map<std::string, std::vector<double>> accuracy_by_step;
  std::vector<std::int64_t> step_counts;
  std::map<std::string, double> overall_accuracy;
  ThresholdFitter::Fit fitted;
  std::optional<double> fitted_heldout_accuracy;
  NoiseAccuracyTable noise{{}};
  std::vector<NoiseAccuracyTable::Window> rolling;

  double accuracy_at(std::string_view model, std::size_t observation) const;
  std::size_t model_index(std::string_view model) const;
};

/// Aggregates a results file; run order does not affect the output.
ReportAggregate aggregate_results(const std::filesystem::path& results,
                                  const std::vector<std::string>& required_models,
                                  double window_halfwidth = 0.05);

/// Writes the report tables (and an error map when configured) into
/// `config.out_dir`; returns the aggregate it wrote.
ReportAggregate cmd_report(const ExperimentConfig& config, const std::filesystem::path& results);

/// Per-cell outcome of an inferred world state.
enum class CellOutcome { kCorrect, kMissed, kFalseAlarm };
CellOutcome cell_outcome(bool truth, bool inferred);
std::string_view to_string(CellOutcome outcome);

struct IngestOutcome {
  std::filesystem::path output;
  MetaEstimate v_mu;
  ModelOutput online;
  ModelOutput retrospective;
  std::vector<std::string> observation_ids;
};
IngestOutcome cmd_ingest(const ExperimentConfig& config, const std::filesystem::path& percepts,
                         const std::vector<std::string>& vocabulary);

}  // namespace metacog
