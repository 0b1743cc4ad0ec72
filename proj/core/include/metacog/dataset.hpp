#pragma once

// Synthetic benchmark corpora and their line-delimited JSON persistence,
// plus ingestion of percept logs produced by an external detector.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "metacog/model.hpp"

namespace metacog {

inline constexpr int kCorpusSchemaVersion = 1;

struct Run {
  std::string run_id;
  std::uint64_t seed = 0;
  VisualSystem v_true;
  std::vector<WorldState> world_states;
  std::vector<Observation> observations;

  std::vector<DetectionStats> detection_stats(CategorySet categories) const;
  friend bool operator==(const Run&, const Run&) = default;
};

struct CorpusHeader {
  int schema_version = kCorpusSchemaVersion;
  CategorySet categories{5};
  PriorConfig prior;
  int world_states_per_system = 75;
  std::int64_t num_systems = 0;
  std::uint64_t root_seed = 0;

  friend bool operator==(const CorpusHeader&, const CorpusHeader&) = default;
};

std::string run_id_for(std::int64_t index);

/// One visual system processing `world_state_count` scenes. When
/// `v_override` is set it replaces the sampled visual system.
Run synthesize_run(const PriorConfig& prior, CategorySet categories, int world_state_count,
                   std::uint64_t seed, std::string run_id,
                   const std::optional<VisualSystem>& v_override = std::nullopt);

/// Run i is synthesize_run with seed derive_seed(root_seed, i), so it is the
/// same whether produced alone or inside the stream. Runs reach `sink` in
/// index order; only a bounded batch is held in memory.
void synthesize_corpus(const CorpusHeader& header, int jobs,
                       const std::function<void(const Run&)>& sink);

Run synthesize_corpus_run(const CorpusHeader& header, std::int64_t index);

// -- serialization ----------------------------------------------------------

std::string serialize_header(const CorpusHeader& header);
CorpusHeader parse_header(const std::string& line);
std::string serialize_run(const Run& run);
Run parse_run(const std::string& line, CategorySet categories);

class CorpusWriter {
 public:
  CorpusWriter(const std::filesystem::path& path, const CorpusHeader& header);
  void write(const Run& run);
  void close();
  std::int64_t runs_written() const { return written_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::int64_t written_ = 0;
};

class CorpusReader {
 public:
  explicit CorpusReader(const std::filesystem::path& path);
  const CorpusHeader& header() const { return header_; }

  /// Next raw run record and its 1-based line number; nullopt at end.
  struct RawRecord {
    std::string line;
    std::int64_t line_number = 0;
  };
  std::optional<RawRecord> next_record();

  /// Next parsed run; throws InputError naming the line on a bad record.
  std::optional<Run> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  CorpusHeader header_;
  std::int64_t line_number_ = 1;
};

// -- external percept logs --------------------------------------------------

/// Observations grouped from a frame-per-line percept log, in order of each
/// observation id's first appearance.
struct PerceptLog {
  std::vector<std::string> observation_ids;
  std::vector<Observation> observations;
};

PerceptLog ingest_percepts(std::istream& in, const std::vector<std::string>& vocabulary);
PerceptLog ingest_percepts(const std::filesystem::path& path,
                           const std::vector<std::string>& vocabulary);

void write_percept_log(std::ostream& out, const PerceptLog& log,
                       const std::vector<std::string>& vocabulary);

/// "c0", "c1", ... for C categories.
std::vector<std::string> default_vocabulary(CategorySet categories);

}  // namespace metacog
