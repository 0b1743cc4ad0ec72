#include "metacog/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

#include "metacog/error.hpp"
#include "metacog/parallel.hpp"
#include "metacog/random.hpp"

namespace metacog {

using nlohmann::json;

namespace {

json set_to_json(CategorySetValue s) { return s.indices(); }

CategorySetValue set_from_json(const json& j, CategorySet categories) {
  if (!j.is_array()) throw InputError("expected an array of category indices");
  CategorySetValue s;
  for (const auto& item : j) {
    if (!item.is_number_integer()) throw InputError("category index must be an integer");
    const int c = item.get<int>();
    if (c < 0 || c >= categories.size()) {
      throw InputError("category index " + std::to_string(c) + " out of range");
    }
    s.insert(c);
  }
  return s;
}

json prior_to_json(const PriorConfig& p) {
  return json{{"beta_alpha", p.beta_alpha},         {"beta_beta", p.beta_beta},
              {"poisson_lambda", p.poisson_lambda}, {"count_bounds", {p.count_lo, p.count_hi}},
              {"frames_bounds", {p.frames_lo, p.frames_hi}}};
}

PriorConfig prior_from_json(const json& j) {
  PriorConfig p;
  p.beta_alpha = j.at("beta_alpha").get<double>();
  p.beta_beta = j.at("beta_beta").get<double>();
  p.poisson_lambda = j.at("poisson_lambda").get<double>();
  p.count_lo = j.at("count_bounds").at(0).get<int>();
  p.count_hi = j.at("count_bounds").at(1).get<int>();
  p.frames_lo = j.at("frames_bounds").at(0).get<int>();
  p.frames_hi = j.at("frames_bounds").at(1).get<int>();
  return p;
}

}  // namespace

std::vector<DetectionStats> Run::detection_stats(CategorySet categories) const {
  std::vector<DetectionStats> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(DetectionStats::from(o, categories));
  return out;
}

std::string run_id_for(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run-%06lld", static_cast<long long>(index));
  return buf;
}

Run synthesize_run(const PriorConfig& prior, CategorySet categories, int world_state_count,
                   std::uint64_t seed, std::string run_id,
                   const std::optional<VisualSystem>& v_override) {
  if (world_state_count < 1) throw ParameterError("world_state_count must be positive");
  const WorldStatePrior world_prior(prior, categories);
  Rng rng(seed);
  Run run;
  run.run_id = std::move(run_id);
  run.seed = seed;
  run.v_true = sample_visual_system(prior, categories, rng);
  if (v_override) {
    if (v_override->categories() != categories.size()) {
      throw ParameterError("visual system override has the wrong category count");
    }
    run.v_true = *v_override;
  }
  std::uniform_int_distribution<int> frames(prior.frames_lo, prior.frames_hi);
  run.world_states.reserve(world_state_count);
  run.observations.reserve(world_state_count);
  for (int t = 0; t < world_state_count; ++t) {
    const WorldState w = world_prior.sample(rng);
    const int f = frames(rng);
    Observation o;
    o.percepts.reserve(f);
    for (int i = 0; i < f; ++i) o.percepts.push_back(render_percept(w, run.v_true, rng));
    run.world_states.push_back(w);
    run.observations.push_back(std::move(o));
  }
  return run;
}

Run synthesize_corpus_run(const CorpusHeader& header, std::int64_t index) {
  return synthesize_run(header.prior, header.categories, header.world_states_per_system,
                        derive_seed(header.root_seed, static_cast<std::uint64_t>(index)),
                        run_id_for(index));
}

void synthesize_corpus(const CorpusHeader& header, int jobs,
                       const std::function<void(const Run&)>& sink) {
  if (header.num_systems < 1) throw ParameterError("num_systems must be at least 1");
  header.prior.validate(header.categories);
  std::int64_t cursor = 0;
  ordered_parallel_map<std::int64_t>(
      [&]() -> std::optional<std::int64_t> {
        if (cursor >= header.num_systems) return std::nullopt;
        return cursor++;
      },
      jobs, [&](std::int64_t i) { return synthesize_corpus_run(header, i); },
      [&](Run&& run) { sink(run); });
}

std::string serialize_header(const CorpusHeader& h) {
  json j{{"schema", "metacog.corpus"},
         {"schema_version", h.schema_version},
         {"categories", h.categories.size()},
         {"prior", prior_to_json(h.prior)},
         {"world_states_per_system", h.world_states_per_system},
         {"num_systems", h.num_systems},
         {"root_seed", h.root_seed}};
  return j.dump();
}

CorpusHeader parse_header(const std::string& line) {
  try {
    const json j = json::parse(line);
    if (j.at("schema").get<std::string>() != "metacog.corpus") {
      throw InputError("not a corpus file (schema mismatch)");
    }
    CorpusHeader h;
    h.schema_version = j.at("schema_version").get<int>();
    if (h.schema_version != kCorpusSchemaVersion) {
      throw InputError("unsupported corpus schema version " + std::to_string(h.schema_version));
    }
    h.categories = CategorySet(j.at("categories").get<int>());
    h.prior = prior_from_json(j.at("prior"));
    h.world_states_per_system = j.at("world_states_per_system").get<int>();
    h.num_systems = j.at("num_systems").get<std::int64_t>();
    h.root_seed = j.at("root_seed").get<std::uint64_t>();
    return h;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed corpus header: ") + e.what());
  } catch (const ParameterError& e) {
    throw InputError(std::string("invalid corpus header: ") + e.what());
  }
}

std::string serialize_run(const Run& run) {
  json v = json::array();
  for (double x : run.v_true.fa) v.push_back(x);
  for (double x : run.v_true.miss) v.push_back(x);
  json ws = json::array();
  for (WorldState w : run.world_states) ws.push_back(set_to_json(w));
  json obs = json::array();
  for (const Observation& o : run.observations) {
    json frames = json::array();
    for (Percept x : o.percepts) frames.push_back(set_to_json(x));
    obs.push_back(std::move(frames));
  }
  json j{{"run_id", run.run_id},
         {"seed", run.seed},
         {"v_true", std::move(v)},
         {"world_states", std::move(ws)},
         {"observations", std::move(obs)}};
  return j.dump();
}

Run parse_run(const std::string& line, CategorySet categories) {
  try {
    const json j = json::parse(line);
    Run run;
    run.run_id = j.at("run_id").get<std::string>();
    run.seed = j.at("seed").get<std::uint64_t>();
    const auto v = j.at("v_true").get<std::vector<double>>();
    const std::size_t c = static_cast<std::size_t>(categories.size());
    if (v.size() != 2 * c) {
      throw InputError("run " + run.run_id + ": v_true must hold " + std::to_string(2 * c) +
                       " values");
    }
    try {
      run.v_true = VisualSystem(std::vector<double>(v.begin(), v.begin() + c),
                                std::vector<double>(v.begin() + c, v.end()));
    } catch (const ParameterError& e) {
      throw InputError("run " + run.run_id + ": " + e.what());
    }
    for (const auto& w : j.at("world_states")) {
      run.world_states.emplace_back(set_from_json(w, categories));
    }
    for (const auto& frames : j.at("observations")) {
      Observation o;
      for (const auto& x : frames) o.percepts.emplace_back(set_from_json(x, categories));
      if (o.percepts.empty()) throw InputError("run " + run.run_id + ": empty observation");
      run.observations.push_back(std::move(o));
    }
    if (run.world_states.size() != run.observations.size()) {
      throw InputError("run " + run.run_id + ": world_states and observations differ in length");
    }
    return run;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed run record: ") + e.what());
  }
}

CorpusWriter::CorpusWriter(const std::filesystem::path& path, const CorpusHeader& header)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  out_ << serialize_header(header) << '\n';
}

void CorpusWriter::write(const Run& run) {
  out_ << serialize_run(run) << '\n';
  if (!out_) {
    throw IoError("write failed on " + path_.string() + " at run index " +
                  std::to_string(written_));
  }
  ++written_;
}

void CorpusWriter::close() {
  out_.close();
  if (!out_) throw IoError("closing " + path_.string() + " failed");
}

CorpusReader::CorpusReader(const std::filesystem::path& path) : path_(path), in_(path) {
  if (!in_) throw InputError("cannot open corpus " + path.string());
  std::string line;
  if (!std::getline(in_, line) || line.empty()) {
    throw InputError("corpus " + path.string() + " is empty");
  }
  header_ = parse_header(line);
}

std::optional<CorpusReader::RawRecord> CorpusReader::next_record() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_number_;
    if (!line.empty()) return RawRecord{std::move(line), line_number_};
  }
  return std::nullopt;
}

std::optional<Run> CorpusReader::next() {
  auto rec = next_record();
  if (!rec) return std::nullopt;
  try {
    return parse_run(rec->line, header_.categories);
  } catch (const InputError& e) {
    throw InputError(path_.string() + ":" + std::to_string(rec->line_number) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

PerceptLog ingest_percepts(std::istream& in, const std::vector<std::string>& vocabulary) {
  if (vocabulary.empty()) throw ParameterError("vocabulary is empty");
  const CategorySet categories(static_cast<int>(vocabulary.size()));
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (!index.emplace(vocabulary[i], static_cast<int>(i)).second) {
      throw ParameterError("duplicate vocabulary entry '" + vocabulary[i] + "'");
    }
  }

  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<std::int64_t, Percept>> groups;
  std::string line;
  std::int64_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_number);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw InputError(where + ": malformed record");
    }
    if (!j.is_object() || !j.contains("observation_id") || !j["observation_id"].is_string() ||
        !j.contains("frame_index") || !j["frame_index"].is_number_integer() ||
        !j.contains("labels") || !j["labels"].is_array()) {
      throw InputError(where +
                       ": record needs observation_id (string), frame_index (integer) and "
                       "labels (array)");
    }
    const auto id = j["observation_id"].get<std::string>();
    const auto frame = j["frame_index"].get<std::int64_t>();
    Percept x;
    for (const auto& label : j["labels"]) {
      if (!label.is_string()) throw InputError(where + ": labels must be strings");
      const auto name = label.get<std::string>();
      const auto it = index.find(name);
      if (it == index.end()) {
        throw InputError(where + ": unknown label '" + name + "'");
      }
      x.insert(it->second);
    }
    auto [group, inserted] = groups.try_emplace(id);
    if (inserted) order.push_back(id);
    if (!group->second.emplace(frame, x).second) {
      throw InputError(where + ": duplicate frame_index " + std::to_string(frame) +
                       " for observation '" + id + "'");
    }
  }
  if (order.empty()) throw InputError("percept log contains no observations");

  PerceptLog log;
  for (const auto& id : order) {
    Observation o;
    for (const auto& [frame, x] : groups[id]) o.percepts.push_back(x);
    if (o.percepts.empty()) throw InputError("observation '" + id + "' has no frames");
    log.observation_ids.push_back(id);
    log.observations.push_back(std::move(o));
  }
  return log;
}

PerceptLog ingest_percepts(const std::filesystem::path& path,
                           const std::vector<std::string>& vocabulary) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open percept log " + path.string());
  return ingest_percepts(in, vocabulary);
}

void write_percept_log(std::ostream& out, const PerceptLog& log,
                       const std::vector<std::string>& vocabulary) {
  if (log.observation_ids.size() != log.observations.size()) {
    throw ParameterError("percept log ids and observations differ in length");
  }
  for (std::size_t i = 0; i < log.observations.size(); ++i) {
    const auto& frames = log.observations[i].percepts;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      json labels = json::array();
      for (int c : frames[f].indices()) {
        if (c >= static_cast<int>(vocabulary.size())) {
          throw ParameterError("percept category outside vocabulary");
        }
        labels.push_back(vocabulary[c]);
      }
      out << json{{"observation_id", log.observation_ids[i]},
                  {"frame_index", f},
                  {"labels", std::move(labels)}}
                 .dump()
          << '\n';
    }
  }
}

std::vector<std::string> default_vocabulary(CategorySet categories) {
  std::vector<std::string> v;
  for (int c = 0; c < categories.size(); ++c) v.push_back("c" + std::to_string(c));
  return v;
}

}  // namespace metacog
