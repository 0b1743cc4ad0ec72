#include "metacog/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_set>
#include <variant>

#include "metacog/error.hpp"
#include "metacog/parallel.hpp"
#include "metacog/random.hpp"

namespace metacog {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<std::string> all_models() {
  return {std::string(kModelOnline), std::string(kModelRetrospective),
          std::string(kModelThresholding), std::string(kModelLesioned),
          std::string(kModelFitted)};
}

namespace {

bool has_model(const std::vector<std::string>& models, std::string_view m) {
  return std::find(models.begin(), models.end(), m) != models.end();
}

std::string normalize_key(std::string_view key) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParameterError("invalid value '" + s + "' for " + std::string(key));
  }
  return value;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string format_cell(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string fixed(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

void log_line(const ExperimentConfig& config, const std::string& message) {
  if (!config.quiet) std::cerr << message << '\n';
}

}  // namespace

void ExperimentConfig::validate() const {
  const CategorySet cats(categories);
  prior.validate(cats);
  filter.validate();
  threshold.validate();
  if (num_systems < 1) throw ParameterError("systems must be at least 1");
  if (world_states_per_system < 1) throw ParameterError("world_states must be at least 1");
  if (jobs < 1) throw ParameterError("jobs must be at least 1");
  if (models.empty()) throw ParameterError("models must name at least one model");
  const auto known = all_models();
  for (const auto& m : models) {
    if (!has_model(known, m)) throw ParameterError("unknown model '" + m + "'");
  }
  if (inference == InferenceMode::kExact && cats.size() > 30) {
    throw ParameterError("exact inference supports at most 30 categories");
  }
}

ParticleFilterConfig ExperimentConfig::effective_filter() const {
  ParticleFilterConfig f = filter;
  f.world_state_mode =
      inference == InferenceMode::kSampled ? WorldStateMode::kSample : WorldStateMode::kEnumerate;
  return f;
}

void apply_setting(ExperimentConfig& c, std::string_view raw_key, std::string_view value) {
  const std::string key = normalize_key(trim(raw_key));
  const std::string v = trim(value);
  auto choice = [&](std::initializer_list<std::string_view> options) {
    for (auto o : options) {
      if (v == o) return;
    }
    std::string msg = "invalid value '" + v + "' for " + key + " (expected one of:";
    for (auto o : options) msg += " " + std::string(o);
    throw ParameterError(msg + ")");
  };

  if (key == "systems") {
    c.num_systems = parse_number<std::int64_t>(key, v);
  } else if (key == "world_states") {
    c.world_states_per_system = parse_number<int>(key, v);
  } else if (key == "particles") {
    c.filter.num_particles = parse_number<int>(key, v);
  } else if (key == "frames_min") {
    c.prior.frames_lo = parse_number<int>(key, v);
  } else if (key == "frames_max") {
    c.prior.frames_hi = parse_number<int>(key, v);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "models") {
    c.models.clear();
    for (auto& m : split(v, ',')) {
      if (!m.empty()) c.models.push_back(m);
    }
  } else if (key == "out") {
    c.out_dir = v;
  } else if (key == "format") {
    choice({"csv", "jsonl"});
    c.format = v == "csv" ? OutputFormat::kCsv : OutputFormat::kJsonl;
  } else if (key == "jobs") {
    c.jobs = parse_number<int>(key, v);
  } else if (key == "categories") {
    c.categories = parse_number<int>(key, v);
  } else if (key == "inference") {
    choice({"sampled", "exact"});
    c.inference = v == "sampled" ? InferenceMode::kSampled : InferenceMode::kExact;
  } else if (key == "beta_alpha") {
    c.prior.beta_alpha = parse_number<double>(key, v);
  } else if (key == "beta_beta") {
    c.prior.beta_beta = parse_number<double>(key, v);
  } else if (key == "poisson_lambda") {
    c.prior.poisson_lambda = parse_number<double>(key, v);
  } else if (key == "count_bounds") {
    const auto parts = split(v, ',');
    if (parts.size() != 2) throw ParameterError("count_bounds expects lo,hi");
    c.prior.count_lo = parse_number<int>(key, parts[0]);
    c.prior.count_hi = parse_number<int>(key, parts[1]);
  } else if (key == "frames_bounds") {
    const auto parts = split(v, ',');
    if (parts.size() != 2) throw ParameterError("frames_bounds expects lo,hi");
    c.prior.frames_lo = parse_number<int>(key, parts[0]);
    c.prior.frames_hi = parse_number<int>(key, parts[1]);
  } else if (key == "proposal_sigma") {
    c.filter.proposal_sigma = parse_number<double>(key, v);
  } else if (key == "rejuvenation_sweeps") {
    c.filter.rejuvenation_sweeps = parse_number<int>(key, v);
  } else if (key == "ess_threshold") {
    c.filter.ess_resample_threshold = parse_number<double>(key, v);
  } else if (key == "enumeration_limit") {
    c.filter.enumeration_limit = parse_number<int>(key, v);
  } else if (key == "rejuvenation_policy") {
    choice({"every", "after_resample"});
    c.filter.rejuvenation_policy = v == "every" ? RejuvenationPolicy::kEveryObservation
                                                : RejuvenationPolicy::kAfterResample;
  } else if (key == "lesion_point") {
    choice({"map", "mean"});
    c.lesion_point = v == "map" ? LesionPoint::kPriorMap : LesionPoint::kPriorMean;
  } else if (key == "threshold") {
    c.threshold.theta = parse_number<double>(key, v);
  } else if (key == "threshold_comparison") {
    choice({"at_least", "strict"});
    c.threshold.comparison = v == "at_least" ? ThresholdComparison::kAtLeast
                                             : ThresholdComparison::kStrictlyAbove;
  } else if (key == "error_map_run") {
    c.error_map_run = v;
  } else {
    throw ParameterError("unknown configuration key '" + std::string(raw_key) + "'");
  }
}

void apply_config_file(ExperimentConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParameterError(path.string() + ":" + std::to_string(number) + ": expected key=value");
    }
    try {
      apply_setting(config, body.substr(0, eq), body.substr(eq + 1));
    } catch (const ParameterError& e) {
      throw ParameterError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

std::map<std::string, std::string> config_echo(const ExperimentConfig& c) {
  std::map<std::string, std::string> m;
  m["categories"] = std::to_string(c.categories);
  m["systems"] = std::to_string(c.num_systems);
  m["world_states"] = std::to_string(c.world_states_per_system);
  m["seed"] = std::to_string(c.seed);
  m["beta_alpha"] = format_double(c.prior.beta_alpha);
  m["beta_beta"] = format_double(c.prior.beta_beta);
  m["poisson_lambda"] = format_double(c.prior.poisson_lambda);
  m["count_bounds"] = std::to_string(c.prior.count_lo) + "," + std::to_string(c.prior.count_hi);
  m["frames_bounds"] = std::to_string(c.prior.frames_lo) + "," + std::to_string(c.prior.frames_hi);
  m["particles"] = std::to_string(c.filter.num_particles);
  m["proposal_sigma"] = format_double(c.filter.proposal_sigma);
  m["rejuvenation_sweeps"] = std::to_string(c.filter.rejuvenation_sweeps);
  m["ess_threshold"] = format_double(c.filter.ess_resample_threshold);
  m["enumeration_limit"] = std::to_string(c.filter.enumeration_limit);
  m["rejuvenation_policy"] =
      c.filter.rejuvenation_policy == RejuvenationPolicy::kEveryObservation ? "every"
                                                                            : "after_resample";
  m["inference"] = c.inference == InferenceMode::kSampled ? "sampled" : "exact";
  m["lesion_point"] = c.lesion_point == LesionPoint::kPriorMap ? "map" : "mean";
  m["threshold"] = format_double(c.threshold.theta);
  m["threshold_comparison"] =
      c.threshold.comparison == ThresholdComparison::kAtLeast ? "at_least" : "strict";
  std::string models;
  for (const auto& s : c.models) models += (models.empty() ? "" : ",") + s;
  m["models"] = models;
  return m;
}

std::string sha256_hex_of_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

// ---------------------------------------------------------------------------
// Per-run evaluation

namespace {

bool runs_exact(const ExperimentConfig& config) {
  return config.inference == InferenceMode::kExact &&
         config.categories <= config.filter.enumeration_limit;
}

ModelOutput to_output(const std::vector<WorldStateEstimate>& estimates) {
  ModelOutput out;
  for (const auto& e : estimates) {
    out.states.push_back(e.state);
    out.mass.push_back(e.posterior_mass);
  }
  return out;
}

}  // namespace

JointOutput infer_joint(std::span<const DetectionStats> observations,
                            const ExperimentConfig& config, std::uint64_t seed,
                            const VisualSystem* v_true, std::span<const WorldState> w_true) {
  const CategorySet cats = config.category_set();
  ParticleFilterConfig filter = config.effective_filter();
  filter.seed = derive_seed(seed, "online");

  JointOutput out;
  out.trace = run_online(observations, filter, config.prior, cats, v_true, w_true);
  for (const auto& step : out.trace.steps) {
    out.online.states.push_back(step.map.state);
    out.online.mass.push_back(step.map.posterior_mass);
  }
  const WorldStatePrior world_prior(config.prior, cats);
  const MetaEstimate v_mu = out.trace.final_v_mu();
  if (runs_exact(config)) {
    out.retrospective = to_output(retrospective_infer(v_mu, observations, world_prior));
  } else {
    Rng rng(derive_seed(seed, "retrospective"));
    out.retrospective = to_output(retrospective_infer_sampled(v_mu, observations, world_prior,
                                                              filter.num_particles, rng));
  }
  return out;
}

RunResult evaluate_run(const Run& run, const ExperimentConfig& config) {
  const CategorySet cats = config.category_set();
  if (run.v_true.categories() != cats.size()) {
    throw InputError("run " + run.run_id + " has the wrong category count");
  }
  RunResult r;
  r.run_id = run.run_id;
  r.seed = run.seed;
  r.v_true = run.v_true;
  r.truth = run.world_states;
  r.stats = run.detection_stats(cats);
  for (std::size_t t = 0; t < run.observations.size(); ++t) {
    r.noise.push_back(observation_noise(run.world_states[t], run.observations[t], cats));
  }

  const bool want_online = has_model(config.models, kModelOnline);
  const bool want_retro = has_model(config.models, kModelRetrospective);
  if (want_online || want_retro) {
    JointOutput mg = infer_joint(r.stats, config, run.seed, &run.v_true, run.world_states);
    r.prior_mse = meta_mse(run.v_true, mg.trace.prior_v_mu);
    for (const auto& step : mg.trace.steps) {
      r.online_mse.push_back({*step.mse, *step.mse_fa, *step.mse_miss});
    }
    r.v_mu = mg.trace.final_v_mu();
    if (want_online) r.models[std::string(kModelOnline)] = std::move(mg.online);
    if (want_retro) r.models[std::string(kModelRetrospective)] = std::move(mg.retrospective);
  }
  if (has_model(config.models, kModelThresholding)) {
    ModelOutput out;
    for (const auto& s : r.stats) out.states.push_back(threshold_infer(s, config.threshold));
    r.models[std::string(kModelThresholding)] = std::move(out);
  }
  if (has_model(config.models, kModelLesioned)) {
    const MetaEstimate v0 = lesioned_meta_estimate(config.prior, cats, config.lesion_point);
    const WorldStatePrior world_prior(config.prior, cats);
    if (runs_exact(config)) {
      r.models[std::string(kModelLesioned)] =
          to_output(retrospective_infer(v0, r.stats, world_prior));
    } else {
      Rng rng(derive_seed(run.seed, "lesioned"));
      r.models[std::string(kModelLesioned)] = to_output(retrospective_infer_sampled(
          v0, r.stats, world_prior, config.filter.num_particles, rng));
    }
  }
  return r;
}

namespace {

json mse_to_json(const MseBreakdown& m) { return json::array({m.combined, m.fa_only, m.miss_only}); }

MseBreakdown mse_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json v_to_json(const VisualSystem& v) {
  json a = json::array();
  for (double x : v.fa) a.push_back(x);
  for (double x : v.miss) a.push_back(x);
  return a;
}

VisualSystem v_from_json(const json& j, CategorySet cats) {
  const auto flat = j.get<std::vector<double>>();
  if (flat.empty()) return {};
  const std::size_t c = static_cast<std::size_t>(cats.size());
  if (flat.size() != 2 * c) throw InputError("visual system has the wrong length");
  VisualSystem v;
  v.fa.assign(flat.begin(), flat.begin() + c);
  v.miss.assign(flat.begin() + c, flat.end());
  return v;
}

json states_to_json(const std::vector<WorldState>& states) {
  json a = json::array();
  for (WorldState w : states) a.push_back(w.indices());
  return a;
}

std::vector<WorldState> states_from_json(const json& j) {
  std::vector<WorldState> out;
  for (const auto& item : j) {
    WorldState w;
    for (const auto& c : item) {
      const int idx = c.get<int>();
      if (idx < 0 || idx >= CategorySet::kMaxCategories) throw InputError("bad category index");
      w.insert(idx);
    }
    out.push_back(w);
  }
  return out;
}

}  // namespace

std::string serialize_result(const RunResult& r) {
  json counts = json::array();
  json frames = json::array();
  for (const auto& s : r.stats) {
    counts.push_back(s.counts);
    frames.push_back(s.frames);
  }
  json noise = json::array();
  for (const auto& z : r.noise) noise.push_back(json::array({z.disagreements, z.cells}));
  json online_mse = json::array();
  for (const auto& m : r.online_mse) online_mse.push_back(mse_to_json(m));
  json models = json::object();
  for (const auto& [name, out] : r.models) {
    json m{{"states", states_to_json(out.states)}};
    if (!out.mass.empty()) m["mass"] = out.mass;
    models[name] = std::move(m);
  }
  json j{{"run_id", r.run_id},
         {"seed", r.seed},
         {"v_true", v_to_json(r.v_true)},
         {"v_mu", v_to_json(r.v_mu)},
         {"truth", states_to_json(r.truth)},
         {"frames", std::move(frames)},
         {"counts", std::move(counts)},
         {"noise", std::move(noise)},
         {"prior_mse", mse_to_json(r.prior_mse)},
         {"online_mse", std::move(online_mse)},
         {"models", std::move(models)}};
  return j.dump();
}

RunResult parse_result(const std::string& line, CategorySet cats) {
  try {
    const json j = json::parse(line);
    RunResult r;
    r.run_id = j.at("run_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.v_true = v_from_json(j.at("v_true"), cats);
    r.v_mu = v_from_json(j.at("v_mu"), cats);
    r.truth = states_from_json(j.at("truth"));
    const auto& frames = j.at("frames");
    const auto& counts = j.at("counts");
    if (frames.size() != r.truth.size() || counts.size() != r.truth.size()) {
      throw InputError("result " + r.run_id + ": observation arrays differ in length");
    }
    for (std::size_t t = 0; t < frames.size(); ++t) {
      DetectionStats s;
      s.frames = frames[t].get<int>();
      s.counts = counts[t].get<std::vector<int>>();
      if (s.categories() != cats.size()) throw InputError("result " + r.run_id + ": bad counts");
      r.stats.push_back(std::move(s));
    }
    for (const auto& z : j.at("noise")) {
      r.noise.push_back({z.at(0).get<std::int64_t>(), z.at(1).get<std::int64_t>()});
    }
    r.prior_mse = mse_from_json(j.at("prior_mse"));
    for (const auto& m : j.at("online_mse")) r.online_mse.push_back(mse_from_json(m));
    for (const auto& [name, m] : j.at("models").items()) {
      ModelOutput out;
      out.states = states_from_json(m.at("states"));
      if (m.contains("mass")) out.mass = m.at("mass").get<std::vector<double>>();
      if (out.states.size() != r.truth.size()) {
        throw InputError("result " + r.run_id + ": model " + name + " has the wrong length");
      }
      r.models[name] = std::move(out);
    }
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed result record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

SynthOutcome cmd_synth(const ExperimentConfig& config) {
  config.validate();
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());

  CorpusHeader header;
  header.categories = config.category_set();
  header.prior = config.prior;
  header.world_states_per_system = config.world_states_per_system;
  header.num_systems = config.num_systems;
  header.root_seed = config.seed;

  SynthOutcome out;
  out.corpus = config.out_dir / "corpus.jsonl";
  out.manifest = config.out_dir / "manifest.json";
  CorpusWriter writer(out.corpus, header);
  synthesize_corpus(header, config.jobs, [&](const Run& run) {
    writer.write(run);
    if (writer.runs_written() % 100 == 0) {
      log_line(config, "synth: " + std::to_string(writer.runs_written()) + "/" +
                           std::to_string(config.num_systems) + " runs");
    }
  });
  writer.close();
  out.sha256 = sha256_hex_of_file(out.corpus);

  json manifest{{"corpus", out.corpus.filename().string()},
                {"sha256", out.sha256},
                {"schema_version", kCorpusSchemaVersion},
                {"num_systems", config.num_systems},
                {"world_states_per_system", config.world_states_per_system},
                {"categories", config.categories},
                {"config", config_echo(config)}};
  std::ofstream m(out.manifest, std::ios::binary | std::ios::trunc);
  m << manifest.dump(2) << '\n';
  if (!m) throw IoError("cannot write " + out.manifest.string());
  return out;
}

namespace {

std::string results_header(const ExperimentConfig& config) {
  auto echo = config_echo(config);
  // Corpus size and seed describe the corpus, not how it is evaluated.
  echo.erase("systems");
  echo.erase("world_states");
  echo.erase("seed");
  return json{{"schema", "metacog.results"},
              {"schema_version", 1},
              {"categories", config.categories},
              {"models", config.models},
              {"config", echo}}
      .dump();
}

// Best-effort id of a record that may not parse; falls back to its line.
std::string extract_run_id(const std::string& line, std::int64_t line_number = 0) {
  const std::string key = "\"run_id\":\"";
  const std::string fallback = "line " + std::to_string(line_number);
  const auto pos = line.find(key);
  if (pos == std::string::npos) return fallback;
  const auto end = line.find('"', pos + key.size());
  return end == std::string::npos ? fallback : line.substr(pos + key.size(), end - pos - key.size());
}

}  // namespace

RunOutcome cmd_run(const ExperimentConfig& base, const fs::path& corpus) {
  base.validate();
  CorpusReader reader(corpus);
  ExperimentConfig config = base;
  // The corpus records the priors that generated it; inference uses the same.
  config.categories = reader.header().categories.size();
  config.prior = reader.header().prior;
  config.validate();

  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());

  RunOutcome outcome;
  outcome.results = config.out_dir / "results.jsonl";
  const std::string header = results_header(config);
  std::unordered_set<std::string> done;

  if (fs::exists(outcome.results)) {
    std::ifstream in(outcome.results, std::ios::binary);
    std::string line;
    std::uintmax_t good_bytes = 0;
    bool header_ok = false;
    while (std::getline(in, line)) {
      if (in.eof()) break;  // no trailing newline: an interrupted write
      if (!header_ok) {
        if (line != header) {
          throw InputError(outcome.results.string() +
                           " was produced with a different configuration; remove it or "
                           "choose another --out");
        }
        header_ok = true;
      } else {
        try {
          done.insert(parse_result(line, config.category_set()).run_id);
        } catch (const InputError&) {
          break;
        }
      }
      good_bytes += line.size() + 1;
    }
    in.close();
    fs::resize_file(outcome.results, good_bytes);
    outcome.resumed = static_cast<std::int64_t>(done.size());
    if (outcome.resumed > 0) {
      log_line(config, "run: resuming, " + std::to_string(outcome.resumed) + " runs already done");
    }
  }

  std::ofstream out(outcome.results, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open " + outcome.results.string() + " for writing");
  if (fs::file_size(outcome.results) == 0) out << header << '\n';

  struct Work {
    CorpusReader::RawRecord record;
  };
  struct Done {
    std::string run_id;
    std::string line;  // empty when skipped
    std::string error;
    bool already_done = false;
  };
  const CategorySet cats = config.category_set();
  std::int64_t written = 0;
  ordered_parallel_map<Work>(
      [&]() -> std::optional<Work> {
        auto rec = reader.next_record();
        if (!rec) return std::nullopt;
        return Work{std::move(*rec)};
      },
      config.jobs,
      [&](Work& w) {
        Done d;
        try {
          const Run run = parse_run(w.record.line, cats);
          d.run_id = run.run_id;
          if (done.count(run.run_id) > 0) {
            d.already_done = true;
            return d;
          }
          d.line = serialize_result(evaluate_run(run, config));
        } catch (const InputError& e) {
          d.run_id = extract_run_id(w.record.line, w.record.line_number);
          d.error = "line " + std::to_string(w.record.line_number) + ": " + e.what();
        } catch (const ParameterError& e) {
          d.run_id = extract_run_id(w.record.line, w.record.line_number);
          d.error = "line " + std::to_string(w.record.line_number) + ": " + e.what();
        }
        return d;
      },
      [&](Done&& d) {
        if (d.already_done) return;
        if (!d.error.empty()) {
          log_line(config, "run: skipping corrupted record " + d.run_id + " (" + d.error + ")");
          outcome.skipped.push_back(d.run_id);
          return;
        }
        out << d.line << '\n';
        out.flush();
        if (!out) throw IoError("write failed on " + outcome.results.string());
        ++written;
        if (written % 50 == 0) log_line(config, "run: " + std::to_string(written) + " runs done");
      });
  out.close();
  outcome.completed = outcome.resumed + written;

  json summary{{"results", outcome.results.filename().string()},
               {"runs_completed", outcome.completed},
               {"skipped_records", outcome.skipped}};
  std::ofstream s(config.out_dir / "run_summary.json", std::ios::binary | std::ios::trunc);
  s << summary.dump(2) << '\n';
  if (!s) throw IoError("cannot write run_summary.json");
  return outcome;
}

// ---------------------------------------------------------------------------
// Report

namespace {

// Order-independent sum of values in [0, 1]: each term is rounded to a
// multiple of 2^-40 and added exactly (good for about 8e6 terms).
class ExactSum {
 public:
  void add(double x) { acc_ += std::llround(std::ldexp(x, 40)); }
  double value() const { return std::ldexp(static_cast<double>(acc_), -40); }

 private:
  std::int64_t acc_ = 0;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ResultsFile {
  CategorySet categories{5};
  std::vector<std::string> models;
  std::vector<std::string> lines;
};

// Reads header and records; records are sorted by run_id so every
// aggregate is independent of the order runs were written in.
ResultsFile read_results(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open results file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw InputError("results file " + path.string() + " is empty");
  }
  ResultsFile rf;
  try {
    const json h = json::parse(line);
    if (h.at("schema").get<std::string>() != "metacog.results") {
      throw InputError(path.string() + " is not a results file");
    }
    rf.categories = CategorySet(h.at("categories").get<int>());
    rf.models = h.at("models").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw InputError("malformed results header: " + std::string(e.what()));
  }
  while (std::getline(in, line)) {
    if (!line.empty()) rf.lines.push_back(std::move(line));
  }
  if (rf.lines.empty()) throw InputError("results file " + path.string() + " contains no runs");
  std::vector<std::pair<std::string, std::size_t>> keyed;
  for (std::size_t i = 0; i < rf.lines.size(); ++i) keyed.emplace_back(extract_run_id(rf.lines[i]), i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> sorted;
  sorted.reserve(rf.lines.size());
  for (const auto& [id, i] : keyed) sorted.push_back(std::move(rf.lines[i]));
  rf.lines = std::move(sorted);
  return rf;
}

// Report models in canonical order.
std::vector<std::string> report_models(const std::vector<std::string>& available,
                                       const std::vector<std::string>& required) {
  std::vector<std::string> missing;
  for (const auto& m : required) {
    if (m == kModelFitted) continue;  // derived from the stored detection counts
    if (!has_model(available, m)) missing.push_back(m);
  }
  if (!missing.empty()) {
    std::string msg = "results are missing model columns:";
    for (const auto& m : missing) msg += " " + m;
    throw InputError(msg);
  }
  std::vector<std::string> out;
  for (const auto& m : all_models()) {
    if (has_model(required, m)) out.push_back(m);
  }
  return out;
}

}  // namespace

double ReportAggregate::accuracy_at(std::string_view model, std::size_t observation) const {
  const auto it = accuracy_by_step.find(std::string(model));
  if (it == accuracy_by_step.end() || observation < 1 || observation > it->second.size()) {
    throw ParameterError("no accuracy for model " + std::string(model) + " at observation " +
                         std::to_string(observation));
  }
  return it->second[observation - 1];
}

std::size_t ReportAggregate::model_index(std::string_view model) const {
  const auto it = std::find(models.begin(), models.end(), model);
  if (it == models.end()) throw ParameterError("model not in report: " + std::string(model));
  return static_cast<std::size_t>(it - models.begin());
}

ReportAggregate aggregate_results(const fs::path& path,
                                  const std::vector<std::string>& required_models,
                                  double window_halfwidth) {
  const ResultsFile rf = read_results(path);
  ReportAggregate agg;
  agg.models = report_models(rf.models, required_models);
  const bool want_fitted = has_model(agg.models, kModelFitted);

  // Pass 1: fit the threshold (all runs, plus a split by run-id hash parity).
  ThresholdFitter fit_all;
  ThresholdFitter fit_even;
  ThresholdFitter fit_odd;
  std::vector<RunResult> parsed;
  for (const auto& line : rf.lines) {
    RunResult r = parse_result(line, rf.categories);
    ThresholdFitter& half = (fnv1a(r.run_id) & 1U) == 0 ? fit_even : fit_odd;
    for (std::size_t t = 0; t < r.stats.size(); ++t) {
      fit_all.add(r.stats[t], r.truth[t]);
      half.add(r.stats[t], r.truth[t]);
    }
  }
  agg.fitted = fit_all.best();
  if (fit_even.observations() > 0 && fit_odd.observations() > 0) {
    // Fit on one half, score on the other, and average both directions.
    const auto score = [](const ThresholdFitter& train, const ThresholdFitter& test) {
      const auto fit = train.best();
      const auto& grid = test.grid();
      const auto i = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), fit.theta) -
                                              grid.begin());
      return std::pair{test.accuracy_at(i), test.observations()};
    };
    const auto [a, na] = score(fit_even, fit_odd);
    const auto [b, nb] = score(fit_odd, fit_even);
    agg.fitted_heldout_accuracy = (a * na + b * nb) / static_cast<double>(na + nb);
  }
  const ThresholdPolicy fitted_policy{agg.fitted.theta, ThresholdComparison::kAtLeast};

  // Pass 2: everything else.
  const std::size_t nm = agg.models.size();
  agg.noise = NoiseAccuracyTable(agg.models);
  std::vector<ExactSum> fa_sum;
  std::vector<ExactSum> miss_sum;
  std::vector<ExactSum> comb_sum;
  std::vector<std::vector<std::int64_t>> correct_by_step(nm);
  std::vector<std::int64_t> correct_total(nm, 0);
  for (const auto& line : rf.lines) {
    const RunResult r = parse_result(line, rf.categories);
    ++agg.runs;
    const std::size_t steps = r.truth.size();
    if (!r.online_mse.empty()) {
      if (fa_sum.size() < steps + 1) {
        fa_sum.resize(steps + 1);
        miss_sum.resize(steps + 1);
        comb_sum.resize(steps + 1);
        agg.mse_runs.resize(steps + 1, 0);
      }
      fa_sum[0].add(r.prior_mse.fa_only);
      miss_sum[0].add(r.prior_mse.miss_only);
      comb_sum[0].add(r.prior_mse.combined);
      ++agg.mse_runs[0];
      for (std::size_t t = 0; t < r.online_mse.size(); ++t) {
        fa_sum[t + 1].add(r.online_mse[t].fa_only);
        miss_sum[t + 1].add(r.online_mse[t].miss_only);
        comb_sum[t + 1].add(r.online_mse[t].combined);
        ++agg.mse_runs[t + 1];
      }
    }
    if (agg.step_counts.size() < steps) agg.step_counts.resize(steps, 0);
    for (auto& v : correct_by_step) {
      if (v.size() < steps) v.resize(steps, 0);
    }
    for (std::size_t t = 0; t < steps; ++t) {
      ++agg.step_counts[t];
      ++agg.observations;
      std::vector<int> bits(nm, 0);
      for (std::size_t m = 0; m < nm; ++m) {
        WorldState inferred;
        if (agg.models[m] == kModelFitted) {
          inferred = threshold_infer(r.stats[t], fitted_policy);
        } else {
          inferred = r.models.at(agg.models[m]).states[t];
        }
        bits[m] = world_state_accuracy(r.truth[t], inferred);
        correct_by_step[m][t] += bits[m];
        correct_total[m] += bits[m];
      }
      agg.noise.add(r.noise[t], bits);
    }
  }
  (void)want_fitted;

  for (std::size_t t = 0; t < fa_sum.size(); ++t) {
    const double n = static_cast<double>(agg.mse_runs[t]);
    agg.mse_fa.push_back(fa_sum[t].value() / n);
    agg.mse_miss.push_back(miss_sum[t].value() / n);
    agg.mse_combined.push_back(comb_sum[t].value() / n);
  }
  for (std::size_t m = 0; m < nm; ++m) {
    auto& curve = agg.accuracy_by_step[agg.models[m]];
    for (std::size_t t = 0; t < agg.step_counts.size(); ++t) {
      curve.push_back(static_cast<double>(correct_by_step[m][t]) /
                      static_cast<double>(agg.step_counts[t]));
    }
    agg.overall_accuracy[agg.models[m]] =
        static_cast<double>(correct_total[m]) / static_cast<double>(agg.observations);
  }
  agg.rolling = rolling_accuracy_by_noise(agg.noise, window_halfwidth, default_noise_grid());
  return agg;
}

CellOutcome cell_outcome(bool truth, bool inferred) {
  if (truth == inferred) return CellOutcome::kCorrect;
  return truth ? CellOutcome::kMissed : CellOutcome::kFalseAlarm;
}

std::string_view to_string(CellOutcome outcome) {
  switch (outcome) {
    case CellOutcome::kCorrect:
      return "correct";
    case CellOutcome::kMissed:
      return "missed";
    case CellOutcome::kFalseAlarm:
      return "false_alarm";
  }
  return "?";
}

namespace {

using Cell = std::variant<std::string, double, std::int64_t>;

class TableWriter {
 public:
  TableWriter(const fs::path& stem, OutputFormat format, std::vector<std::string> columns)
      : format_(format), columns_(std::move(columns)) {
    path_ = stem;
    path_ += format == OutputFormat::kCsv ? ".csv" : ".jsonl";
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open " + path_.string() + " for writing");
    if (format_ == OutputFormat::kCsv) {
      for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
      out_ << '\n';
    }
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size()) throw std::logic_error("table row width mismatch");
    if (format_ == OutputFormat::kCsv) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::string>) {
                out_ << v;
              } else if constexpr (std::is_same_v<T, double>) {
                out_ << format_cell(v);
              } else {
                out_ << v;
              }
            },
            cells[i]);
      }
      out_ << '\n';
    } else {
      // Hand-assembled so number formatting matches the CSV tables.
      out_ << '{';
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        out_ << json(columns_[i]).dump() << ':';
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::string>) {
                out_ << json(v).dump();
              } else if constexpr (std::is_same_v<T, double>) {
                out_ << (std::isfinite(v) ? format_cell(v) : "null");
              } else {
                out_ << v;
              }
            },
            cells[i]);
      }
      out_ << "}\n";
    }
    if (!out_) throw IoError("write failed on " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
  OutputFormat format_;
  std::vector<std::string> columns_;
};

std::string state_labels(WorldState w, const std::vector<std::string>& vocabulary) {
  std::string s;
  for (int c : w.indices()) {
    if (!s.empty()) s += ';';
    s += c < static_cast<int>(vocabulary.size()) ? vocabulary[c] : std::to_string(c);
  }
  return s;
}

}  // namespace

ReportAggregate cmd_report(const ExperimentConfig& config, const fs::path& results) {
  config.validate();
  ReportAggregate agg = aggregate_results(results, config.models);
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());
  const fs::path& dir = config.out_dir;
  agg.prior_variance = config.prior.rate_prior_variance();

  if (!agg.mse_fa.empty()) {
    TableWriter a(dir / "mse_by_observation", config.format,
                  {"observation", "mse_fa", "mse_miss", "mse_combined", "runs"});
    for (std::size_t t = 0; t < agg.mse_fa.size(); ++t) {
      a.row({std::to_string(t), agg.mse_fa[t], agg.mse_miss[t], agg.mse_combined[t],
             agg.mse_runs[t]});
    }
    a.row({std::string("prior_baseline"), agg.prior_variance, agg.prior_variance,
           agg.prior_variance, std::int64_t{0}});
  }

  {
    std::vector<std::string> cols{"observation"};
    for (const auto& m : agg.models) cols.push_back(m);
    cols.push_back("runs");
    TableWriter b(dir / "accuracy_by_observation", config.format, cols);
    for (std::size_t t = 0; t < agg.step_counts.size(); ++t) {
      std::vector<Cell> row{static_cast<std::int64_t>(t + 1)};
      for (const auto& m : agg.models) row.emplace_back(agg.accuracy_by_step.at(m)[t]);
      row.emplace_back(agg.step_counts[t]);
      b.row(row);
    }
  }

  {
    std::vector<std::string> cols{"zeta", "observations"};
    for (const auto& m : agg.models) cols.push_back(m);
    TableWriter c(dir / "accuracy_by_noise", config.format, cols);
    for (const auto& w : agg.rolling) {
      std::vector<Cell> row{fixed(w.zeta), w.count};
      for (double a : w.accuracy) row.emplace_back(a);
      c.row(row);
    }
  }

  if (has_model(agg.models, kModelRetrospective) && has_model(agg.models, kModelThresholding)) {
    const std::size_t r = agg.model_index(kModelRetrospective);
    const std::size_t th = agg.model_index(kModelThresholding);
    TableWriter d(dir / "noise_gap", config.format,
                  {"zeta", "observations", "retrospective", "thresholding",
                   "retrospective_minus_thresholding"});
    for (const auto& w : agg.rolling) {
      d.row({fixed(w.zeta), w.count, w.accuracy[r], w.accuracy[th],
             w.accuracy[r] - w.accuracy[th]});
    }
  }

  {
    TableWriter s(dir / "summary", config.format,
                  {"model", "accuracy", "observations", "theta"});
    for (const auto& m : agg.models) {
      std::string theta;
      if (m == kModelThresholding) theta = fixed(config.threshold.theta);
      if (m == kModelFitted) theta = fixed(agg.fitted.theta);
      s.row({m, agg.overall_accuracy.at(m), agg.observations, theta});
    }
    if (has_model(agg.models, kModelFitted) && agg.fitted_heldout_accuracy) {
      s.row({std::string("fitted_thresholding_heldout"), *agg.fitted_heldout_accuracy,
             agg.observations, fixed(agg.fitted.theta)});
    }
  }

  if (config.error_map_run) {
    const ResultsFile rf = read_results(results);
    std::optional<RunResult> target;
    for (const auto& line : rf.lines) {
      if (extract_run_id(line) == *config.error_map_run) {
        target = parse_result(line, rf.categories);
        break;
      }
    }
    if (!target) throw InputError("run " + *config.error_map_run + " not found in results");
    const ThresholdPolicy fitted_policy{agg.fitted.theta, ThresholdComparison::kAtLeast};
    std::vector<std::string> cols{"observation", "category", "truth"};
    for (const auto& m : agg.models) cols.push_back(m);
    TableWriter e(dir / ("error_map_" + target->run_id), config.format, cols);
    for (std::size_t t = 0; t < target->truth.size(); ++t) {
      for (int c = 0; c < rf.categories.size(); ++c) {
        std::vector<Cell> row{static_cast<std::int64_t>(t + 1), static_cast<std::int64_t>(c),
                              static_cast<std::int64_t>(target->truth[t].contains(c) ? 1 : 0)};
        for (const auto& m : agg.models) {
          const WorldState inferred = m == kModelFitted
                                          ? threshold_infer(target->stats[t], fitted_policy)
                                          : target->models.at(m).states[t];
          row.emplace_back(std::string(
              to_string(cell_outcome(target->truth[t].contains(c), inferred.contains(c)))));
        }
        e.row(row);
      }
    }
  }
  return agg;
}

IngestOutcome cmd_ingest(const ExperimentConfig& base, const fs::path& percepts,
                         const std::vector<std::string>& vocabulary) {
  ExperimentConfig config = base;
  if (vocabulary.empty()) throw ParameterError("vocabulary must list at least one category");
  config.categories = static_cast<int>(vocabulary.size());
  config.prior.count_hi = std::min(config.prior.count_hi, config.categories);
  config.validate();
  const PerceptLog log = ingest_percepts(percepts, vocabulary);
  const CategorySet cats = config.category_set();

  std::vector<DetectionStats> stats;
  for (const auto& o : log.observations) stats.push_back(DetectionStats::from(o, cats));
  JointOutput mg = infer_joint(stats, config, config.seed);

  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());

  IngestOutcome out;
  out.v_mu = mg.trace.final_v_mu();
  out.online = std::move(mg.online);
  out.retrospective = std::move(mg.retrospective);
  out.observation_ids = log.observation_ids;

  {
    TableWriter v(config.out_dir / "meta_estimate", config.format,
                  {"category", "false_alarm", "miss"});
    for (int c = 0; c < cats.size(); ++c) v.row({vocabulary[c], out.v_mu.fa[c], out.v_mu.miss[c]});
  }
  TableWriter w(config.out_dir / "inferences", config.format,
                {"observation_id", "frames", "online_state", "online_mass",
                 "retrospective_state", "retrospective_mass"});
  for (std::size_t t = 0; t < stats.size(); ++t) {
    w.row({log.observation_ids[t], static_cast<std::int64_t>(stats[t].frames),
           state_labels(out.online.states[t], vocabulary), out.online.mass[t],
           state_labels(out.retrospective.states[t], vocabulary), out.retrospective.mass[t]});
  }
  out.output = config.out_dir /
               (config.format == OutputFormat::kCsv ? "inferences.csv" : "inferences.jsonl");
  return out;
}

}  // namespace metacog
