#include "metacog/inference.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "metacog/error.hpp"
#include "metacog/metrics.hpp"

namespace metacog {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// v_hat entries are kept inside [floor, 1 - floor] so every log factor is finite.
constexpr double kRateFloor = 1e-12;
// Log-score gap under which two MAP candidates count as tied.
constexpr double kLogTieTolerance = 1e-10;
// Relative gap under which two vote totals count as tied.
constexpr double kVoteTieTolerance = 1e-12;

struct ScaledFactors {
  double log_absent;
  double log_present;
  double absent;   // exp(log_absent - scale)
  double present;  // exp(log_present - scale)
  double scale;
};

ScaledFactors scaled_factors(double log_absent, double log_present) {
  const double scale = std::max(log_absent, log_present);
  if (scale == kNegInf) return {log_absent, log_present, 0.0, 0.0, kNegInf};
  return {log_absent, log_present, std::exp(log_absent - scale), std::exp(log_present - scale),
          scale};
}

// sum_{n=lo}^{hi} pi_n e_n where e_n is the degree-n elementary symmetric
// combination of per-category (absent, present) factors.
template <typename FactorAt>
double size_polynomial_sum(int categories, FactorAt factor_at, const WorldStatePrior& prior) {
  std::array<double, CategorySet::kMaxCategories + 1> e{};
  const int hi = prior.count_hi();
  e[0] = 1.0;
  int degree = 0;
  for (int j = 0; j < categories; ++j) {
    const auto [absent, present] = factor_at(j);
    const int top = std::min(degree + 1, hi);
    for (int n = top; n >= 1; --n) e[n] = e[n] * absent + e[n - 1] * present;
    e[0] *= absent;
    degree = top;
  }
  double sum = 0.0;
  for (int n = prior.count_lo(); n <= hi; ++n) sum += prior.state_probability_for_size(n) * e[n];
  return sum;
}

MetaEstimate clamp_rates(MetaEstimate v) {
  for (double& x : v.fa) x = std::clamp(x, kRateFloor, 1.0 - kRateFloor);
  for (double& x : v.miss) x = std::clamp(x, kRateFloor, 1.0 - kRateFloor);
  return v;
}

// Picks argmax of `scores` with near-ties resolved lexicographically.
template <typename IsTied>
std::size_t pick_best(std::span<const WorldState> states, std::span<const double> scores,
                      CategorySet categories, IsTied is_tied) {
  assert(!states.empty());
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  std::size_t chosen = best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != chosen && is_tied(scores[i], scores[best]) &&
        lexicographically_before(states[i], states[chosen], categories)) {
      chosen = i;
    }
  }
  return chosen;
}

double log_sum_exp(std::span<const double> xs) {
  const double top = *std::max_element(xs.begin(), xs.end());
  if (top == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace

void ParticleFilterConfig::validate() const {
  if (num_particles < 2) throw ParameterError("num_particles must be at least 2");
  if (!(proposal_sigma > 0.0)) throw ParameterError("proposal_sigma must be positive");
  if (rejuvenation_sweeps < 1) throw ParameterError("rejuvenation_sweeps must be positive");
  if (!(ess_resample_threshold > 0.0) || ess_resample_threshold > 1.0) {
    throw ParameterError("ess_resample_threshold must lie in (0, 1]");
  }
  if (enumeration_limit < 0 || enumeration_limit > 30) {
    throw ParameterError("enumeration_limit must lie in [0, 30]");
  }
}

double log_marginal_likelihood(const DetectionStats& stats, const VisualSystem& v,
                               const WorldStatePrior& prior) {
  const int c_count = v.categories();
  std::array<ScaledFactors, CategorySet::kMaxCategories> f;
  double log_scale = 0.0;
  for (int c = 0; c < c_count; ++c) {
    const int k = stats.counts[c];
    const int miss = stats.frames - k;
    f[c] = scaled_factors(binomial_log_kernel(k, miss, v.fa[c]),
                          binomial_log_kernel(k, miss, 1.0 - v.miss[c]));
    log_scale += f[c].scale;
  }
  if (log_scale == kNegInf) return kNegInf;
  const double s = size_polynomial_sum(
      c_count, [&](int j) { return std::pair{f[j].absent, f[j].present}; }, prior);
  return log_scale + std::log(s);
}

std::vector<double> world_state_posterior(const DetectionStats& stats, const VisualSystem& v,
                                          const WorldStatePrior& prior,
                                          std::span<const WorldState> support) {
  std::vector<double> scores(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    scores[i] = observation_log_likelihood(stats, support[i], v) + prior.log_prob(support[i]);
  }
  const double norm = log_sum_exp(scores);
  for (double& s : scores) s = norm == kNegInf ? 0.0 : std::exp(s - norm);
  return scores;
}

// ---------------------------------------------------------------------------
// Rejuvenation

namespace {

double rate_log_prior(double x, const PriorConfig& prior) {
  return beta_log_density(x, prior.beta_alpha, prior.beta_beta);
}

// Log-likelihood change over the full history when v entry `entry` moves to
// `proposed`, enumeration regime. Fills `pending` with the refreshed cache
// slots (per observation: new log factor, scaled absent, scaled present, logS).
double enumerated_delta(const Particle& p, std::span<const DetectionStats> history, int entry,
                        double proposed, const WorldStatePrior& world_prior,
                        std::vector<double>& pending) {
  const int c_count = p.v_hat.categories();
  const int c = entry % c_count;
  const bool is_miss = entry >= c_count;
  const std::size_t stride = 4 * static_cast<std::size_t>(c_count) + 1;
  const double log_x = std::log(proposed);
  const double log_1mx = std::log1p(-proposed);

  pending.resize(history.size() * 4);
  double delta = 0.0;
  for (std::size_t t = 0; t < history.size(); ++t) {
    const double* slot = p.likelihood_cache.data() + t * stride;
    const int k = history[t].counts[c];
    const int not_k = history[t].frames - k;
    double la = slot[4 * c];
    double lb = slot[4 * c + 1];
    double fresh;
    if (is_miss) {
      fresh = lb = k * log_1mx + not_k * log_x;
    } else {
      fresh = la = k * log_x + not_k * log_1mx;
    }
    const ScaledFactors nf = scaled_factors(la, lb);
    const double s = size_polynomial_sum(
        c_count,
        [&](int j) {
          return j == c ? std::pair{nf.absent, nf.present}
                        : std::pair{slot[4 * j + 2], slot[4 * j + 3]};
        },
        world_prior);
    const double log_s = std::log(s);
    const double old_scale = std::max(slot[4 * c], slot[4 * c + 1]);
    delta += (nf.scale - old_scale) + (log_s - slot[stride - 1]);
    double* out = pending.data() + 4 * t;
    out[0] = fresh;
    out[1] = nf.absent;
    out[2] = nf.present;
    out[3] = log_s;
  }
  return delta;
}

void commit_enumerated(Particle& p, int entry, std::span<const double> pending,
                       std::size_t observations) {
  const int c_count = p.v_hat.categories();
  const int c = entry % c_count;
  const bool is_miss = entry >= c_count;
  const std::size_t stride = 4 * static_cast<std::size_t>(c_count) + 1;
  for (std::size_t t = 0; t < observations; ++t) {
    double* slot = p.likelihood_cache.data() + t * stride;
    const double* in = pending.data() + 4 * t;
    slot[4 * c + (is_miss ? 1 : 0)] = in[0];
    slot[4 * c + 2] = in[1];
    slot[4 * c + 3] = in[2];
    slot[stride - 1] = in[3];
  }
}

}  // namespace

int rejuvenate(Particle& particle, std::span<const DetectionStats> history,
               const RejuvenationContext& context, Rng& rng) {
  if (history.empty()) throw ParameterError("rejuvenation needs at least one observation");
  const ParticleFilterConfig& config = *context.config;
  const PriorConfig& prior = *context.prior;
  const int entries = 2 * particle.v_hat.categories();

  thread_local std::vector<double> pending;
  std::vector<int> order(entries);
  int accepted = 0;
  for (int sweep = 0; sweep < config.rejuvenation_sweeps; ++sweep) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int entry : order) {
      const double current = particle.v_hat.entry(entry);
      const TruncatedNormal forward(current, config.proposal_sigma, 0.0, 1.0);
      const double proposed = std::clamp(forward.sample(rng), kRateFloor, 1.0 - kRateFloor);
      const TruncatedNormal backward(proposed, config.proposal_sigma, 0.0, 1.0);

      double log_ratio = rate_log_prior(proposed, prior) - rate_log_prior(current, prior) +
                         backward.log_density(current) - forward.log_density(proposed);
      if (context.enumerate) {
        log_ratio += enumerated_delta(particle, history, entry, proposed, *context.world_prior,
                                      pending);
      } else {
        const double events = static_cast<double>(particle.rate_counts[2 * entry]);
        const double non_events = static_cast<double>(particle.rate_counts[2 * entry + 1]);
        log_ratio += events * (std::log(proposed) - std::log(current)) +
                     non_events * (std::log1p(-proposed) - std::log1p(-current));
      }
      if (log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio) {
        particle.v_hat.entry(entry) = proposed;
        if (context.enumerate) commit_enumerated(particle, entry, pending, history.size());
        ++accepted;
      }
    }
  }
  return accepted;
}

// ---------------------------------------------------------------------------
// Ensemble

ParticleEnsemble::ParticleEnsemble(const ParticleFilterConfig& config, const PriorConfig& prior,
                                   CategorySet categories)
    : ParticleEnsemble(config, prior, categories, {}) {}

ParticleEnsemble::ParticleEnsemble(const ParticleFilterConfig& config, const PriorConfig& prior,
                                   CategorySet categories, std::vector<MetaEstimate> initial)
    : config_(config),
      prior_(prior),
      categories_(categories),
      world_prior_(prior, categories),
      enumerate_(config.world_state_mode == WorldStateMode::kEnumerate &&
                 categories.size() <= config.enumeration_limit),
      rng_(config.seed) {
  if (initial.empty()) {
    config_.validate();
    initial.reserve(config_.num_particles);
    for (int i = 0; i < config_.num_particles; ++i) {
      initial.push_back(sample_visual_system(prior_, categories_, rng_));
    }
  } else {
    config_.num_particles = static_cast<int>(initial.size());
    config_.validate();
  }
  if (enumerate_) support_ = world_prior_.enumerate_support();
  particles_.reserve(initial.size());
  for (auto& v : initial) {
    if (v.categories() != categories_.size()) {
      throw ParameterError("initial meta-estimate has the wrong category count");
    }
    Particle p;
    p.v_hat = clamp_rates(std::move(v));
    if (!enumerate_) p.rate_counts.assign(4 * static_cast<std::size_t>(categories_.size()), 0);
    particles_.push_back(std::move(p));
  }
}

void ParticleEnsemble::assimilate(const Observation& o) {
  if (o.percepts.empty()) throw ParameterError("observation must contain at least one percept");
  assimilate(DetectionStats::from(o, categories_));
}

void ParticleEnsemble::assimilate(const DetectionStats& stats) {
  reweight(stats);
  const bool resampled = resample_if_needed();
  if (config_.rejuvenation_policy == RejuvenationPolicy::kEveryObservation || resampled) {
    rejuvenate_all();
  }
}

void ParticleEnsemble::reweight(const DetectionStats& stats) {
  if (stats.categories() != categories_.size()) {
    throw ParameterError("observation category count does not match the ensemble");
  }
  if (stats.frames < 1) throw ParameterError("observation must contain at least one percept");
  for (int c = 0; c < categories_.size(); ++c) {
    if (stats.counts[c] < 0 || stats.counts[c] > stats.frames) {
      throw ParameterError("detection count outside [0, F]");
    }
  }
  history_.push_back(stats);
  const int c_count = categories_.size();

  for (Particle& p : particles_) {
    if (enumerate_) {
      double log_scale = 0.0;
      const std::size_t base = p.likelihood_cache.size();
      p.likelihood_cache.resize(base + 4 * static_cast<std::size_t>(c_count) + 1);
      double* slot = p.likelihood_cache.data() + base;
      for (int c = 0; c < c_count; ++c) {
        const int k = stats.counts[c];
        const ScaledFactors f =
            scaled_factors(binomial_log_kernel(k, stats.frames - k, p.v_hat.fa[c]),
                           binomial_log_kernel(k, stats.frames - k, 1.0 - p.v_hat.miss[c]));
        slot[4 * c] = f.log_absent;
        slot[4 * c + 1] = f.log_present;
        slot[4 * c + 2] = f.absent;
        slot[4 * c + 3] = f.present;
        log_scale += f.scale;
      }
      const double s = size_polynomial_sum(
          c_count, [&](int j) { return std::pair{slot[4 * j + 2], slot[4 * j + 3]}; },
          world_prior_);
      slot[4 * c_count] = std::log(s);
      p.log_weight += log_scale + slot[4 * c_count];
      p.world_beliefs.emplace_back();
      refresh_latest_belief(p);
    } else {
      const WorldState w = world_prior_.sample(rng_);
      p.log_weight += observation_log_likelihood(stats, w, p.v_hat);
      for (int c = 0; c < c_count; ++c) {
        const std::int64_t k = stats.counts[c];
        const std::int64_t not_k = stats.frames - k;
        if (w.contains(c)) {
          // miss entry: events are misses
          p.rate_counts[2 * (c_count + c)] += not_k;
          p.rate_counts[2 * (c_count + c) + 1] += k;
        } else {
          p.rate_counts[2 * c] += k;
          p.rate_counts[2 * c + 1] += not_k;
        }
      }
      p.world_beliefs.push_back(WorldBelief{{}, w});
    }
  }
}

void ParticleEnsemble::refresh_latest_belief(Particle& p) const {
  if (!enumerate_ || p.world_beliefs.empty()) return;
  const int c_count = categories_.size();
  const std::size_t stride = 4 * static_cast<std::size_t>(c_count) + 1;
  const double* slot = p.likelihood_cache.data() + (history_.size() - 1) * stride;
  double log_scale = 0.0;
  for (int c = 0; c < c_count; ++c) log_scale += std::max(slot[4 * c], slot[4 * c + 1]);
  const double log_marginal = log_scale + slot[stride - 1];

  auto& post = p.world_beliefs.back().posterior;
  post.resize(support_.size());
  for (std::size_t i = 0; i < support_.size(); ++i) {
    const WorldState w = support_[i];
    double s = world_prior_.log_state_probability_for_size(w.count());
    for (int c = 0; c < c_count; ++c) s += w.contains(c) ? slot[4 * c + 1] : slot[4 * c];
    post[i] = log_marginal == kNegInf ? 0.0 : std::exp(s - log_marginal);
  }
}

std::vector<double> ParticleEnsemble::normalized_weights() const {
  std::vector<double> w(particles_.size());
  double top = kNegInf;
  for (const Particle& p : particles_) top = std::max(top, p.log_weight);
  if (top == kNegInf) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    total += (w[i] = std::exp(particles_[i].log_weight - top));
  }
  for (double& x : w) x /= total;
  return w;
}

double ParticleEnsemble::effective_sample_size() const {
  const auto w = normalized_weights();
  double sq = 0.0;
  for (double x : w) sq += x * x;
  return 1.0 / sq;
}

bool ParticleEnsemble::weights_uniform() const {
  const auto [lo, hi] = std::minmax_element(
      particles_.begin(), particles_.end(),
      [](const Particle& a, const Particle& b) { return a.log_weight < b.log_weight; });
  return hi->log_weight - lo->log_weight <= 1e-12;
}

bool ParticleEnsemble::resample_if_needed() {
  resampled_last_step_ = false;
  if (effective_sample_size() < config_.ess_resample_threshold * config_.num_particles) {
    resample();
    resampled_last_step_ = true;
  }
  return resampled_last_step_;
}

void ParticleEnsemble::resample() {
  const auto w = normalized_weights();
  const std::size_t n = particles_.size();
  const double step = 1.0 / static_cast<double>(n);
  double u = uniform01(rng_) * step;
  double cumulative = w[0];
  std::size_t j = 0;
  std::vector<Particle> next;
  next.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    while (u > cumulative && j + 1 < n) cumulative += w[++j];
    next.push_back(particles_[j]);
    next.back().log_weight = 0.0;
    u += step;
  }
  particles_ = std::move(next);
  ++resample_count_;
}

void ParticleEnsemble::rejuvenate_all() {
  const RejuvenationContext ctx{&config_, &prior_, &world_prior_, enumerate_};
  for (Particle& p : particles_) {
    accepted_moves_ += rejuvenate(p, history_, ctx, rng_);
    refresh_latest_belief(p);
  }
}

VEstimate ParticleEnsemble::estimate() const {
  if (particles_.empty()) throw ParameterError("cannot estimate from an empty ensemble");
  const auto w = normalized_weights();
  const int c_count = categories_.size();
  VEstimate out;
  out.weighted = !weights_uniform();
  out.mean.fa.assign(c_count, 0.0);
  out.mean.miss.assign(c_count, 0.0);
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    for (int c = 0; c < c_count; ++c) {
      out.mean.fa[c] += w[i] * particles_[i].v_hat.fa[c];
      out.mean.miss[c] += w[i] * particles_[i].v_hat.miss[c];
    }
  }
  // Identical particles should give back exactly their value.
  const auto all_same = [&](int entry) {
    return std::all_of(particles_.begin(), particles_.end(), [&](const Particle& p) {
      return p.v_hat.entry(entry) == particles_.front().v_hat.entry(entry);
    });
  };
  for (int e = 0; e < 2 * c_count; ++e) {
    if (all_same(e)) out.mean.entry(e) = particles_.front().v_hat.entry(e);
  }
  return out;
}

WorldStateEstimate ParticleEnsemble::online_map(std::size_t t) const {
  if (t >= history_.size()) {
    throw ParameterError("observation index " + std::to_string(t) + " not yet assimilated");
  }
  const auto w = normalized_weights();
  if (!enumerate_) {
    std::vector<WorldState> states;
    states.reserve(particles_.size());
    for (const Particle& p : particles_) states.push_back(p.world_beliefs[t].sample);
    return weighted_vote(states, w, categories_);
  }
  std::vector<double> mixture(support_.size(), 0.0);
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    const auto& post = particles_[i].world_beliefs[t].posterior;
    for (std::size_t s = 0; s < support_.size(); ++s) mixture[s] += w[i] * post[s];
  }
  const std::size_t best =
      pick_best(support_, mixture, categories_, [](double a, double b) {
        return std::abs(a - b) <= kVoteTieTolerance * std::max(std::abs(a), std::abs(b));
      });
  return {support_[best], mixture[best]};
}

WorldStateEstimate weighted_vote(std::span<const WorldState> states,
                                 std::span<const double> weights, CategorySet categories) {
  if (states.empty() || states.size() != weights.size()) {
    throw ParameterError("weighted vote needs matching, nonempty states and weights");
  }
  std::vector<std::pair<CategoryMask, double>> tally;
  for (std::size_t i = 0; i < states.size(); ++i) tally.emplace_back(states[i].mask(), weights[i]);
  std::sort(tally.begin(), tally.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<WorldState> distinct;
  std::vector<double> totals;
  double grand = 0.0;
  for (const auto& [mask, weight] : tally) {
    if (distinct.empty() || distinct.back().mask() != mask) {
      distinct.emplace_back(mask);
      totals.push_back(0.0);
    }
    totals.back() += weight;
    grand += weight;
  }
  const std::size_t best = pick_best(distinct, totals, categories, [](double a, double b) {
    return std::abs(a - b) <= kVoteTieTolerance * std::max(std::abs(a), std::abs(b));
  });
  return {distinct[best], grand > 0.0 ? totals[best] / grand : 0.0};
}

// ---------------------------------------------------------------------------
// Drivers

PosteriorTrace run_online(std::span<const DetectionStats> observations,
                          const ParticleFilterConfig& config, const PriorConfig& prior,
                          CategorySet categories, const VisualSystem* v_true,
                          std::span<const WorldState> w_true) {
  if (!w_true.empty() && w_true.size() != observations.size()) {
    throw ParameterError("truth world states must parallel the observations");
  }
  ParticleEnsemble ensemble(config, prior, categories);
  PosteriorTrace trace;
  trace.prior_v_mu = ensemble.estimate().mean;
  trace.steps.reserve(observations.size());
  for (std::size_t t = 0; t < observations.size(); ++t) {
    ensemble.assimilate(observations[t]);
    TraceStep step;
    step.v_mu = ensemble.estimate().mean;
    step.map = ensemble.online_map(t);
    if (v_true != nullptr) {
      const MseBreakdown m = meta_mse(*v_true, step.v_mu);
      step.mse_fa = m.fa_only;
      step.mse_miss = m.miss_only;
      step.mse = m.combined;
    }
    if (!w_true.empty()) step.correct = world_state_accuracy(w_true[t], step.map.state) == 1;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

std::vector<WorldStateEstimate> retrospective_infer(const MetaEstimate& v_mu,
                                                    std::span<const DetectionStats> observations,
                                                    const WorldStatePrior& prior) {
  const auto support = prior.enumerate_support();
  if (support.empty()) throw ParameterError("world-state prior has empty support");
  std::vector<WorldStateEstimate> out;
  out.reserve(observations.size());
  std::vector<double> scores(support.size());
  for (const DetectionStats& stats : observations) {
    for (std::size_t i = 0; i < support.size(); ++i) {
      scores[i] = observation_log_likelihood(stats, support[i], v_mu) + prior.log_prob(support[i]);
    }
    const std::size_t best = pick_best(support, scores, prior.categories(), [](double a, double b) {
      return std::abs(a - b) <= kLogTieTolerance;
    });
    const double norm = log_sum_exp(scores);
    out.push_back({support[best], norm == kNegInf ? 0.0 : std::exp(scores[best] - norm)});
  }
  return out;
}

std::vector<WorldStateEstimate> retrospective_infer_sampled(
    const MetaEstimate& v_mu, std::span<const DetectionStats> observations,
    const WorldStatePrior& prior, int num_particles, Rng& rng) {
  if (num_particles < 1) throw ParameterError("num_particles must be positive");
  std::vector<WorldStateEstimate> out;
  out.reserve(observations.size());
  std::vector<WorldState> draws(num_particles);
  std::vector<double> weights(num_particles);
  for (const DetectionStats& stats : observations) {
    double top = kNegInf;
    for (int i = 0; i < num_particles; ++i) {
      draws[i] = prior.sample(rng);
      weights[i] = observation_log_likelihood(stats, draws[i], v_mu);
      top = std::max(top, weights[i]);
    }
    for (double& w : weights) w = top == kNegInf ? 1.0 : std::exp(w - top);
    out.push_back(weighted_vote(draws, weights, prior.categories()));
  }
  return out;
}

}  // namespace metacog
