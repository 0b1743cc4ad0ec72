#pragma once

// Sequential Monte Carlo over (v, w_1..w_T). Each particle carries a
// meta-estimate v_hat that only moves through Metropolis-Hastings
// rejuvenation; world states are either marginalized exactly per particle
// (enumeration regime) or drawn from the prior and kept (sampling regime).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "metacog/model.hpp"
#include "metacog/random.hpp"

namespace metacog {

enum class WorldStateMode {
  kEnumerate,  // Rao-Blackwellized: exact sum over the world-state support
  kSample,     // one prior draw per particle per observation
};

enum class RejuvenationPolicy {
  kEveryObservation,
  kAfterResample,
};

struct ParticleFilterConfig {
  int num_particles = 100;
  double proposal_sigma = 0.1;
  int rejuvenation_sweeps = 1;
  double ess_resample_threshold = 0.5;
  int enumeration_limit = 15;
  WorldStateMode world_state_mode = WorldStateMode::kEnumerate;
  RejuvenationPolicy rejuvenation_policy = RejuvenationPolicy::kEveryObservation;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ParticleFilterConfig&, const ParticleFilterConfig&) = default;
};

/// Belief about one assimilated observation's world state. In the
/// enumeration regime `posterior` holds Pr(w | o_t, v_hat) indexed like the
/// ensemble support; in the sampling regime `sample` holds the drawn state.
struct WorldBelief {
  std::vector<double> posterior;
  WorldState sample;
};

struct Particle {
  MetaEstimate v_hat;
  std::vector<WorldBelief> world_beliefs;
  double log_weight = 0.0;

  // Kept in step with v_hat and the ensemble history.
  // Enumeration regime, per observation: for each category
  // (log absent factor, log present factor, scaled absent, scaled present),
  // then log of the scaled size-polynomial sum.
  std::vector<double> likelihood_cache;
  // Sampling regime, per v entry: (event count, non-event count) under the
  // particle's sampled world states.
  std::vector<std::int64_t> rate_counts;
};

struct WorldStateEstimate {
  WorldState state;
  double posterior_mass = 0.0;

  friend bool operator==(const WorldStateEstimate&, const WorldStateEstimate&) = default;
};

struct VEstimate {
  MetaEstimate mean;
  bool weighted = false;  // set when particle weights were not uniform
};

/// log sum_w Pr(o | w, v) Pr(w): the per-particle weight increment in the
/// enumeration regime, computed in O(C^2) through the size polynomial.
double log_marginal_likelihood(const DetectionStats& stats, const VisualSystem& v,
                               const WorldStatePrior& prior);

/// Exact Pr(w | o, v) over `support`.
std::vector<double> world_state_posterior(const DetectionStats& stats, const VisualSystem& v,
                                          const WorldStatePrior& prior,
                                          std::span<const WorldState> support);

struct RejuvenationContext {
  const ParticleFilterConfig* config;
  const PriorConfig* prior;
  const WorldStatePrior* world_prior;
  bool enumerate;
};

/// One or more MH sweeps over the 2C entries of `particle.v_hat`, each sweep
/// in a fresh random order, with truncated-normal proposals on (0, 1).
/// Returns the number of accepted moves.
int rejuvenate(Particle& particle, std::span<const DetectionStats> history,
               const RejuvenationContext& context, Rng& rng);

class ParticleEnsemble {
 public:
  /// Draws every v_hat entry i.i.d. from the rate prior.
  ParticleEnsemble(const ParticleFilterConfig& config, const PriorConfig& prior,
                   CategorySet categories);
  /// Starts from the given meta-estimates with uniform weights.
  ParticleEnsemble(const ParticleFilterConfig& config, const PriorConfig& prior,
                   CategorySet categories, std::vector<MetaEstimate> initial);

  /// Reweight, resample when ESS falls below threshold, then rejuvenate.
  void assimilate(const Observation& o);
  void assimilate(const DetectionStats& stats);

  void reweight(const DetectionStats& stats);
  bool resample_if_needed();
  void resample();
  void rejuvenate_all();

  double effective_sample_size() const;
  std::vector<double> normalized_weights() const;
  bool weights_uniform() const;

  VEstimate estimate() const;
  /// Point estimate of w_t (0-based) from the particles' beliefs.
  WorldStateEstimate online_map(std::size_t t) const;

  bool enumerates() const { return enumerate_; }
  CategorySet categories() const { return categories_; }
  const ParticleFilterConfig& config() const { return config_; }
  const WorldStatePrior& world_prior() const { return world_prior_; }
  std::span<const WorldState> support() const { return support_; }
  std::span<const Particle> particles() const { return particles_; }
  std::span<const DetectionStats> history() const { return history_; }
  std::size_t observations_assimilated() const { return history_.size(); }
  std::size_t accepted_moves() const { return accepted_moves_; }
  std::size_t resample_count() const { return resample_count_; }

 private:
  void refresh_latest_belief(Particle& p) const;

  ParticleFilterConfig config_;
  PriorConfig prior_;
  CategorySet categories_;
  WorldStatePrior world_prior_;
  bool enumerate_;
  std::vector<WorldState> support_;
  std::vector<Particle> particles_;
  std::vector<DetectionStats> history_;
  Rng rng_;
  bool resampled_last_step_ = false;
  std::size_t accepted_moves_ = 0;
  std::size_t resample_count_ = 0;
};

/// Per-observation readout of an online run.
struct TraceStep {
  MetaEstimate v_mu;
  WorldStateEstimate map;
  std::optional<double> mse_fa;
  std::optional<double> mse_miss;
  std::optional<double> mse;
  std::optional<bool> correct;
};

struct PosteriorTrace {
  MetaEstimate prior_v_mu;  // before any observation
  std::vector<TraceStep> steps;
  MetaEstimate final_v_mu() const { return steps.empty() ? prior_v_mu : steps.back().v_mu; }
};

/// Online inference over a sequence, read out after each rejuvenation.
/// Truth, when given, fills the MSE and accuracy fields.
PosteriorTrace run_online(std::span<const DetectionStats> observations,
                          const ParticleFilterConfig& config, const PriorConfig& prior,
                          CategorySet categories, const VisualSystem* v_true = nullptr,
                          std::span<const WorldState> w_true = {});

/// Exact MAP of each w_t with v fixed at `v_mu`; ties go to the
/// lexicographically smaller presence vector.
std::vector<WorldStateEstimate> retrospective_infer(const MetaEstimate& v_mu,
                                                    std::span<const DetectionStats> observations,
                                                    const WorldStatePrior& prior);

/// Particle approximation of the same: per observation, `num_particles`
/// prior draws weighted by the likelihood; the state with the most weight wins.
std::vector<WorldStateEstimate> retrospective_infer_sampled(
    const MetaEstimate& v_mu, std::span<const DetectionStats> observations,
    const WorldStatePrior& prior, int num_particles, Rng& rng);

/// Weighted vote among candidate states; ties broken lexicographically.
WorldStateEstimate weighted_vote(std::span<const WorldState> states,
                                 std::span<const double> weights, CategorySet categories);

}  // namespace metacog
