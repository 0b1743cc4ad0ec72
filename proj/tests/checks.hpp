#pragma once

// Property checks shared by the unit tests (small sizes) and the acceptance
// gate (full sizes). Each returns what it measured; callers pick tolerances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "metacog/inference.hpp"
#include "metacog/metrics.hpp"
#include "oracles.hpp"

namespace checks {

struct OracleReport {
  int instances = 0;
  double max_weight_rel_error = 0.0;
  double max_posterior_rel_error = 0.0;
  double max_marginal_rel_error = 0.0;
  int online_map_mismatches = 0;
  int retrospective_map_mismatches = 0;
  double max_map_mass_error = 0.0;
};

inline double rel_error(double got, double expect) {
  if (got == expect) return 0.0;
  return std::abs(got - expect) / std::max(std::abs(expect), 1e-300);
}

/// Particle weights, per-particle world-state posteriors and MAP readouts
/// against brute-force enumeration on random small instances.
inline OracleReport oracle_equivalence(int instances, std::uint64_t seed, int max_categories = 3,
                                       int max_frames = 5, int max_observations = 4) {
  using namespace metacog;
  std::mt19937_64 rng(seed);
  OracleReport rep;
  for (int i = 0; i < instances; ++i) {
    auto in = oracle::random_instance(rng, max_categories, max_frames, max_observations);
    const CategorySet cats(in.categories);
    const WorldStatePrior world_prior(in.prior, cats);

    // A few particles around the instance's visual system, plus the system itself.
    std::vector<MetaEstimate> init{in.v};
    std::uniform_real_distribution<double> rate(0.01, 0.6);
    for (int k = 0; k < 3; ++k) {
      MetaEstimate v = in.v;
      for (int e = 0; e < 2 * in.categories; ++e) v.entry(e) = rate(rng);
      init.push_back(v);
    }
    ParticleFilterConfig config;
    config.world_state_mode = WorldStateMode::kEnumerate;
    ParticleEnsemble ens(config, in.prior, cats, init);

    std::vector<double> expected_log_weight(init.size(), 0.0);
    std::vector<DetectionStats> history;
    for (std::size_t t = 0; t < in.observations.size(); ++t) {
      const auto& o = in.observations[t];
      const DetectionStats stats = DetectionStats::from(o, cats);
      history.push_back(stats);
      ens.reweight(stats);
      const auto support = ens.support();
      for (std::size_t k = 0; k < init.size(); ++k) {
        const auto& p = ens.particles()[k];
        const double m = oracle::marginal(o, init[k], in.prior);
        expected_log_weight[k] += std::log(m);
        rep.max_weight_rel_error = std::max(
            rep.max_weight_rel_error, std::abs(std::expm1(p.log_weight - expected_log_weight[k])));
        rep.max_marginal_rel_error =
            std::max(rep.max_marginal_rel_error,
                     rel_error(std::exp(log_marginal_likelihood(stats, init[k], world_prior)), m));
        const auto post = oracle::posterior(o, init[k], in.prior);
        for (std::size_t s = 0; s < support.size(); ++s) {
          rep.max_posterior_rel_error =
              std::max(rep.max_posterior_rel_error,
                       rel_error(p.world_beliefs[t].posterior[s], post[support[s].mask()]));
        }
      }
    }

    // All particles sharing v: the online mixture is the exact posterior.
    ParticleEnsemble shared(config, in.prior, cats, {in.v, in.v});
    for (const auto& s : history) shared.reweight(s);
    const auto retro = retrospective_infer(in.v, history, world_prior);
    for (std::size_t t = 0; t < history.size(); ++t) {
      const auto post = oracle::posterior(in.observations[t], in.v, in.prior);
      const std::uint64_t expect = oracle::map_state(post, in.categories);
      rep.online_map_mismatches += shared.online_map(t).state.mask() != expect;
      rep.retrospective_map_mismatches += retro[t].state.mask() != expect;
      rep.max_map_mass_error =
          std::max(rep.max_map_mass_error, rel_error(retro[t].posterior_mass, post[expect]));
    }
    ++rep.instances;
  }
  return rep;
}

struct ChainReport {
  double tv_miss = 0.0;  // the data-informed rate
  double tv_fa = 0.0;    // untouched by data, so its prior
  double acceptance = 0.0;
};

/// Repeated rejuvenation of one particle on a 1-category problem whose world
/// state is forced present, compared with grid quadrature of the posterior.
inline ChainReport mh_chain(long samples, std::uint64_t seed, metacog::WorldStateMode mode,
                            int bins = 25) {
  using namespace metacog;
  PriorConfig prior;
  prior.count_lo = 1;
  prior.count_hi = 1;
  const CategorySet cats(1);
  const WorldStatePrior world_prior(prior, cats);
  // Three observations of ten frames: 7, 8 and 6 detections.
  const std::vector<DetectionStats> history{{{7}, 10}, {{8}, 10}, {{6}, 10}};
  long detected = 0;
  long missed = 0;
  for (const auto& s : history) {
    detected += s.counts[0];
    missed += s.frames - s.counts[0];
  }

  ParticleFilterConfig config;
  config.world_state_mode = mode;
  config.seed = seed;
  ParticleEnsemble ens(config, prior, cats, {VisualSystem({0.5}, {0.5}), VisualSystem({0.5}, {0.5})});
  for (const auto& s : history) ens.reweight(s);
  Particle p = ens.particles()[0];
  const RejuvenationContext ctx{&ens.config(), &prior, &world_prior, ens.enumerates()};

  Rng rng(derive_seed(seed, "chain"));
  std::vector<double> hist_miss(bins, 0.0);
  std::vector<double> hist_fa(bins, 0.0);
  long accepted = 0;
  const long burn_in = 2000;
  for (long i = 0; i < burn_in + samples; ++i) {
    const int a = rejuvenate(p, history, ctx, rng);
    if (i < burn_in) continue;
    accepted += a;
    hist_miss[std::min(bins - 1, static_cast<int>(p.v_hat.miss[0] * bins))] += 1.0 / samples;
    hist_fa[std::min(bins - 1, static_cast<int>(p.v_hat.fa[0] * bins))] += 1.0 / samples;
  }
  ChainReport rep;
  // A miss is an "event" for the miss rate.
  rep.tv_miss = oracle::total_variation(
      hist_miss, oracle::grid_posterior(prior.beta_alpha, prior.beta_beta, missed, detected, bins));
  rep.tv_fa = oracle::total_variation(
      hist_fa, oracle::grid_posterior(prior.beta_alpha, prior.beta_beta, 0, 0, bins));
  rep.acceptance = static_cast<double>(accepted) / (2.0 * static_cast<double>(samples));
  return rep;
}

struct NormalizationReport {
  double max_percept_sum_error = 0.0;
  double max_prior_sum_error = 0.0;
  bool zeta_in_unit_interval = true;
  bool mse_zero_at_truth = true;
  bool mse_combined_is_mean = true;
};

inline NormalizationReport normalization(int trials, std::uint64_t seed) {
  using namespace metacog;
  std::mt19937_64 rng(seed);
  NormalizationReport rep;
  for (int i = 0; i < trials; ++i) {
    auto in = oracle::random_instance(rng, 4, 6, 3);
    const CategorySet cats(in.categories);
    const CategoryMask full = cats.full_mask();
    for (CategoryMask w = 0; w <= full; ++w) {
      double total = 0.0;
      for (CategoryMask x = 0; x <= full; ++x) {
        total += std::exp(percept_log_likelihood(Percept(x), WorldState(w), in.v));
      }
      rep.max_percept_sum_error = std::max(rep.max_percept_sum_error, std::abs(total - 1.0));
    }

    const int c = std::uniform_int_distribution<int>(1, 8)(rng);
    PriorConfig p;
    p.count_lo = std::uniform_int_distribution<int>(0, c)(rng);
    p.count_hi = std::uniform_int_distribution<int>(p.count_lo, c)(rng);
    p.poisson_lambda = std::uniform_real_distribution<double>(0.1, 4.0)(rng);
    const WorldStatePrior wp(p, CategorySet(c));
    double total = 0.0;
    for (WorldState w : wp.enumerate_support()) total += std::exp(wp.log_prob(w));
    rep.max_prior_sum_error = std::max(rep.max_prior_sum_error, std::abs(total - 1.0));

    for (const auto& o : in.observations) {
      const WorldState w(std::uniform_int_distribution<CategoryMask>(0, full)(rng));
      const double z = observation_noise(w, o, cats).zeta();
      rep.zeta_in_unit_interval = rep.zeta_in_unit_interval && z >= 0.0 && z <= 1.0;
    }

    const MseBreakdown self = meta_mse(in.v, in.v);
    rep.mse_zero_at_truth =
        rep.mse_zero_at_truth && self.combined == 0.0 && self.fa_only == 0.0 && self.miss_only == 0.0;
    MetaEstimate other = in.v;
    for (int e = 0; e < 2 * in.categories; ++e) other.entry(e) = 0.5;
    const MseBreakdown m = meta_mse(in.v, other);
    rep.mse_combined_is_mean = rep.mse_combined_is_mean &&
                               std::abs(m.combined - 0.5 * (m.fa_only + m.miss_only)) <= 1e-15;
  }
  return rep;
}

}  // namespace checks
