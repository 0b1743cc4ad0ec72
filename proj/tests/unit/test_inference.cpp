#include <doctest.h>

#include <cmath>

#include "../checks.hpp"
#include "metacog/dataset.hpp"
#include "metacog/error.hpp"
#include "metacog/inference.hpp"

using namespace metacog;

TEST_CASE("prior-initialized ensemble") {
  ParticleFilterConfig config;
  config.seed = 5;
  const PriorConfig prior;
  ParticleEnsemble a(config, prior, CategorySet(5));
  ParticleEnsemble b(config, prior, CategorySet(5));
  double sum = 0.0;
  for (const auto& p : a.particles()) {
    for (int e = 0; e < 10; ++e) sum += p.v_hat.entry(e);
  }
  CHECK(std::abs(sum / 1000.0 - 1.0 / 6.0) < 0.02);
  CHECK(a.weights_uniform());
  CHECK(a.effective_sample_size() == doctest::Approx(100.0));
  for (std::size_t i = 0; i < a.particles().size(); ++i) {
    CHECK(a.particles()[i].v_hat == b.particles()[i].v_hat);
  }
}

TEST_CASE("filter configuration validation") {
  ParticleFilterConfig c;
  c.proposal_sigma = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.num_particles = 1;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.ess_resample_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("weights, posteriors and MAPs match brute force") {
  const auto rep = checks::oracle_equivalence(60, 101);
  CHECK(rep.instances == 60);
  CHECK(rep.max_weight_rel_error < 1e-10);
  CHECK(rep.max_marginal_rel_error < 1e-10);
  CHECK(rep.max_posterior_rel_error < 1e-10);
  CHECK(rep.online_map_mismatches == 0);
  CHECK(rep.retrospective_map_mismatches == 0);
  CHECK(rep.max_map_mass_error < 1e-10);
}

TEST_CASE("larger category counts still match brute force") {
  const auto rep = checks::oracle_equivalence(20, 102, 6, 8, 2);
  CHECK(rep.max_weight_rel_error < 1e-10);
  CHECK(rep.max_posterior_rel_error < 1e-10);
  CHECK(rep.retrospective_map_mismatches == 0);
}

TEST_CASE("beliefs follow rejuvenated estimates") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = oracle::random_instance(rng, 3, 5, 3);
    const CategorySet cats(in.categories);
    ParticleFilterConfig config;
    config.num_particles = 8;
    config.seed = static_cast<std::uint64_t>(trial);
    ParticleEnsemble ens(config, in.prior, cats);
    for (const auto& o : in.observations) ens.assimilate(o);
    const std::size_t last = in.observations.size() - 1;
    for (const auto& p : ens.particles()) {
      const auto post = oracle::posterior(in.observations[last], p.v_hat, in.prior);
      for (std::size_t s = 0; s < ens.support().size(); ++s) {
        REQUIRE(checks::rel_error(p.world_beliefs[last].posterior[s],
                                  post[ens.support()[s].mask()]) < 1e-9);
      }
    }
  }
}

TEST_CASE("noiseless particle identifies the world state") {
  const CategorySet cats(5);
  const PriorConfig prior;
  const VisualSystem clean = VisualSystem::uniform(cats, 0.0);
  ParticleFilterConfig config;
  ParticleEnsemble ens(config, prior, cats, {clean, clean});
  Observation o;
  for (int f = 0; f < 6; ++f) o.percepts.push_back(Percept{1, 4});
  ens.reweight(DetectionStats::from(o, cats));
  const auto map = ens.online_map(0);
  CHECK(map.state == WorldState{1, 4});
  CHECK(map.posterior_mass == doctest::Approx(1.0).epsilon(1e-9));

  const std::vector<DetectionStats> history{DetectionStats::from(o, cats)};
  const WorldStatePrior wp(prior, cats);
  CHECK(retrospective_infer(clean, history, wp)[0].state == WorldState{1, 4});
  Rng rng(7);
  const auto sampled = retrospective_infer_sampled(clean, history, wp, 500, rng);
  CHECK(sampled[0].state == WorldState{1, 4});
}

TEST_CASE("estimate of identical particles is exact") {
  const CategorySet cats(3);
  const VisualSystem v({0.1, 0.2, 0.3}, {0.05, 0.15, 0.25});
  ParticleFilterConfig config;
  ParticleEnsemble ens(config, PriorConfig{1, 10, 1, 1, 3}, cats, {v, v, v});
  ens.reweight({{1, 2, 0}, 4});
  CHECK(ens.estimate().mean == v);
}

TEST_CASE("systematic resampling preserves the weighted mean in expectation") {
  const CategorySet cats(2);
  PriorConfig prior;
  prior.count_hi = 2;
  std::vector<MetaEstimate> init;
  for (int k = 0; k < 10; ++k) {
    const double r = 0.05 + 0.05 * k;
    init.push_back(VisualSystem({r, r}, {r, 0.5 - r / 2}));
  }
  ParticleFilterConfig config;
  config.num_particles = 10;
  // Weight the particles with one observation, then resample many times.
  double target = 0.0;
  std::vector<double> resampled;
  for (int rep = 0; rep < 4000; ++rep) {
    config.seed = static_cast<std::uint64_t>(rep);
    ParticleEnsemble ens(config, prior, cats, init);
    ens.reweight({{3, 0}, 4});
    if (rep == 0) target = ens.estimate().mean.fa[0];
    ens.resample();
    REQUIRE(ens.weights_uniform());
    resampled.push_back(ens.estimate().mean.fa[0]);
  }
  double mean = 0.0;
  for (double x : resampled) mean += x;
  mean /= static_cast<double>(resampled.size());
  double var = 0.0;
  for (double x : resampled) var += (x - mean) * (x - mean);
  var /= static_cast<double>(resampled.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(resampled.size()));
  CHECK(std::abs(mean - target) < 4.0 * se + 1e-12);
}

TEST_CASE("rejuvenation recovers the one-rate posterior") {
  SUBCASE("enumeration regime") {
    const auto rep = checks::mh_chain(20'000, 11, WorldStateMode::kEnumerate);
    CHECK(rep.tv_miss < 0.08);
    CHECK(rep.tv_fa < 0.08);
    CHECK(rep.acceptance > 0.2);
  }
  SUBCASE("sampling regime") {
    const auto rep = checks::mh_chain(20'000, 12, WorldStateMode::kSample);
    CHECK(rep.tv_miss < 0.08);
    CHECK(rep.tv_fa < 0.08);
  }
}

TEST_CASE("online runs are deterministic in the seed") {
  const PriorConfig prior;
  const CategorySet cats(5);
  const Run run = synthesize_run(prior, cats, 10, 77, "r");
  const auto stats = run.detection_stats(cats);
  for (auto mode : {WorldStateMode::kEnumerate, WorldStateMode::kSample}) {
    ParticleFilterConfig config;
    config.world_state_mode = mode;
    config.seed = 99;
    const auto a = run_online(stats, config, prior, cats, &run.v_true, run.world_states);
    const auto b = run_online(stats, config, prior, cats, &run.v_true, run.world_states);
    REQUIRE(a.steps.size() == 10);
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      CHECK(a.steps[t].v_mu == b.steps[t].v_mu);
      CHECK(a.steps[t].map == b.steps[t].map);
    }
  }
}

TEST_CASE("meta-estimate error falls with observations") {
  const PriorConfig prior;
  const CategorySet cats(5);
  double start = 0.0;
  double end = 0.0;
  const int runs = 40;
  for (int r = 0; r < runs; ++r) {
    const Run run = synthesize_run(prior, cats, 40, derive_seed(500, r), "r");
    ParticleFilterConfig config;
    config.world_state_mode = WorldStateMode::kSample;
    config.seed = derive_seed(run.seed, "online");
    const auto trace = run_online(run.detection_stats(cats), config, prior, cats, &run.v_true,
                                  run.world_states);
    start += meta_mse(run.v_true, trace.prior_v_mu).combined / runs;
    end += *trace.steps.back().mse / runs;
  }
  CHECK(end < prior.rate_prior_variance() / 3.0);
  CHECK(end < start);
}

TEST_CASE("weighted vote") {
  const CategorySet cats(3);
  const std::vector<WorldState> states{WorldState{0}, WorldState{1}, WorldState{0}, WorldState{2}};
  const std::vector<double> weights{0.2, 0.3, 0.2, 0.3};
  const auto v = weighted_vote(states, weights, cats);
  CHECK(v.state == WorldState{0});
  CHECK(v.posterior_mass == doctest::Approx(0.4));
  // {1} and {2} tie; {2} = (0,0,1) precedes {1} = (0,1,0).
  const std::vector<double> tied{0.1, 0.35, 0.1, 0.35};
  CHECK(weighted_vote(states, tied, cats).state == WorldState{2});
  CHECK_THROWS_AS(weighted_vote({}, {}, cats), ParameterError);
}
