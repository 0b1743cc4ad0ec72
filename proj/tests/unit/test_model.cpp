#include <doctest.h>

#include <cmath>
#include <map>

#include "../oracles.hpp"
#include "metacog/error.hpp"
#include "metacog/model.hpp"
#include "metacog/random.hpp"

using namespace metacog;

TEST_CASE("truncated poisson pmf") {
  const double d1 = oracle::size_pmf(1, 1.0, 1, 5);
  CHECK(d1 == doctest::Approx(0.5825).epsilon(1e-3));
  for (int n = 0; n <= 6; ++n) {
    CHECK(truncated_poisson_pmf(n, 1.0, 1, 5) ==
          doctest::Approx(oracle::size_pmf(n, 1.0, 1, 5)).epsilon(1e-12));
  }
  double total = 0.0;
  for (int n = 1; n <= 5; ++n) total += truncated_poisson_pmf(n, 1.0, 1, 5);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(truncated_poisson_pmf(0, 1.0, 1, 5) == 0.0);
  CHECK(truncated_poisson_pmf(1, 1e-9, 1, 5) == doctest::Approx(1.0));
}

TEST_CASE("truncated poisson sampler") {
  Rng rng(21);
  const int n = 1'000'000;
  std::map<int, int> freq;
  for (int i = 0; i < n; ++i) {
    const int k = sample_truncated_poisson(1.0, 1, 5, rng);
    REQUIRE(k >= 1);
    REQUIRE(k <= 5);
    ++freq[k];
  }
  CHECK(std::abs(freq[1] / static_cast<double>(n) - oracle::size_pmf(1, 1.0, 1, 5)) < 0.002);
  Rng rng2(22);
  for (int i = 0; i < 1000; ++i) CHECK(sample_truncated_poisson(1e-9, 1, 5, rng2) == 1);
}

TEST_CASE("world-state prior") {
  const PriorConfig prior;
  const CategorySet cats(5);
  const WorldStatePrior wp(prior, cats);

  SUBCASE("normalizes over the 31 nonempty states") {
    const auto support = wp.enumerate_support();
    CHECK(support.size() == 31);
    double total = 0.0;
    for (WorldState w : support) total += std::exp(world_state_log_prior(w, prior, cats));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("single-object state") {
    CHECK(std::exp(wp.log_prob(WorldState{2})) == doctest::Approx(0.1165).epsilon(1e-3));
    CHECK(std::exp(wp.log_prob(WorldState{2})) ==
          doctest::Approx(oracle::state_prior(WorldState{2}.mask(), 5, prior)).epsilon(1e-12));
  }
  SUBCASE("empty state is outside the support") {
    CHECK(std::isinf(wp.log_prob(WorldState{})));
    CHECK(wp.log_prob(WorldState{}) < 0.0);
  }
  SUBCASE("every state matches the oracle") {
    for (CategoryMask m = 0; m < 32; ++m) {
      const double expect = oracle::state_prior(m, 5, prior);
      const double got = std::exp(wp.log_prob(WorldState(m)));
      CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("samples: size frequency and symmetric marginals") {
    Rng rng(31);
    const int n = 1'000'000;
    int singles = 0;
    std::vector<int> presence(5, 0);
    for (int i = 0; i < n; ++i) {
      const WorldState w = wp.sample(rng);
      REQUIRE(w.count() >= 1);
      REQUIRE(w.count() <= 5);
      singles += w.count() == 1;
      for (int c = 0; c < 5; ++c) presence[c] += w.contains(c);
    }
    CHECK(std::abs(singles / static_cast<double>(n) - oracle::size_pmf(1, 1.0, 1, 5)) < 0.002);
    for (int c = 1; c < 5; ++c) {
      CHECK(std::abs(presence[c] - presence[0]) / static_cast<double>(n) < 0.003);
    }
  }
  SUBCASE("forced full set") {
    PriorConfig full;
    full.count_lo = 5;
    full.count_hi = 5;
    Rng rng(32);
    for (int i = 0; i < 100; ++i) CHECK(sample_world_state(full, cats, rng).mask() == 0b11111);
  }
}

TEST_CASE("prior validation") {
  PriorConfig p;
  p.count_lo = 5;
  p.count_hi = 1;
  CHECK_THROWS_AS(p.validate(CategorySet(5)), ParameterError);
  PriorConfig q;
  CHECK_THROWS_AS(q.validate(CategorySet(3)), ParameterError);
  q.count_hi = 3;
  CHECK_NOTHROW(q.validate(CategorySet(3)));
  CHECK_THROWS_AS(CategorySet(0), ParameterError);
  CHECK_THROWS_AS(CategorySet(65), ParameterError);
  CHECK_THROWS_AS(VisualSystem({0.1, 1.2}, {0.1, 0.1}), ParameterError);
}

TEST_CASE("rate prior summaries") {
  const PriorConfig p;
  CHECK(p.rate_prior_map() == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(p.rate_prior_mean() == doctest::Approx(1.0 / 6.0));
  CHECK(p.rate_prior_variance() == doctest::Approx(20.0 / (144.0 * 13.0)));
}

TEST_CASE("visual-system sampling") {
  const PriorConfig prior;
  const CategorySet cats(5);
  Rng rng(41);
  const int n = 100'000;
  double sum = 0.0;
  int any_high = 0;
  for (int i = 0; i < n; ++i) {
    const VisualSystem v = sample_visual_system(prior, cats, rng);
    bool high = false;
    for (int e = 0; e < 10; ++e) {
      REQUIRE(v.entry(e) >= 0.0);
      REQUIRE(v.entry(e) <= 1.0);
      sum += v.entry(e);
      high = high || v.entry(e) > 0.5;
    }
    any_high += high;
  }
  CHECK(std::abs(sum / (10.0 * n) - 1.0 / 6.0) < 0.003);
  CHECK(std::abs(any_high / static_cast<double>(n) - 0.06) < 0.005);
}

TEST_CASE("percept rendering") {
  SUBCASE("noiseless system reproduces the world state") {
    Rng rng(51);
    const VisualSystem v = VisualSystem::uniform(CategorySet(5), 0.0);
    for (int i = 0; i < 1000; ++i) CHECK(render_percept(WorldState{0, 3}, v, rng).mask() == 0b1001);
  }
  SUBCASE("blind system sees nothing") {
    Rng rng(52);
    const VisualSystem v({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
    for (int i = 0; i < 1000; ++i) CHECK(render_percept(WorldState{0, 1, 2}, v, rng).empty());
  }
  SUBCASE("exact-percept frequency") {
    Rng rng(53);
    const VisualSystem v({0.3, 0.1}, {0.2, 0.4});
    const int n = 1'000'000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += render_percept(WorldState{0}, v, rng).mask() == 0b01;
    CHECK(std::abs(hits / static_cast<double>(n) - 0.72) < 0.002);
  }
}

TEST_CASE("likelihood") {
  SUBCASE("per-category factor") {
    const VisualSystem v({0.1}, {0.2});
    DetectionStats s{{2}, 3};
    CHECK(std::exp(observation_log_likelihood(s, WorldState{0}, v)) ==
          doctest::Approx(0.128).epsilon(1e-12));
  }
  SUBCASE("noiseless and consistent is certain") {
    const VisualSystem v = VisualSystem::uniform(CategorySet(4), 0.0);
    DetectionStats s{{6, 0, 6, 0}, 6};
    CHECK(observation_log_likelihood(s, WorldState{0, 2}, v) == 0.0);
    CHECK(std::isinf(observation_log_likelihood(s, WorldState{0}, v)));
  }
  SUBCASE("sufficient statistics agree with per-percept products") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 500; ++trial) {
      auto in = oracle::random_instance(rng, 4, 5, 1);
      const CategorySet cats(in.categories);
      const auto& o = in.observations[0];
      const auto stats = DetectionStats::from(o, cats);
      for (CategoryMask w = 0; w < (CategoryMask{1} << in.categories); ++w) {
        const double expect = oracle::observation_prob(o, w, in.v);
        const double got = std::exp(observation_log_likelihood(stats, WorldState(w), in.v));
        REQUIRE(got == doctest::Approx(expect).epsilon(1e-12));
        double sum = 0.0;
        for (const Percept& x : o.percepts) sum += percept_log_likelihood(x, WorldState(w), in.v);
        REQUIRE(sum == doctest::Approx(observation_log_likelihood(stats, WorldState(w), in.v))
                           .epsilon(1e-12));
      }
    }
  }
  SUBCASE("percept distribution normalizes for C <= 4") {
    std::mt19937_64 rng(62);
    for (int trial = 0; trial < 200; ++trial) {
      auto in = oracle::random_instance(rng, 4, 1, 1);
      const CategoryMask full = (CategoryMask{1} << in.categories) - 1;
      for (CategoryMask w = 0; w <= full; ++w) {
        double total = 0.0;
        for (CategoryMask x = 0; x <= full; ++x) {
          total += std::exp(percept_log_likelihood(Percept(x), WorldState(w), in.v));
        }
        REQUIRE(std::abs(total - 1.0) < 1e-10);
      }
    }
  }
  CHECK(binomial_log_kernel(0, 4, 0.0) == 0.0);
  CHECK(binomial_log_kernel(3, 0, 1.0) == 0.0);
  CHECK(std::isinf(binomial_log_kernel(1, 0, 0.0)));
}

TEST_CASE("lexicographic tie order") {
  const CategorySet cats(3);
  CHECK(lexicographically_before(WorldState{1}, WorldState{0}, cats));
  CHECK(lexicographically_before(WorldState{2}, WorldState{1, 2}, cats));
  CHECK_FALSE(lexicographically_before(WorldState{0}, WorldState{0}, cats));
}
