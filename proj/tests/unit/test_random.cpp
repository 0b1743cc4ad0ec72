#include <doctest.h>

#include <cmath>
#include <set>

#include "metacog/error.hpp"
#include "metacog/random.hpp"

using namespace metacog;

TEST_CASE("beta(2,10) samples match the prior mean and tail") {
  Rng rng(11);
  const int n = 1'000'000;
  double sum = 0.0;
  int above = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_beta(2.0, 10.0, rng);
    REQUIRE(x > 0.0);
    REQUIRE(x < 1.0);
    sum += x;
    above += x > 0.5;
  }
  CHECK(std::abs(sum / n - 2.0 / 12.0) < 0.001);
  // Beta(2,10) upper tail above 0.5 is 0.00586.
  CHECK(static_cast<double>(above) / n == doctest::Approx(0.00586).epsilon(0.05));
}

TEST_CASE("beta(1,1) is uniform") {
  Rng rng(12);
  double sum = 0.0;
  const int n = 400'000;
  for (int i = 0; i < n; ++i) sum += sample_beta(1.0, 1.0, rng);
  CHECK(std::abs(sum / n - 0.5) < 0.002);
}

TEST_CASE("beta rejects non-positive shapes") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_beta(0.0, 1.0, rng), ParameterError);
  CHECK_THROWS_AS(sample_beta(1.0, -2.0, rng), ParameterError);
}

TEST_CASE("beta log density") {
  // Beta(2,10) density at 0.1: 110 * 0.1 * 0.9^9
  CHECK(std::exp(beta_log_density(0.1, 2.0, 10.0)) ==
        doctest::Approx(110.0 * 0.1 * std::pow(0.9, 9)).epsilon(1e-12));
  CHECK(std::isinf(beta_log_density(0.0, 2.0, 10.0)));
  CHECK(std::isinf(beta_log_density(1.2, 2.0, 10.0)));
}

TEST_CASE("truncated normal") {
  SUBCASE("symmetric window keeps the mean") {
    TruncatedNormal tn(0.5, 0.1);
    Rng rng(3);
    double sum = 0.0;
    const int n = 400'000;
    for (int i = 0; i < n; ++i) sum += tn.sample(rng);
    CHECK(std::abs(sum / n - 0.5) < 0.001);
  }
  SUBCASE("samples stay inside the window at the edge") {
    TruncatedNormal tn(0.0, 0.1);
    Rng rng(4);
    for (int i = 0; i < 100'000; ++i) {
      const double x = tn.sample(rng);
      REQUIRE(x > 0.0);
      REQUIRE(x < 1.0);
    }
  }
  SUBCASE("far-out mean still samples inside") {
    TruncatedNormal tn(-0.6, 0.1);
    Rng rng(5);
    for (int i = 0; i < 10'000; ++i) {
      const double x = tn.sample(rng);
      REQUIRE(x > 0.0);
      REQUIRE(x < 1.0);
    }
  }
  SUBCASE("density at the centre equals the normal pdf over the window mass") {
    const double mu = 0.5;
    const double sigma = 0.1;
    TruncatedNormal tn(mu, sigma);
    const double pdf = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
    const double z = 0.5 * std::erfc(-(1.0 - mu) / (sigma * std::sqrt(2.0))) -
                     0.5 * std::erfc(-(0.0 - mu) / (sigma * std::sqrt(2.0)));
    CHECK(tn.density(0.5) == doctest::Approx(pdf / z).epsilon(1e-6));
    CHECK(tn.density(0.5) == doctest::Approx(pdf).epsilon(1e-6));
  }
  SUBCASE("density integrates to one near a boundary") {
    TruncatedNormal tn(0.03, 0.1);
    const int n = 200'000;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) integral += tn.density((i + 0.5) / n) / n;
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("histogram matches the density") {
    TruncatedNormal tn(0.05, 0.1);
    Rng rng(6);
    const int bins = 20;
    const int n = 200'000;
    std::vector<double> hist(bins, 0.0);
    for (int i = 0; i < n; ++i) hist[static_cast<int>(tn.sample(rng) * bins)] += 1.0 / n;
    double tv = 0.0;
    for (int b = 0; b < bins; ++b) {
      double mass = 0.0;
      for (int j = 0; j < 100; ++j) mass += tn.density((b + (j + 0.5) / 100) / bins) / (100 * bins);
      tv += std::abs(mass - hist[b]);
    }
    CHECK(0.5 * tv < 0.01);
  }
  CHECK_THROWS_AS(TruncatedNormal(0.5, 0.0), ParameterError);
}

TEST_CASE("derived seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 10'000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 10'000);
  CHECK(derive_seed(42, 7) == derive_seed(42, 7));
  CHECK(derive_seed(42, 7) != derive_seed(43, 7));
  CHECK(derive_seed(1, "online") != derive_seed(1, "retrospective"));
  CHECK(derive_seed(1, "online") == derive_seed(1, "online"));
}

TEST_CASE("uniform01 stays in [0, 1)") {
  Rng rng(9);
  for (int i = 0; i < 100'000; ++i) {
    const double u = uniform01(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}
