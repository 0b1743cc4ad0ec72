#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metacog {

using Rng = std::mt19937_64;

/// Mixes a root seed with a stream index into an independent child seed.
/// Used for per-run and per-purpose streams so results never depend on
/// scheduling order.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// Same as above, keyed by a short purpose tag ("inference", "retro", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

/// Uniform draw on [0, 1).
double uniform01(Rng& rng);

/// Beta(alpha, beta) via the ratio of two gamma variates.
double sample_beta(double alpha, double beta, Rng& rng);

/// Log density of Beta(alpha, beta) at x; -inf outside (0, 1).
double beta_log_density(double x, double alpha, double beta);

/// Normal(mu, sigma^2) restricted to (lo, hi).
class TruncatedNormal {
 public:
  TruncatedNormal(double mu, double sigma, double lo = 0.0, double hi = 1.0);

  double sample(Rng& rng) const;
  double log_density(double x) const;
  double density(double x) const;

  /// Probability mass of the untruncated normal inside (lo, hi).
  double mass() const { return mass_; }

 private:
  double mu_;
  double sigma_;
  double lo_;
  double hi_;
  double mass_;
  double log_mass_;
};

/// Standard normal CDF.
double normal_cdf(double z);

}  // namespace metacog
