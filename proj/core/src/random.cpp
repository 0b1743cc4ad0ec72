#include "metacog/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "metacog/error.hpp"

namespace metacog {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  // FNV-1a over the tag, then mixed like an index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(root, h);
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sample_beta(double alpha, double beta, Rng& rng) {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ParameterError("beta shape parameters must be positive");
  }
  std::gamma_distribution<double> ga(alpha, 1.0);
  std::gamma_distribution<double> gb(beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return 0.5;  // both underflowed; only possible for tiny shapes
  return x / (x + y);
}

double beta_log_density(double x, double alpha, double beta) {
  if (!(x > 0.0) || !(x < 1.0)) return -std::numeric_limits<double>::infinity();
  const double log_norm = std::lgamma(alpha + beta) - std::lgamma(alpha) - std::lgamma(beta);
  return log_norm + (alpha - 1.0) * std::log(x) + (beta - 1.0) * std::log1p(-x);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lo, double hi)
    : mu_(mu), sigma_(sigma), lo_(lo), hi_(hi) {
  if (!(sigma > 0.0)) throw ParameterError("truncated normal sigma must be positive");
  if (!(lo < hi)) throw ParameterError("truncated normal bounds must satisfy lo < hi");
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  // Difference of CDFs taken on the side with less cancellation.
  mass_ = a > 0.0 ? normal_cdf(-a) - normal_cdf(-b) : normal_cdf(b) - normal_cdf(a);
  log_mass_ = std::log(mass_);
}

double TruncatedNormal::sample(Rng& rng) const {
  if (mass_ > 0.05) {
    std::normal_distribution<double> normal(mu_, sigma_);
    for (;;) {
      const double x = normal(rng);
      if (x > lo_ && x < hi_) return x;
    }
  }
  // Little mass inside the window: propose uniformly and accept against the
  // density's peak inside (lo, hi).
  const double peak = std::clamp(mu_, lo_, hi_);
  const double inv_two_var = 0.5 / (sigma_ * sigma_);
  for (;;) {
    const double x = lo_ + (hi_ - lo_) * uniform01(rng);
    if (x <= lo_ || x >= hi_) continue;
    const double log_ratio = -((x - mu_) * (x - mu_) - (peak - mu_) * (peak - mu_)) * inv_two_var;
    if (std::log(uniform01(rng)) < log_ratio) return x;
  }
}

double TruncatedNormal::log_density(double x) const {
  if (!(x > lo_) || !(x < hi_)) return -std::numeric_limits<double>::infinity();
  const double z = (x - mu_) / sigma_;
  return -0.5 * z * z - std::log(sigma_) - 0.5 * std::log(2.0 * std::numbers::pi) - log_mass_;
}

double TruncatedNormal::density(double x) const { return std::exp(log_density(x)); }

}  // namespace metacog
