#pragma once

// Domain types and the generative model of percept production: which
// categories a black-box detector reports for a scene, given per-category
// false-alarm and miss rates.

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "metacog/random.hpp"

namespace metacog {

using CategoryMask = std::uint64_t;

/// Number of object categories C. Categories are indices 0..C-1.
class CategorySet {
 public:
  static constexpr int kMaxCategories = 64;

  explicit CategorySet(int size = 5);

  int size() const { return size_; }
  CategoryMask full_mask() const {
    return size_ == 64 ? ~CategoryMask{0} : (CategoryMask{1} << size_) - 1;
  }

  friend bool operator==(CategorySet, CategorySet) = default;

 private:
  int size_;
};

/// Set of category indices, stored as a presence bit-vector (bit c = category c).
class CategorySetValue {
 public:
  constexpr CategorySetValue() = default;
  constexpr explicit CategorySetValue(CategoryMask mask) : mask_(mask) {}
  CategorySetValue(std::initializer_list<int> categories);

  static CategorySetValue from_indices(std::span<const int> categories);

  constexpr CategoryMask mask() const { return mask_; }
  constexpr bool contains(int c) const { return (mask_ >> c) & 1U; }
  constexpr int count() const { return std::popcount(mask_); }
  constexpr bool empty() const { return mask_ == 0; }
  void insert(int c) { mask_ |= CategoryMask{1} << c; }
  void erase(int c) { mask_ &= ~(CategoryMask{1} << c); }

  /// Sorted category indices.
  std::vector<int> indices() const;

  friend constexpr bool operator==(CategorySetValue, CategorySetValue) = default;

 private:
  CategoryMask mask_ = 0;
};

/// The set of categories actually present in a scene.
struct WorldState : CategorySetValue {
  using CategorySetValue::CategorySetValue;
  constexpr explicit WorldState(CategorySetValue v) : CategorySetValue(v) {}
};

/// One frame's detected labels.
struct Percept : CategorySetValue {
  using CategorySetValue::CategorySetValue;
  constexpr explicit Percept(CategorySetValue v) : CategorySetValue(v) {}
};

/// Tie-break order for MAP world states: lexicographic on the presence vector
/// (b_0, b_1, ..., b_{C-1}); returns true when `a` precedes `b`.
bool lexicographically_before(WorldState a, WorldState b, CategorySet categories);

/// F percepts of the same world state.
struct Observation {
  std::vector<Percept> percepts;

  int frame_count() const { return static_cast<int>(percepts.size()); }
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Per-category detection counts k_c over F frames. The percept likelihood
/// depends on an observation only through these.
struct DetectionStats {
  std::vector<int> counts;
  int frames = 0;

  static DetectionStats from(const Observation& o, CategorySet categories);
  int categories() const { return static_cast<int>(counts.size()); }
  friend bool operator==(const DetectionStats&, const DetectionStats&) = default;
};

/// Per-category false-alarm and miss rates (a C x 2 matrix).
struct VisualSystem {
  std::vector<double> fa;
  std::vector<double> miss;

  VisualSystem() = default;
  VisualSystem(std::vector<double> fa_rates, std::vector<double> miss_rates);
  static VisualSystem uniform(CategorySet categories, double value);

  int categories() const { return static_cast<int>(fa.size()); }

  /// Flat view index i in [0, 2C): i < C is fa[i], otherwise miss[i - C].
  double entry(int i) const;
  double& entry(int i);

  /// Probability that category c is reported given presence or absence.
  double detection_probability(int c, bool present) const {
    return present ? 1.0 - miss[c] : fa[c];
  }

  friend bool operator==(const VisualSystem&, const VisualSystem&) = default;
};

/// The inferred counterpart of a VisualSystem; same shape and constraints.
using MetaEstimate = VisualSystem;

/// Priors used both to synthesize data and inside inference.
struct PriorConfig {
  double beta_alpha = 2.0;
  double beta_beta = 10.0;
  double poisson_lambda = 1.0;
  int count_lo = 1;
  int count_hi = 5;
  int frames_lo = 5;
  int frames_hi = 15;

  void validate(CategorySet categories) const;

  /// Mode (alpha-1)/(alpha+beta-2) of the rate prior.
  double rate_prior_map() const;
  /// Mean alpha/(alpha+beta) of the rate prior.
  double rate_prior_mean() const;
  /// Variance of the rate prior.
  double rate_prior_variance() const;

  friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

double truncated_poisson_pmf(int n, double lambda, int lo, int hi);
int sample_truncated_poisson(double lambda, int lo, int hi, Rng& rng);

/// log binom(n, k)
double log_binomial(int n, int k);

/// Prior over world states: |w| follows a truncated Poisson and, given the
/// size, the categories form a uniform random subset.
class WorldStatePrior {
 public:
  WorldStatePrior(const PriorConfig& prior, CategorySet categories);

  CategorySet categories() const { return categories_; }
  int count_lo() const { return lo_; }
  int count_hi() const { return hi_; }

  /// Probability of one specific state of size n (d(n) / binom(C, n)); 0 off support.
  double state_probability_for_size(int n) const;
  double log_state_probability_for_size(int n) const;

  double log_prob(WorldState w) const;
  WorldState sample(Rng& rng) const;

  /// Every state with nonzero prior, in increasing mask order. Size is
  /// sum_n binom(C, n); callers cap C before asking.
  std::vector<WorldState> enumerate_support() const;

 private:
  CategorySet categories_;
  int lo_;
  int hi_;
  double lambda_;
  std::vector<double> size_pmf_;       // index n - lo
  std::vector<double> log_state_prob_;  // index n, size C + 1
};

WorldState sample_world_state(const PriorConfig& prior, CategorySet categories, Rng& rng);
double world_state_log_prior(WorldState w, const PriorConfig& prior, CategorySet categories);
VisualSystem sample_visual_system(const PriorConfig& prior, CategorySet categories, Rng& rng);
Percept render_percept(WorldState w, const VisualSystem& v, Rng& rng);

/// log Pr(x | w, v) for a single percept.
double percept_log_likelihood(Percept x, WorldState w, const VisualSystem& v);

/// log Pr(o | w, v) = sum_c k_c log p_c + (F - k_c) log(1 - p_c).
double observation_log_likelihood(const DetectionStats& stats, WorldState w,
                                  const VisualSystem& v);

/// k log p + (n - k) log(1 - p) with 0 * log 0 = 0.
double binomial_log_kernel(int successes, int failures, double p);

}  // namespace metacog
