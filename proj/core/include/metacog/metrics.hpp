#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metacog/model.hpp"

namespace metacog {

struct MseBreakdown {
  double combined = 0.0;  // over all 2C entries
  double fa_only = 0.0;
  double miss_only = 0.0;
};

MseBreakdown meta_mse(const VisualSystem& v_true, const MetaEstimate& v_hat);

/// 1 when the inferred set equals the true set exactly, else 0.
int world_state_accuracy(WorldState w_true, WorldState w_hat);

/// Mean per-frame, per-category disagreement between an observation and the
/// world state it came from, as an exact fraction.
struct NoiseScore {
  std::int64_t disagreements = 0;
  std::int64_t cells = 1;  // frames * C

  double zeta() const { return static_cast<double>(disagreements) / static_cast<double>(cells); }
  NoiseScore reduced() const;
  friend bool operator==(const NoiseScore&, const NoiseScore&) = default;
  friend auto operator<=>(const NoiseScore& a, const NoiseScore& b) {
    // Compare as fractions; cells are positive.
    return a.disagreements * b.cells <=> b.disagreements * a.cells;
  }
};

NoiseScore observation_noise(WorldState w_true, const Observation& o, CategorySet categories);

/// Probability that a prior draw matches an independent prior draw exactly:
/// sum_n d(n)^2 / binom(C, n).
double chance_accuracy(int categories, double lambda, int lo, int hi);

/// Per-model correct/total counts bucketed by exact noise level. Merging is
/// associative and order-independent.
class NoiseAccuracyTable {
 public:
  explicit NoiseAccuracyTable(std::vector<std::string> models);

  const std::vector<std::string>& models() const { return models_; }
  void add(NoiseScore noise, const std::vector<int>& correct_per_model);
  void merge(const NoiseAccuracyTable& other);
  bool empty() const { return buckets_.empty(); }
  std::int64_t observations() const;

  struct Bucket {
    std::int64_t count = 0;
    std::vector<std::int64_t> correct;
  };
  const std::map<NoiseScore, Bucket>& buckets() const { return buckets_; }

  /// Pooled accuracy per model over observations with zeta in [lo, hi].
  struct Window {
    double zeta = 0.0;
    std::int64_t count = 0;
    std::vector<double> accuracy;
  };
  Window pooled(double lo, double hi) const;

 private:
  std::vector<std::string> models_;
  std::map<NoiseScore, Bucket> buckets_;
};

/// Rolling window: for each grid point z, accuracy over observations with
/// noise in the closed interval [z - halfwidth, z + halfwidth]. Windows with
/// no observations are omitted.
std::vector<NoiseAccuracyTable::Window> rolling_accuracy_by_noise(
    const NoiseAccuracyTable& table, double halfwidth, const std::vector<double>& grid);

/// 0.00, 0.01, ..., 1.00
std::vector<double> default_noise_grid();

}  // namespace metacog
