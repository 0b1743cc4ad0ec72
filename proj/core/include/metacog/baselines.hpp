#pragma once

// Comparison models that map an observation to a world state without
// learning anything about the detector.

#include <span>
#include <vector>

#include "metacog/inference.hpp"
#include "metacog/model.hpp"

namespace metacog {

enum class ThresholdComparison { kAtLeast, kStrictlyAbove };

struct ThresholdPolicy {
  double theta = 0.5;
  ThresholdComparison comparison = ThresholdComparison::kAtLeast;

  void validate() const;
};

/// Category c is present iff k_c / F meets theta. No prior is applied, so the
/// result may be empty or larger than any prior bound.
WorldState threshold_infer(const DetectionStats& stats, const ThresholdPolicy& policy);
WorldState threshold_infer(const Observation& o, CategorySet categories,
                           const ThresholdPolicy& policy);

/// 0.00, 0.01, ..., 1.00
std::vector<double> default_threshold_grid();

/// Streaming grid search: feed labelled observations, then ask for the
/// theta with the highest accuracy (smallest theta on ties).
class ThresholdFitter {
 public:
  explicit ThresholdFitter(std::vector<double> grid = default_threshold_grid(),
                           ThresholdComparison comparison = ThresholdComparison::kAtLeast);

  void add(const DetectionStats& stats, WorldState truth);
  void merge(const ThresholdFitter& other);
  std::int64_t observations() const { return total_; }

  struct Fit {
    double theta = 0.0;
    double accuracy = 0.0;
  };
  Fit best() const;
  double accuracy_at(std::size_t grid_index) const;
  const std::vector<double>& grid() const { return grid_; }

 private:
  std::vector<double> grid_;
  ThresholdComparison comparison_;
  std::vector<std::int64_t> correct_;
  std::int64_t total_ = 0;
};

struct LabelledObservation {
  DetectionStats stats;
  WorldState truth;
};

ThresholdFitter::Fit fit_threshold(std::span<const LabelledObservation> corpus,
                                   std::vector<double> grid = default_threshold_grid());

enum class LesionPoint { kPriorMap, kPriorMean };

/// Every rate fixed at the rate prior's mode (default) or mean.
MetaEstimate lesioned_meta_estimate(const PriorConfig& prior, CategorySet categories,
                                    LesionPoint point = LesionPoint::kPriorMap);

/// World-state inference with v fixed at the lesioned estimate (exact MAP).
std::vector<WorldStateEstimate> lesioned_infer(std::span<const DetectionStats> observations,
                                               const PriorConfig& prior, CategorySet categories,
                                               LesionPoint point = LesionPoint::kPriorMap);

}  // namespace metacog
