#include "metacog/baselines.hpp"

#include "metacog/error.hpp"

namespace metacog {

namespace {

// Grid values are decimal fractions; compare with a little slack so that
// k / F == theta is not lost to binary round-off (e.g. 0.07 * 100).
constexpr double kRatioSlack = 1e-12;

bool meets(int k, int frames, double theta, ThresholdComparison comparison) {
  const double ratio = static_cast<double>(k) / static_cast<double>(frames);
  return comparison == ThresholdComparison::kAtLeast ? ratio >= theta - kRatioSlack
                                                      : ratio > theta + kRatioSlack;
}

}  // namespace

void ThresholdPolicy::validate() const {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ParameterError("threshold theta must lie in [0, 1]");
}

WorldState threshold_infer(const DetectionStats& stats, const ThresholdPolicy& policy) {
  policy.validate();
  if (stats.frames < 1) throw ParameterError("threshold_infer: observation has no frames");
  WorldState w;
  for (int c = 0; c < stats.categories(); ++c) {
    if (meets(stats.counts[c], stats.frames, policy.theta, policy.comparison)) w.insert(c);
  }
  return w;
}

WorldState threshold_infer(const Observation& o, CategorySet categories,
                           const ThresholdPolicy& policy) {
  return threshold_infer(DetectionStats::from(o, categories), policy);
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g(101);
  for (int i = 0; i <= 100; ++i) g[i] = i / 100.0;
  return g;
}

ThresholdFitter::ThresholdFitter(std::vector<double> grid, ThresholdComparison comparison)
    : grid_(std::move(grid)), comparison_(comparison), correct_(grid_.size(), 0) {
  if (grid_.empty()) throw ParameterError("threshold grid is empty");
  for (double t : grid_) ThresholdPolicy{t, comparison}.validate();
}

void ThresholdFitter::add(const DetectionStats& stats, WorldState truth) {
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    correct_[i] += threshold_infer(stats, {grid_[i], comparison_}) == truth ? 1 : 0;
  }
  ++total_;
}

void ThresholdFitter::merge(const ThresholdFitter& other) {
  if (other.grid_ != grid_ || other.comparison_ != comparison_) {
    throw ParameterError("threshold fitters use different grids");
  }
  for (std::size_t i = 0; i < grid_.size(); ++i) correct_[i] += other.correct_[i];
  total_ += other.total_;
}

double ThresholdFitter::accuracy_at(std::size_t grid_index) const {
  if (total_ == 0) throw ParameterError("threshold fit on an empty corpus");
  return static_cast<double>(correct_.at(grid_index)) / static_cast<double>(total_);
}

ThresholdFitter::Fit ThresholdFitter::best() const {
  if (total_ == 0) throw ParameterError("threshold fit on an empty corpus");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid_.size(); ++i) {
    if (correct_[i] > correct_[best] ||
        (correct_[i] == correct_[best] && grid_[i] < grid_[best])) {
      best = i;
    }
  }
  return {grid_[best], accuracy_at(best)};
}

ThresholdFitter::Fit fit_threshold(std::span<const LabelledObservation> corpus,
                                   std::vector<double> grid) {
  if (corpus.empty()) throw ParameterError("threshold fit on an empty corpus");
  ThresholdFitter fitter(std::move(grid));
  for (const auto& item : corpus) fitter.add(item.stats, item.truth);
  return fitter.best();
}

MetaEstimate lesioned_meta_estimate(const PriorConfig& prior, CategorySet categories,
                                    LesionPoint point) {
  const double value =
      point == LesionPoint::kPriorMap ? prior.rate_prior_map() : prior.rate_prior_mean();
  return VisualSystem::uniform(categories, value);
}

std::vector<WorldStateEstimate> lesioned_infer(std::span<const DetectionStats> observations,
                                               const PriorConfig& prior, CategorySet categories,
                                               LesionPoint point) {
  return retrospective_infer(lesioned_meta_estimate(prior, categories, point), observations,
                             WorldStatePrior(prior, categories));
}

}  // namespace metacog
