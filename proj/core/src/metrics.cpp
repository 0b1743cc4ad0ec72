#include "metacog/metrics.hpp"

#include <cmath>
#include <numeric>

#include "metacog/error.hpp"

namespace metacog {

namespace {
// Absorbs decimal round-off in window edges such as 0.15 + 0.05.
constexpr double kWindowSlack = 1e-12;
}  // namespace

MseBreakdown meta_mse(const VisualSystem& v_true, const MetaEstimate& v_hat) {
  if (v_true.categories() != v_hat.categories() || v_true.fa.size() != v_true.miss.size() ||
      v_hat.fa.size() != v_hat.miss.size()) {
    throw ParameterError("meta_mse: dimension mismatch");
  }
  const int c_count = v_true.categories();
  if (c_count == 0) throw ParameterError("meta_mse: empty visual system");
  double fa = 0.0;
  double miss = 0.0;
  for (int c = 0; c < c_count; ++c) {
    fa += (v_true.fa[c] - v_hat.fa[c]) * (v_true.fa[c] - v_hat.fa[c]);
    miss += (v_true.miss[c] - v_hat.miss[c]) * (v_true.miss[c] - v_hat.miss[c]);
  }
  MseBreakdown out;
  out.fa_only = fa / c_count;
  out.miss_only = miss / c_count;
  out.combined = (out.fa_only + out.miss_only) / 2.0;
  return out;
}

int world_state_accuracy(WorldState w_true, WorldState w_hat) { return w_true == w_hat ? 1 : 0; }

NoiseScore NoiseScore::reduced() const {
  const std::int64_t g = std::gcd(disagreements, cells);
  return g == 0 ? *this : NoiseScore{disagreements / g, cells / g};
}

NoiseScore observation_noise(WorldState w_true, const Observation& o, CategorySet categories) {
  if (o.percepts.empty()) throw ParameterError("observation_noise: empty observation");
  std::int64_t d = 0;
  for (const Percept& x : o.percepts) {
    d += std::popcount((x.mask() ^ w_true.mask()) & categories.full_mask());
  }
  return NoiseScore{d, static_cast<std::int64_t>(o.percepts.size()) * categories.size()};
}

double chance_accuracy(int categories, double lambda, int lo, int hi) {
  if (hi > categories) throw ParameterError("chance_accuracy: count bound exceeds category count");
  double total = 0.0;
  for (int n = lo; n <= hi; ++n) {
    const double d = truncated_poisson_pmf(n, lambda, lo, hi);
    total += d * d * std::exp(-log_binomial(categories, n));
  }
  return total;
}

NoiseAccuracyTable::NoiseAccuracyTable(std::vector<std::string> models)
    : models_(std::move(models)) {}

void NoiseAccuracyTable::add(NoiseScore noise, const std::vector<int>& correct_per_model) {
  if (correct_per_model.size() != models_.size()) {
    throw ParameterError("noise table: model count mismatch");
  }
  Bucket& b = buckets_[noise.reduced()];
  if (b.correct.empty()) b.correct.assign(models_.size(), 0);
  ++b.count;
  for (std::size_t m = 0; m < models_.size(); ++m) b.correct[m] += correct_per_model[m];
}

void NoiseAccuracyTable::merge(const NoiseAccuracyTable& other) {
  if (other.models_ != models_) throw ParameterError("noise table: merging different models");
  for (const auto& [key, src] : other.buckets_) {
    Bucket& b = buckets_[key];
    if (b.correct.empty()) b.correct.assign(models_.size(), 0);
    b.count += src.count;
    for (std::size_t m = 0; m < models_.size(); ++m) b.correct[m] += src.correct[m];
  }
}

std::int64_t NoiseAccuracyTable::observations() const {
  std::int64_t n = 0;
  for (const auto& [key, b] : buckets_) n += b.count;
  return n;
}

NoiseAccuracyTable::Window NoiseAccuracyTable::pooled(double lo, double hi) const {
  Window w;
  w.zeta = 0.5 * (lo + hi);
  std::vector<std::int64_t> correct(models_.size(), 0);
  for (const auto& [key, b] : buckets_) {
    const double z = key.zeta();
    if (z < lo - kWindowSlack || z > hi + kWindowSlack) continue;
    w.count += b.count;
    for (std::size_t m = 0; m < models_.size(); ++m) correct[m] += b.correct[m];
  }
  w.accuracy.assign(models_.size(), 0.0);
  if (w.count > 0) {
    for (std::size_t m = 0; m < models_.size(); ++m) {
      w.accuracy[m] = static_cast<double>(correct[m]) / static_cast<double>(w.count);
    }
  }
  return w;
}

std::vector<NoiseAccuracyTable::Window> rolling_accuracy_by_noise(
    const NoiseAccuracyTable& table, double halfwidth, const std::vector<double>& grid) {
  if (table.empty()) throw ParameterError("rolling accuracy: no observations");
  if (!(halfwidth >= 0.0)) throw ParameterError("rolling accuracy: negative window");
  std::vector<NoiseAccuracyTable::Window> out;
  for (double z : grid) {
    auto w = table.pooled(z - halfwidth, z + halfwidth);
    if (w.count == 0) continue;
    w.zeta = z;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<double> default_noise_grid() {
  std::vector<double> g(101);
  for (int i = 0; i <= 100; ++i) g[i] = i / 100.0;
  return g;
}

}  // namespace metacog
