#include "metacog/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "metacog/error.hpp"

namespace metacog {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

CategorySet::CategorySet(int size) : size_(size) {
  if (size < 1 || size > kMaxCategories) {
    throw ParameterError("category count must be in [1, 64], got " + std::to_string(size));
  }
}

CategorySetValue::CategorySetValue(std::initializer_list<int> categories) {
  for (int c : categories) insert(c);
}

CategorySetValue CategorySetValue::from_indices(std::span<const int> categories) {
  CategorySetValue s;
  for (int c : categories) {
    if (c < 0 || c >= CategorySet::kMaxCategories) {
      throw ParameterError("category index out of range: " + std::to_string(c));
    }
    s.insert(c);
  }
  return s;
}

std::vector<int> CategorySetValue::indices() const {
  std::vector<int> out;
  out.reserve(count());
  for (CategoryMask m = mask_; m != 0; m &= m - 1) out.push_back(std::countr_zero(m));
  return out;
}

bool lexicographically_before(WorldState a, WorldState b, CategorySet categories) {
  for (int c = 0; c < categories.size(); ++c) {
    if (a.contains(c) != b.contains(c)) return !a.contains(c);
  }
  return false;
}

DetectionStats DetectionStats::from(const Observation& o, CategorySet categories) {
  DetectionStats s;
  s.counts.assign(categories.size(), 0);
  s.frames = o.frame_count();
  for (const Percept& x : o.percepts) {
    for (CategoryMask m = x.mask(); m != 0; m &= m - 1) {
      const int c = std::countr_zero(m);
      if (c >= categories.size()) {
        throw InputError("percept category " + std::to_string(c) + " outside category set");
      }
      ++s.counts[c];
    }
  }
  return s;
}

VisualSystem::VisualSystem(std::vector<double> fa_rates, std::vector<double> miss_rates)
    : fa(std::move(fa_rates)), miss(std::move(miss_rates)) {
  if (fa.size() != miss.size()) throw ParameterError("fa and miss vectors differ in length");
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!std::all_of(fa.begin(), fa.end(), in_unit) ||
      !std::all_of(miss.begin(), miss.end(), in_unit)) {
    throw ParameterError("visual system rates must lie in [0, 1]");
  }
}

VisualSystem VisualSystem::uniform(CategorySet categories, double value) {
  return VisualSystem(std::vector<double>(categories.size(), value),
                      std::vector<double>(categories.size(), value));
}

double VisualSystem::entry(int i) const {
  const int c = categories();
  return i < c ? fa[i] : miss[i - c];
}

double& VisualSystem::entry(int i) {
  const int c = categories();
  return i < c ? fa[i] : miss[i - c];
}

void PriorConfig::validate(CategorySet categories) const {
  if (!(beta_alpha > 0.0) || !(beta_beta > 0.0)) {
    throw ParameterError("beta_alpha and beta_beta must be positive");
  }
  if (!(poisson_lambda > 0.0)) throw ParameterError("poisson_lambda must be positive");
  if (count_lo < 0 || count_lo > count_hi) {
    throw ParameterError("count bounds must satisfy 0 <= lo <= hi, got [" +
                         std::to_string(count_lo) + "," + std::to_string(count_hi) + "]");
  }
  if (count_hi > categories.size()) {
    throw ParameterError("count upper bound " + std::to_string(count_hi) +
                         " exceeds category count " + std::to_string(categories.size()));
  }
  if (frames_lo < 1 || frames_lo > frames_hi) {
    throw ParameterError("frame bounds must satisfy 1 <= lo <= hi, got [" +
                         std::to_string(frames_lo) + "," + std::to_string(frames_hi) + "]");
  }
}

double PriorConfig::rate_prior_map() const {
  if (beta_alpha <= 1.0 || beta_beta <= 1.0) {
    throw ParameterError("beta prior has no interior mode unless alpha, beta > 1");
  }
  return (beta_alpha - 1.0) / (beta_alpha + beta_beta - 2.0);
}

double PriorConfig::rate_prior_mean() const { return beta_alpha / (beta_alpha + beta_beta); }

double PriorConfig::rate_prior_variance() const {
  const double s = beta_alpha + beta_beta;
  return beta_alpha * beta_beta / (s * s * (s + 1.0));
}

double log_binomial(int n, int k) {
  if (k < 0 || k > n) return kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

namespace {

// Normalized truncated Poisson pmf over [lo, hi], computed in log space so
// tiny lambda stays finite.
std::vector<double> truncated_poisson_table(double lambda, int lo, int hi) {
  if (!(lambda > 0.0)) throw ParameterError("poisson lambda must be positive");
  if (lo < 0 || lo > hi) throw ParameterError("truncated poisson requires 0 <= lo <= hi");
  std::vector<double> logp(hi - lo + 1);
  const double log_lambda = std::log(lambda);
  for (int n = lo; n <= hi; ++n) logp[n - lo] = n * log_lambda - std::lgamma(n + 1.0);
  const double top = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double& l : logp) total += (l = std::exp(l - top));
  for (double& p : logp) p /= total;
  return logp;
}

}  // namespace

double truncated_poisson_pmf(int n, double lambda, int lo, int hi) {
  const auto table = truncated_poisson_table(lambda, lo, hi);
  if (n < lo || n > hi) return 0.0;
  return table[n - lo];
}

int sample_truncated_poisson(double lambda, int lo, int hi, Rng& rng) {
  const auto table = truncated_poisson_table(lambda, lo, hi);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int n = lo; n < hi; ++n) {
    acc += table[n - lo];
    if (u < acc) return n;
  }
  return hi;
}

WorldStatePrior::WorldStatePrior(const PriorConfig& prior, CategorySet categories)
    : categories_(categories),
      lo_(prior.count_lo),
      hi_(prior.count_hi),
      lambda_(prior.poisson_lambda) {
  prior.validate(categories);
  size_pmf_ = truncated_poisson_table(lambda_, lo_, hi_);
  log_state_prob_.assign(categories.size() + 1, kNegInf);
  for (int n = lo_; n <= hi_; ++n) {
    log_state_prob_[n] = std::log(size_pmf_[n - lo_]) - log_binomial(categories.size(), n);
  }
}

double WorldStatePrior::log_state_probability_for_size(int n) const {
  if (n < 0 || n > categories_.size()) return kNegInf;
  return log_state_prob_[n];
}

double WorldStatePrior::state_probability_for_size(int n) const {
  return std::exp(log_state_probability_for_size(n));
}

double WorldStatePrior::log_prob(WorldState w) const {
  if ((w.mask() & ~categories_.full_mask()) != 0) return kNegInf;
  return log_state_probability_for_size(w.count());
}

WorldState WorldStatePrior::sample(Rng& rng) const {
  const double u = uniform01(rng);
  int n = hi_;
  double acc = 0.0;
  for (int m = lo_; m < hi_; ++m) {
    acc += size_pmf_[m - lo_];
    if (u < acc) {
      n = m;
      break;
    }
  }
  // Partial Fisher-Yates: the first n slots form a uniform n-subset.
  const int c = categories_.size();
  std::vector<int> idx(c);
  std::iota(idx.begin(), idx.end(), 0);
  WorldState w;
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, c - 1);
    std::swap(idx[i], idx[pick(rng)]);
    w.insert(idx[i]);
  }
  return w;
}

std::vector<WorldState> WorldStatePrior::enumerate_support() const {
  const int c = categories_.size();
  if (c > 30) throw ParameterError("world-state enumeration requested for too many categories");
  std::vector<WorldState> out;
  const CategoryMask end = CategoryMask{1} << c;
  for (CategoryMask m = 0; m < end; ++m) {
    const int n = std::popcount(m);
    if (n >= lo_ && n <= hi_) out.emplace_back(m);
  }
  return out;
}

WorldState sample_world_state(const PriorConfig& prior, CategorySet categories, Rng& rng) {
  return WorldStatePrior(prior, categories).sample(rng);
}

double world_state_log_prior(WorldState w, const PriorConfig& prior, CategorySet categories) {
  return WorldStatePrior(prior, categories).log_prob(w);
}

VisualSystem sample_visual_system(const PriorConfig& prior, CategorySet categories, Rng& rng) {
  VisualSystem v;
  v.fa.resize(categories.size());
  v.miss.resize(categories.size());
  for (double& x : v.fa) x = sample_beta(prior.beta_alpha, prior.beta_beta, rng);
  for (double& x : v.miss) x = sample_beta(prior.beta_alpha, prior.beta_beta, rng);
  return v;
}

Percept render_percept(WorldState w, const VisualSystem& v, Rng& rng) {
  Percept x;
  for (int c = 0; c < v.categories(); ++c) {
    if (uniform01(rng) < v.detection_probability(c, w.contains(c))) x.insert(c);
  }
  return x;
}

double binomial_log_kernel(int successes, int failures, double p) {
  double out = 0.0;
  if (successes > 0) out += successes * std::log(p);
  if (failures > 0) out += failures * std::log1p(-p);
  return out;
}

double percept_log_likelihood(Percept x, WorldState w, const VisualSystem& v) {
  double out = 0.0;
  for (int c = 0; c < v.categories(); ++c) {
    const double p = v.detection_probability(c, w.contains(c));
    const bool seen = x.contains(c);
    out += binomial_log_kernel(seen ? 1 : 0, seen ? 0 : 1, p);
  }
  return out;
}

double observation_log_likelihood(const DetectionStats& stats, WorldState w,
                                  const VisualSystem& v) {
  if (stats.categories() != v.categories()) {
    throw ParameterError("detection stats and visual system disagree on category count");
  }
  double out = 0.0;
  for (int c = 0; c < v.categories(); ++c) {
    const int k = stats.counts[c];
    if (k < 0 || k > stats.frames) throw ParameterError("detection count outside [0, F]");
    out += binomial_log_kernel(k, stats.frames - k, v.detection_probability(c, w.contains(c)));
  }
  return out;
}

}  // namespace metacog
