#pragma once

// Coincidence histograms from time tags, g2 normalization, pulsed peak areas,
// IRF-aware model fits and the twin-photon figures of merit.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "twinphoton/error.hpp"
#include "twinphoton/model.hpp"
#include "twinphoton/numerics/least_squares.hpp"

namespace twinphoton {

struct CoincidenceHistogram {
  std::int64_t bin_width_ps = 4;
  std::int64_t window_ps = 0;
  /// Bin k is centred on tau = (k - half_bins()) * bin_width_ps.
  std::vector<std::uint64_t> counts;
  double rate_a_hz = 0.0;
  double rate_b_hz = 0.0;
  double duration_s = 0.0;

  std::size_t half_bins() const { return counts.size() / 2; }
  double tau_ps(std::size_t k) const {
    return static_cast<double>(static_cast<std::int64_t>(k) - static_cast<std::int64_t>(half_bins())) *
           static_cast<double>(bin_width_ps);
  }
  std::vector<double> tau_grid() const {
    std::vector<double> g(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) g[k] = tau_ps(k);
    return g;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

struct CorrelateOptions {
  /// Acquisition time used for the rate metadata; defaults to the span of both streams.
  std::optional<double> duration_ps;
  int threads = 1;
};

namespace detail {

inline void require_sorted(std::span<const std::int64_t> t, const char* name) {
  if (!std::is_sorted(t.begin(), t.end())) {
    throw PreconditionError(std::string("tag stream ") + name + " is not sorted");
  }
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Bins are centered on multiples of w. A pair exactly on an edge is assigned by the
// parity of its midpoint, so swapping streams mirrors the histogram exactly.
inline std::int64_t bin_index(std::int64_t ta, std::int64_t tb, std::int64_t w) {
  const std::int64_t d = tb - ta;
  const std::int64_t k = floor_div(d + w / 2, w);
  if (w % 2 != 0 || (d + w / 2) - k * w != 0) return k;
  // Edge between bins k-1 and k: odd midpoints go to the bin farther from zero.
  const bool away = (floor_div(ta + tb, 2) & 1) != 0;
  return (d > 0) == away ? k : k - 1;
}

}  // namespace detail

/// Full cross-correlation: every pair adds one count at tau = t_b - t_a. Bins
/// are centred on multiples of the bin width up to floor(window / width) bins
/// on each side, each counted over its full width. Pass the two HBT detector
/// streams for an auto-correlation.
inline CoincidenceHistogram correlate(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                      std::int64_t bin_width_ps, std::int64_t window_ps,
                                      const CorrelateOptions& options = {}) {
  if (bin_width_ps <= 0) throw InvalidParameter("bin width must be positive");
  if (window_ps < 0) throw InvalidParameter("window must be >= 0");
  detail::require_sorted(a, "a");
  detail::require_sorted(b, "b");

  CoincidenceHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.window_ps = window_ps;
  const std::int64_t half = window_ps / bin_width_ps;
  h.counts.assign(static_cast<std::size_t>(2 * half + 1), 0);

  // Outer bins are filled over their full width, so pairs are gathered up to
  // one bin beyond the last centre and the bin index decides.
  const std::int64_t reach = half * bin_width_ps + bin_width_ps;
  auto accumulate = [&](std::size_t begin, std::size_t end, std::vector<std::uint64_t>& counts) {
    std::size_t lo = 0;
    if (begin < end) {
      lo = static_cast<std::size_t>(std::lower_bound(b.begin(), b.end(), a[begin] - reach) - b.begin());
    }
    for (std::size_t i = begin; i < end; ++i) {
      const std::int64_t ta = a[i];
      while (lo < b.size() && b[lo] < ta - reach) ++lo;
      for (std::size_t j = lo; j < b.size() && b[j] <= ta + reach; ++j) {
        const std::int64_t k = detail::bin_index(ta, b[j], bin_width_ps);
        if (k < -half || k > half) continue;
        ++counts[static_cast<std::size_t>(k + half)];
      }
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, options.threads));
  if (workers <= 1 || a.size() < 4 * workers) {
    accumulate(0, a.size(), h.counts);
  } else {
    std::vector<std::vector<std::uint64_t>> partial(workers, std::vector<std::uint64_t>(h.counts.size(), 0));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = a.size() * w / workers, end = a.size() * (w + 1) / workers;
      pool.emplace_back([&, w, begin, end] { accumulate(begin, end, partial[w]); });
    }
    for (auto& t : pool) t.join();
    for (const auto& p : partial) {
      for (std::size_t k = 0; k < p.size(); ++k) h.counts[k] += p[k];
    }
  }

  double duration_ps = 0.0;
  if (options.duration_ps) {
    duration_ps = *options.duration_ps;
  } else if (!a.empty() || !b.empty()) {
    std::int64_t first = std::numeric_limits<std::int64_t>::max(), last = std::numeric_limits<std::int64_t>::min();
    if (!a.empty()) first = std::min(first, a.front()), last = std::max(last, a.back());
    if (!b.empty()) first = std::min(first, b.front()), last = std::max(last, b.back());
    duration_ps = static_cast<double>(last - first);
  }
  h.duration_s = duration_ps * 1e-12;
  if (h.duration_s > 0.0) {
    h.rate_a_hz = static_cast<double>(a.size()) / h.duration_s;
    h.rate_b_hz = static_cast<double>(b.size()) / h.duration_s;
  }
  return h;
}

/// g2(tau_k) = counts_k / (r_a r_b T dtau). Also fills Poisson sigmas from max(counts, 1).
inline G2Curve normalize_cw(const CoincidenceHistogram& h, G2Kind kind = G2Kind::cross) {
  if (!(h.rate_a_hz > 0.0) || !(h.rate_b_hz > 0.0) || !(h.duration_s > 0.0)) {
    throw DivideByZeroError("normalization needs positive rates and acquisition time");
  }
  const double norm = h.rate_a_hz * h.rate_b_hz * h.duration_s * static_cast<double>(h.bin_width_ps) * 1e-12;
  G2Curve c;
  c.kind = kind;
  c.tau_ps = h.tau_grid();
  c.values.resize(h.counts.size());
  c.sigma.resize(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const double n = static_cast<double>(h.counts[k]);
    c.values[k] = n / norm;
    c.sigma[k] = std::sqrt(std::max(n, 1.0)) / norm;
  }
  return c;
}

// ---------------------------------------------------------------------------

struct PeakAreas {
  double a0 = 0.0;
  double a_mean = 0.0;
  double ratio = 0.0;
  /// Poisson standard error of the ratio.
  double ratio_sigma = 0.0;
};

/// Integrates counts in one-period windows centred on k * period. A0 is the
/// k = 0 window, A the mean over 1 <= |k| <= k_range.
inline PeakAreas peak_areas(const CoincidenceHistogram& h, double rep_rate_hz, int k_range = 10,
                            std::optional<double> integration_window_ps = std::nullopt) {
  if (!(rep_rate_hz > 0.0)) throw InvalidParameter("repetition rate must be positive");
  if (k_range < 1) throw InvalidParameter("k_range must be >= 1");
  const double period = 1e12 / rep_rate_hz;
  const double width = integration_window_ps.value_or(period);
  if (!(width > 0.0) || width > period * (1.0 + 1e-12)) {
    throw InvalidParameter("integration windows overlap (window wider than the repetition period)");
  }
  if (static_cast<double>(h.window_ps) < static_cast<double>(k_range) * period + width / 2.0 -
                                              static_cast<double>(h.bin_width_ps)) {
    throw InvalidParameter("histogram window does not cover k_range periods");
  }
  std::vector<double> area(static_cast<std::size_t>(2 * k_range + 1), 0.0);
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double tau = h.tau_ps(b);
    const auto k = static_cast<long>(std::floor(tau / period + 0.5));
    if (k < -k_range || k > k_range) continue;
    const double offset = tau - static_cast<double>(k) * period;
    if (offset < -width / 2.0 || offset >= width / 2.0) continue;
    area[static_cast<std::size_t>(k + k_range)] += static_cast<double>(h.counts[b]);
  }
  PeakAreas p;
  p.a0 = area[static_cast<std::size_t>(k_range)];
  double side = 0.0;
  for (int k = -k_range; k <= k_range; ++k) {
    if (k != 0) side += area[static_cast<std::size_t>(k + k_range)];
  }
  p.a_mean = side / (2.0 * k_range);
  p.ratio = p.a_mean > 0.0 ? p.a0 / p.a_mean : 0.0;
  if (p.a0 > 0.0 && side > 0.0) p.ratio_sigma = p.ratio * std::sqrt(1.0 / p.a0 + 1.0 / side);
  return p;
}

// ---------------------------------------------------------------------------

enum class CorrelationKind { autocorr, cross };

struct G2FitOptions {
  CompositeWeighting weighting = CompositeWeighting::flux;
  int max_iterations = 200;
  double tolerance = 1e-10;
};

struct G2Fit {
  RateSet rates;
  /// Unconvolved model at tau = 0, i.e. the deconvolved bunching value.
  double g_fit_0 = 0.0;
  double g_fit_0_sigma = 0.0;
  /// 1-sigma intervals of (pump, gamma_b, gamma_x) from the fit covariance.
  std::array<double, 3> rate_sigma{};
  /// Covariance of (log pump, log gamma_b, log gamma_x).
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double residual_norm = 0.0;
  double reduced_chi2 = 0.0;
  int iterations = 0;
  std::size_t points = 0;
};

/// Model curve seen through the instrument: the IRF-convolved composite of one
/// kind, averaged over each histogram bin by a 4-point midpoint rule. The
/// sub-samples avoid tau = 0, so the cross curve's jump there falls on a cell
/// edge instead of being smeared over a whole bin by the discrete convolution.
inline G2Curve measured_model(const RateSet& rates, CorrelationKind kind, std::span<const double> tau_grid_ps,
                              const InstrumentResponse& irf,
                              CompositeWeighting weighting = CompositeWeighting::flux) {
  constexpr int sub = 4;
  const auto step = tau_grid_ps.size() >= 2 ? detail::uniform_step(tau_grid_ps) : std::nullopt;
  if (!step) throw ResolutionError("instrument model needs a uniform ascending delay grid");
  std::vector<double> fine;
  fine.reserve(sub * tau_grid_ps.size());
  for (double t : tau_grid_ps) {
    for (int j = 0; j < sub; ++j) fine.push_back(t + ((j + 0.5) / sub - 0.5) * *step);
  }
  auto comp = g2_composites(rates, fine, weighting);
  const auto conv = convolve_irf(kind == CorrelationKind::cross ? comp.cross : comp.autocorr, irf);
  G2Curve out;
  out.kind = conv.kind;
  out.tau_ps.assign(tau_grid_ps.begin(), tau_grid_ps.end());
  out.values.assign(tau_grid_ps.size(), 0.0);
  for (std::size_t k = 0; k < tau_grid_ps.size(); ++k) {
    for (int j = 0; j < sub; ++j) out.values[k] += conv.values[sub * k + static_cast<std::size_t>(j)] / sub;
  }
  return out;
}

/// Weighted least-squares fit of the IRF-convolved model over equal-pump rates
/// (pump, gamma_b, gamma_x). The background level is the model's own tail (1).
inline G2Fit fit_g2(const G2Curve& measured, CorrelationKind kind, const InstrumentResponse& irf,
                    const RateSet& init, const G2FitOptions& options = {}) {
  init.validate();
  irf.validate();
  const std::size_t n = measured.values.size();
  if (measured.tau_ps.size() != n || n < 4) throw InvalidParameter("measured curve too short or inconsistent");
  if (!detail::uniform_step(measured.tau_ps)) throw ResolutionError("fit needs a uniform delay grid");
  Vector inv_sigma = Vector::Ones(static_cast<Eigen::Index>(n));
  if (!measured.sigma.empty()) {
    if (measured.sigma.size() != n) throw InvalidParameter("sigma size mismatch");
    for (std::size_t k = 0; k < n; ++k) {
      if (!(measured.sigma[k] > 0.0)) throw InvalidParameter("sigma must be positive");
      inv_sigma[static_cast<Eigen::Index>(k)] = 1.0 / measured.sigma[k];
    }
  }

  auto rates_of = [](const Vector& x) {
    return RateSet::equal_pump(std::exp(x[1]), std::exp(x[2]), std::exp(x[0]));
  };
  auto model_at = [&](const Vector& x) { return measured_model(rates_of(x), kind, measured.tau_ps, irf, options.weighting); };

  FitProblem problem;
  problem.residual = [&](const Vector& x) -> Vector {
    const G2Curve m = model_at(x);
    Vector r(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) r[static_cast<Eigen::Index>(k)] = m.values[k] - measured.values[k];
    return r;
  };
  problem.weights = inv_sigma;
  problem.initial = Eigen::Vector3d(std::log(init.pump_x), std::log(init.gamma_b), std::log(init.gamma_x));
  problem.lower = Eigen::Vector3d::Constant(std::log(1e-6));
  problem.upper = Eigen::Vector3d::Constant(std::log(1e4));
  problem.max_iterations = options.max_iterations;
  problem.tolerance = options.tolerance;

  const FitResult res = least_squares(problem);

  G2Fit out;
  out.rates = rates_of(res.params);
  out.covariance = res.covariance;
  out.residual_norm = res.residual_norm;
  out.iterations = res.iterations;
  out.points = n;
  out.reduced_chi2 = res.residual_norm * res.residual_norm / static_cast<double>(n > 3 ? n - 3 : 1);
  out.rate_sigma = {out.rates.pump_x * std::sqrt(res.covariance(0, 0)),
                    out.rates.gamma_b * std::sqrt(res.covariance(1, 1)),
                    out.rates.gamma_x * std::sqrt(res.covariance(2, 2))};

  const std::vector<double> zero{0.0};
  auto g0 = [&](const Vector& x) {
    const auto c = g2_composites(rates_of(x), zero, options.weighting);
    return kind == CorrelationKind::cross ? c.cross.values[0] : c.autocorr.values[0];
  };
  out.g_fit_0 = g0(res.params);
  Eigen::Vector3d grad;
  for (int j = 0; j < 3; ++j) {
    Vector xp = res.params, xm = res.params;
    xp[j] += 1e-6;
    xm[j] -= 1e-6;
    grad[j] = (g0(xp) - g0(xm)) / 2e-6;
  }
  out.g_fit_0_sigma = std::sqrt(std::max(0.0, grad.dot(res.covariance * grad)));
  return out;
}

// ---------------------------------------------------------------------------

/// alpha = g2_auto(0) / g2_cross(0).
inline double alpha_ratio(double g_auto_0, double g_cross_0) {
  if (!(g_auto_0 > 0.0) || !(g_cross_0 > 0.0)) throw InvalidParameter("alpha needs positive g2 values");
  return g_auto_0 / g_cross_0;
}

struct TwinBudget {
  double alpha = 0.0;
  /// Fraction of detected events that are twins once non-twin coincidences are
  /// counted as two single photons: alpha / (2 - alpha).
  double twin_detect_fraction = 0.0;
  double tpr_hz = 0.0;
};

/// Twin-photon rate into the first lens from CW count rates:
/// TPR = n_spcm / (eps eta) * twin_detect_fraction * eta^2.
inline TwinBudget twin_rate_cw(double n_spcm_hz, double eps_setup, double eta_lens, double alpha) {
  if (!(n_spcm_hz > 0.0)) throw InvalidParameter("count rate must be positive");
  for (double v : {eps_setup, eta_lens}) {
    if (!(v > 0.0 && v <= 1.0)) throw InvalidParameter("efficiencies must lie in (0,1]");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("alpha must lie in [0,1]");
  TwinBudget b;
  b.alpha = alpha;
  b.twin_detect_fraction = alpha / (2.0 - alpha);
  b.tpr_hz = n_spcm_hz / (eps_setup * eta_lens) * b.twin_detect_fraction * eta_lens * eta_lens;
  return b;
}

/// Triggered twin-photon rate f * p_twin * eta^2.
inline double twin_rate_pulsed(double rep_rate_hz, double p_twin, double eta_lens) {
  if (!(rep_rate_hz > 0.0)) throw InvalidParameter("repetition rate must be positive");
  if (!(p_twin >= 0.0 && p_twin <= 1.0) || !(eta_lens >= 0.0 && eta_lens <= 1.0)) {
    throw InvalidParameter("probabilities must lie in [0,1]");
  }
  return rep_rate_hz * p_twin * eta_lens * eta_lens;
}

}  // namespace twinphoton
