#pragma once

// Photon-number-resolved detection: binomial loss, TES pulse areas,
// classification, background subtraction and source reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "twinphoton/error.hpp"
#include "twinphoton/numerics/random.hpp"

namespace twinphoton {

enum class Plane { source, detector };
enum class TriggerMode { photon_triggered, laser_sync };

inline std::string to_string(Plane p) { return p == Plane::source ? "source" : "detector"; }
inline std::string to_string(TriggerMode m) { return m == TriggerMode::laser_sync ? "laser-sync" : "photon-triggered"; }

inline TriggerMode parse_trigger_mode(const std::string& s) {
  if (s == "laser-sync") return TriggerMode::laser_sync;
  if (s == "photon-triggered") return TriggerMode::photon_triggered;
  throw InvalidParameter("unknown trigger mode: " + s);
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct PhotonNumberDist {
  std::vector<double> p;
  Plane plane = Plane::source;
  std::vector<Interval> intervals;

  double at(std::size_t n) const { return n < p.size() ? p[n] : 0.0; }

  void validate() const {
    if (p.empty()) throw InvalidParameter("empty photon-number distribution");
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) throw InvalidParameter("probabilities must lie in [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidParameter("probabilities must sum to 1");
  }
};

/// q_k = sum_{n>=k} p_n C(n,k) s^k (1-s)^(n-k).
inline PhotonNumberDist thin_binomial(const PhotonNumberDist& source, double s) {
  if (!(s > 0.0 && s <= 1.0)) throw InvalidParameter("success probability must lie in (0,1]");
  source.validate();
  PhotonNumberDist q;
  q.plane = Plane::detector;
  q.p.assign(source.p.size(), 0.0);
  for (std::size_t n = 0; n < source.p.size(); ++n) {
    double binom = 1.0;  // C(n,k)
    for (std::size_t k = 0; k <= n; ++k) {
      q.p[k] += source.p[n] * binom * std::pow(s, static_cast<double>(k)) * std::pow(1.0 - s, static_cast<double>(n - k));
      binom = binom * static_cast<double>(n - k) / static_cast<double>(k + 1);
    }
  }
  return q;
}

// ---------------------------------------------------------------------------

struct CountRecord {
  /// Counts per detected photon number 0..3; c0 is only meaningful for laser-sync records.
  std::vector<double> counts = std::vector<double>(4, 0.0);
  double acquisition_time_s = 0.0;
  TriggerMode trigger_mode = TriggerMode::laser_sync;
  /// Background counts per hour for each photon number.
  std::vector<double> background_per_hour = std::vector<double>(4, 0.0);
  bool clamped = false;

  double count(std::size_t n) const { return n < counts.size() ? counts[n] : 0.0; }

  void validate() const {
    for (double c : counts) {
      if (!(c >= 0.0)) throw InvalidParameter("counts must be >= 0");
    }
    if (!(acquisition_time_s >= 0.0)) throw InvalidParameter("acquisition time must be >= 0");
  }
};

/// c_n' = max(0, c_n - rate_n T).
inline CountRecord background_subtract(const CountRecord& record) {
  record.validate();
  CountRecord out = record;
  const double hours = record.acquisition_time_s / 3600.0;
  for (std::size_t n = 0; n < out.counts.size(); ++n) {
    const double bg = n < record.background_per_hour.size() ? record.background_per_hour[n] * hours : 0.0;
    const double v = record.counts[n] - bg;
    if (v < 0.0) out.clamped = true;
    out.counts[n] = std::max(0.0, v);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Ratios {
  double r21 = 0.0;  // q2 / q1
  double r10 = 0.0;  // q1 / q0
};

/// Source distribution on {0,1,2} matching both detected ratios under loss s.
inline PhotonNumberDist reconstruct(const Ratios& r, double s) {
  if (!(s > 0.0 && s < 1.0)) throw InvalidParameter("success probability must lie in (0,1)");
  if (!(r.r21 >= 0.0) || !(r.r10 > 0.0) || !std::isfinite(r.r21) || !std::isfinite(r.r10)) {
    throw InvalidParameter("ratios must be positive and finite");
  }
  double p1 = 0.0, p2 = 0.0;
  if (r.r21 == 0.0) {
    // q1/q0 = s p1 / (1 - s p1)
    p1 = r.r10 / (s * (1.0 + r.r10));
  } else {
    const double c = s / r.r21 - 2.0 * (1.0 - s);  // p1 = c p2
    if (c < 0.0) throw InfeasibleData("2/1 ratio exceeds the pure-pair limit s / (2(1-s))");
    p2 = r.r10 / (s * s / r.r21 + r.r10 * s * (c + 2.0 - s));
    p1 = c * p2;
  }
  const double p0 = 1.0 - p1 - p2;
  if (p0 < 0.0 || p1 > 1.0 || p2 > 1.0) throw InfeasibleData("no source distribution on {0,1,2} matches the ratios");
  PhotonNumberDist d;
  d.plane = Plane::source;
  d.p = {p0, p1, p2};
  return d;
}

struct BootstrapOptions {
  int resamples = 10000;
  double lower_quantile = 0.16;
  double upper_quantile = 0.84;
  std::uint64_t seed = 0;
};

struct Reconstruction {
  PhotonNumberDist source;
  Ratios ratios;
  /// Resamples whose ratios had no feasible source and were dropped.
  int infeasible_resamples = 0;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

inline Reconstruction reconstruct_records(const CountRecord& twin_record, const CountRecord& vacuum_record,
                                          bool shared, double s, const BootstrapOptions& opts) {
  twin_record.validate();
  vacuum_record.validate();
  if (vacuum_record.trigger_mode != TriggerMode::laser_sync) {
    throw PreconditionError("the 1/0 ratio needs a laser-sync record");
  }
  if (!(opts.resamples >= 0) || !(opts.lower_quantile >= 0.0 && opts.lower_quantile < opts.upper_quantile &&
                                  opts.upper_quantile <= 1.0)) {
    throw InvalidParameter("bad bootstrap options");
  }
  const double c1 = twin_record.count(1), c2 = twin_record.count(2);
  const double v0 = vacuum_record.count(0), v1 = vacuum_record.count(1);
  if (c1 <= 0.0 || v0 <= 0.0 || v1 <= 0.0) throw InsufficientData("records need nonzero 0- and 1-photon counts");
  Reconstruction out;
  out.ratios = {c2 / c1, v1 / v0};
  out.source = reconstruct(out.ratios, s);
  if (opts.resamples == 0) return out;

  std::vector<std::vector<double>> samples(3);
  for (int b = 0; b < opts.resamples; ++b) {
    RandomStream rng(opts.seed, static_cast<std::uint64_t>(b));
    const double b1 = static_cast<double>(rng.poisson(c1)), b2 = static_cast<double>(rng.poisson(c2));
    const double b0 = static_cast<double>(rng.poisson(v0));
    const double bv1 = shared ? b1 : static_cast<double>(rng.poisson(v1));
    if (b1 <= 0.0 || b0 <= 0.0 || bv1 <= 0.0) {
      ++out.infeasible_resamples;
      continue;
    }
    try {
      const auto d = reconstruct(Ratios{b2 / b1, bv1 / b0}, s);
      for (std::size_t n = 0; n < 3; ++n) samples[n].push_back(d.p[n]);
    } catch (const InfeasibleData&) {
      ++out.infeasible_resamples;
    }
  }
  if (samples[0].empty()) throw InsufficientData("no feasible bootstrap resample");
  for (std::size_t n = 0; n < 3; ++n) {
    out.source.intervals.push_back(
        {quantile(samples[n], opts.lower_quantile), quantile(samples[n], opts.upper_quantile)});
  }
  return out;
}

}  // namespace detail

/// Reconstruction from a 2/1 ratio record (usually photon-triggered) and a
/// laser-sync record for the 1/0 ratio, with Poisson bootstrap intervals.
inline Reconstruction reconstruct(const CountRecord& twin_record, const CountRecord& vacuum_record, double s,
                                  const BootstrapOptions& opts = {}) {
  return detail::reconstruct_records(twin_record, vacuum_record, false, s, opts);
}

/// Single laser-sync record supplying both ratios; its c1 enters both.
inline Reconstruction reconstruct(const CountRecord& record, double s, const BootstrapOptions& opts = {}) {
  return detail::reconstruct_records(record, record, true, s, opts);
}

// ---------------------------------------------------------------------------

struct TesModel {
  double unit_area = 1.0;
  /// Gaussian width of the n-photon peak, n = 0..max.
  std::vector<double> sigma = {0.05, 0.08, 0.1, 0.12};
  /// Class k covers [thresholds[k-1], thresholds[k]).
  std::vector<double> thresholds = {0.5, 1.5, 2.5};

  std::size_t max_photons() const { return sigma.size() - 1; }

  static TesModel with_midpoint_thresholds(double unit_area, std::vector<double> sigma) {
    TesModel m;
    m.unit_area = unit_area;
    m.sigma = std::move(sigma);
    m.thresholds.clear();
    for (std::size_t n = 1; n < m.sigma.size(); ++n) m.thresholds.push_back((static_cast<double>(n) - 0.5) * unit_area);
    return m;
  }

  void validate() const {
    if (!(unit_area > 0.0)) throw InvalidParameter("unit area must be positive");
    if (sigma.empty()) throw InvalidParameter("TES model needs at least one peak");
    for (double v : sigma) {
      if (!(v >= 0.0)) throw InvalidParameter("peak widths must be >= 0");
    }
    if (thresholds.size() != sigma.size() - 1) throw InvalidParameter("need one threshold between adjacent peaks");
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const double lo = static_cast<double>(k) * unit_area, hi = static_cast<double>(k + 1) * unit_area;
      if (!(thresholds[k] > lo && thresholds[k] < hi)) throw InvalidParameter("thresholds must lie between peak means");
    }
  }
};

/// Pulse areas for n_triggers triggers. In photon-triggered mode only triggers
/// with at least one detected photon produce a record.
inline std::vector<double> simulate_tes(const PhotonNumberDist& detected, const TesModel& model,
                                        std::int64_t n_triggers, std::uint64_t seed,
                                        TriggerMode mode = TriggerMode::laser_sync) {
  model.validate();
  detected.validate();
  if (n_triggers < 0) throw InvalidParameter("trigger count must be >= 0");
  if (detected.p.size() > model.sigma.size()) throw InvalidParameter("TES model has fewer peaks than the distribution");
  std::vector<double> cdf;
  double acc = 0.0;
  const std::size_t first = mode == TriggerMode::photon_triggered ? 1 : 0;
  for (std::size_t k = first; k < detected.p.size(); ++k) {
    acc += detected.p[k];
    cdf.push_back(acc);
  }
  if (!(acc > 0.0)) throw InvalidParameter("no detectable photons for photon-triggered mode");
  RandomStream rng(seed);
  std::vector<double> areas;
  areas.reserve(static_cast<std::size_t>(n_triggers));
  for (std::int64_t t = 0; t < n_triggers; ++t) {
    const double u = rng.uniform() * acc;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, cdf.size() - 1) + first;
    const double mean = static_cast<double>(k) * model.unit_area;
    areas.push_back(model.sigma[k] > 0.0 ? mean + model.sigma[k] * rng.normal() : mean);
  }
  return areas;
}

inline CountRecord classify(const std::vector<double>& samples, const TesModel& model,
                            TriggerMode mode = TriggerMode::laser_sync, double acquisition_time_s = 0.0) {
  model.validate();
  CountRecord rec;
  rec.counts.assign(model.sigma.size(), 0.0);
  rec.background_per_hour.assign(model.sigma.size(), 0.0);
  rec.trigger_mode = mode;
  rec.acquisition_time_s = acquisition_time_s;
  for (double a : samples) {
    const auto k = static_cast<std::size_t>(std::upper_bound(model.thresholds.begin(), model.thresholds.end(), a) -
                                            model.thresholds.begin());
    rec.counts[k] += 1.0;
  }
  return rec;
}

}  // namespace twinphoton
