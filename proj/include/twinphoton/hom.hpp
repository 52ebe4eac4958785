#pragma once

// Two-photon interference of cascade pairs in a symmetric Mach-Zehnder
// interferometer, modelled at the level of detection events.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "twinphoton/correlator.hpp"
#include "twinphoton/error.hpp"
#include "twinphoton/mc.hpp"
#include "twinphoton/numerics/quadrature.hpp"
#include "twinphoton/numerics/random.hpp"

namespace twinphoton {

enum class HomPolarization { co, cross };

inline std::string to_string(HomPolarization p) { return p == HomPolarization::co ? "co" : "cross"; }

struct HomConfig {
  double mode_overlap = 1.0;
  HomPolarization polarization = HomPolarization::co;
  double rep_rate_hz = 80e6;
  std::int64_t n_pulses = 0;
  double efficiency = 1.0;
  double jitter_fwhm_ps = 0.0;
  std::int64_t bin_width_ps = 16;
  int k_range = 10;
  int shards = 1;
  int threads = 1;

  double effective_overlap() const { return polarization == HomPolarization::cross ? 0.0 : mode_overlap; }

  void validate() const {
    if (!(mode_overlap >= 0.0 && mode_overlap <= 1.0)) throw InvalidParameter("mode overlap must lie in [0,1]");
    if (!(rep_rate_hz > 0.0)) throw InvalidParameter("repetition rate must be positive");
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw InvalidParameter("efficiency must lie in [0,1]");
    if (!(jitter_fwhm_ps >= 0.0)) throw InvalidParameter("jitter must be >= 0");
    if (bin_width_ps <= 0 || k_range < 1 || shards < 1) throw InvalidParameter("bad histogram settings");
  }
};

// ---------------------------------------------------------------------------

/// Squared overlap of two one-sided exponential envelopes. With include_jitter
/// the X envelope is delayed by an exponential offset of mean tau_xx and the
/// overlap is averaged over that offset.
inline double temporal_overlap(double tau_x_ns, double tau_xx_ns, bool include_jitter) {
  if (!(tau_x_ns > 0.0) || !(tau_xx_ns > 0.0)) throw InvalidParameter("lifetimes must be positive");
  const double g1 = 1.0 / tau_xx_ns, g2 = 1.0 / tau_x_ns;
  auto amplitude = [&](double delay) {
    // <xi_XX | xi_X(t - delay)> for envelopes sqrt(g) exp(-g t / 2) on t >= 0.
    const auto r = integrate(
        [&](double t) { return std::sqrt(g1 * g2) * std::exp(-0.5 * g1 * (t + delay) - 0.5 * g2 * t); },
        Domain{}, 1e-12);
    return r.value;
  };
  if (!include_jitter) {
    const double a = amplitude(0.0);
    return a * a;
  }
  const auto avg = integrate(
      [&](double d) {
        const double a = amplitude(d);
        return g1 * std::exp(-g1 * d) * a * a;
      },
      Domain{}, 1e-9);
  return avg.value;
}

// ---------------------------------------------------------------------------

struct HomRun {
  CoincidenceHistogram histogram;
  std::int64_t input_photons = 0;
  std::int64_t detections = 0;
};

struct HomHistograms {
  HomRun co;
  HomRun cross;
};

namespace detail {

// Routes one pulse's photons through both splitters and appends tags.
inline void route_pulse(const std::vector<double>& times, double overlap, const HomConfig& cfg, double sigma,
                        RandomStream& rng, std::vector<std::int64_t>& d0, std::vector<std::int64_t>& d1,
                        std::int64_t& detections) {
  std::vector<std::pair<double, int>> out;
  if (times.size() == 2) {
    const int arm_a = rng.bernoulli(0.5) ? 1 : 0;
    const int arm_b = rng.bernoulli(0.5) ? 1 : 0;
    if (arm_a != arm_b && rng.bernoulli(overlap)) {
      const int port = rng.bernoulli(0.5) ? 1 : 0;
      out = {{times[0], port}, {times[1], port}};
    } else {
      out = {{times[0], rng.bernoulli(0.5) ? 1 : 0}, {times[1], rng.bernoulli(0.5) ? 1 : 0}};
    }
  } else {
    for (double t : times) out.emplace_back(t, rng.bernoulli(0.5) ? 1 : 0);
  }
  for (const auto& [t, port] : out) {
    if (!rng.bernoulli(cfg.efficiency)) continue;
    const double jittered = sigma > 0.0 ? t + rng.normal(0.0, sigma) : t;
    (port == 0 ? d0 : d1).push_back(std::llround(jittered));
    ++detections;
  }
}

inline HomRun run_hom(const std::vector<std::vector<double>>& pulses, const HomConfig& cfg, std::uint64_t seed,
                      std::uint64_t config_index) {
  const double overlap = cfg.effective_overlap();
  const double sigma = InstrumentResponse{cfg.jitter_fwhm_ps}.sigma_ps();
  const auto shards = static_cast<std::size_t>(cfg.shards);
  std::vector<std::vector<std::int64_t>> d0(shards), d1(shards);
  std::vector<std::int64_t> det(shards, 0);
  auto work = [&](std::size_t s) {
    RandomStream rng = RandomStream(seed, s).fork(config_index);
    const std::size_t begin = pulses.size() * s / shards, end = pulses.size() * (s + 1) / shards;
    for (std::size_t p = begin; p < end; ++p) route_pulse(pulses[p], overlap, cfg, sigma, rng, d0[s], d1[s], det[s]);
  };
  const auto workers = std::min<std::size_t>(shards, static_cast<std::size_t>(std::max(1, cfg.threads)));
  if (workers <= 1) {
    for (std::size_t s = 0; s < shards; ++s) work(s);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < shards; s += workers) work(s);
      });
    }
    for (auto& t : pool) t.join();
  }
  HomRun run;
  std::vector<std::int64_t> a, b;
  for (std::size_t s = 0; s < shards; ++s) {
    a.insert(a.end(), d0[s].begin(), d0[s].end());
    b.insert(b.end(), d1[s].begin(), d1[s].end());
    run.detections += det[s];
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (const auto& p : pulses) run.input_photons += static_cast<std::int64_t>(p.size());
  const double period = 1e12 / cfg.rep_rate_hz;
  const auto window = static_cast<std::int64_t>(std::ceil((cfg.k_range + 0.5) * period));
  CorrelateOptions opt;
  opt.duration_ps = static_cast<double>(pulses.size()) * period;
  opt.threads = cfg.threads;
  run.histogram = correlate(a, b, cfg.bin_width_ps, window, opt);
  return run;
}

}  // namespace detail

/// Sends pulsed pairs through the interferometer in both configurations. The
/// co run uses stream 0 and the cross run stream 1; the cross run ignores M.
/// Events must carry pulse indices, and no pulse may hold more than 2 photons.
inline HomHistograms simulate_hom(const std::vector<EmissionEvent>& events, const HomConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  std::map<std::int64_t, std::vector<double>> by_pulse;
  std::int64_t max_pulse = -1;
  for (const auto& e : events) {
    if (!e.pulse_index) throw PreconditionError("HOM input must come from a pulsed simulation");
    auto& v = by_pulse[*e.pulse_index];
    v.push_back(e.time_ps);
    if (v.size() > 2) throw PreconditionError("a pulse carries more than two photons");
    max_pulse = std::max(max_pulse, *e.pulse_index);
  }
  const std::int64_t n = std::max(config.n_pulses, max_pulse + 1);
  std::vector<std::vector<double>> pulses(static_cast<std::size_t>(n));
  for (auto& [k, v] : by_pulse) pulses[static_cast<std::size_t>(k)] = std::move(v);

  HomHistograms out;
  HomConfig co = config, cross = config;
  co.polarization = HomPolarization::co;
  cross.polarization = HomPolarization::cross;
  out.co = detail::run_hom(pulses, co, seed, 0);
  out.cross = detail::run_hom(pulses, cross, seed, 1);
  return out;
}

// ---------------------------------------------------------------------------

struct Visibility {
  double value = 0.0;
  /// Set when V > 1, which no physical pair of inputs produces.
  bool unphysical = false;
};

/// V = (g_perp - g_par) / (g_perp / 2).
inline Visibility visibility(double g_par_0, double g_perp_0) {
  if (!(g_perp_0 > 0.0)) throw InvalidParameter("g_perp(0) must be positive");
  Visibility v;
  v.value = 2.0 * (1.0 - g_par_0 / g_perp_0);
  v.unphysical = v.value > 1.0;
  return v;
}

struct VisibilityReport {
  double g_par_0 = 0.0;
  double g_par_0_sigma = 0.0;
  double g_perp_0 = 0.0;
  double g_perp_0_sigma = 0.0;
  double visibility = 0.0;
  double visibility_sigma = 0.0;
  bool unphysical = false;
};

/// Peak-area ratios of both histograms and the resulting visibility. Windows
/// narrower than the period keep late photons of neighbouring pulses out of A0.
inline VisibilityReport analyze_hom(const HomHistograms& h, double rep_rate_hz, int k_range = 10,
                                    std::optional<double> integration_window_ps = std::nullopt) {
  const auto par = peak_areas(h.co.histogram, rep_rate_hz, k_range, integration_window_ps);
  const auto perp = peak_areas(h.cross.histogram, rep_rate_hz, k_range, integration_window_ps);
  VisibilityReport r;
  r.g_par_0 = par.ratio;
  r.g_par_0_sigma = par.ratio_sigma;
  r.g_perp_0 = perp.ratio;
  r.g_perp_0_sigma = perp.ratio_sigma;
  const auto v = visibility(par.ratio, perp.ratio);
  r.visibility = v.value;
  r.unphysical = v.unphysical;
  if (par.ratio > 0.0) {
    const double q = par.ratio / perp.ratio;
    r.visibility_sigma = 2.0 * q *
                         std::sqrt(std::pow(par.ratio_sigma / par.ratio, 2) + std::pow(perp.ratio_sigma / perp.ratio, 2));
  }
  return r;
}

}  // namespace twinphoton
