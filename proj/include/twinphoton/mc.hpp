#pragma once

// Monte Carlo quantum-jump trajectories of the cascade and the photon
// detection chain that turns emissions into detector time tags.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "twinphoton/error.hpp"
#include "twinphoton/model.hpp"
#include "twinphoton/numerics/random.hpp"

namespace twinphoton {

enum class Species { X, XX };
enum class Polarization { H, V };

inline std::string_view to_string(Species s) { return s == Species::X ? "X" : "XX"; }
inline std::string_view to_string(Polarization p) { return p == Polarization::H ? "H" : "V"; }

struct EmissionEvent {
  double time_ps = 0.0;
  Species species = Species::X;
  Polarization polarization = Polarization::H;
  std::optional<std::int64_t> pulse_index;  ///< empty for CW excitation

  friend bool operator==(const EmissionEvent&, const EmissionEvent&) = default;
};

enum class Detector { D0 = 0, D1 = 1 };

struct TimeTag {
  std::int64_t time_ps = 0;
  Detector detector = Detector::D0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

// ---------------------------------------------------------------------------
// Trajectories

namespace detail {

inline void validate_mc_rates(const RateSet& r) {
  if (!(r.gamma_b > 0.0) || !(r.gamma_x > 0.0) || !std::isfinite(r.gamma_b) || !std::isfinite(r.gamma_x)) {
    throw InvalidParameter("decay rates must be strictly positive and finite");
  }
  if (!(r.pump_b >= 0.0) || !(r.pump_x >= 0.0) || !std::isfinite(r.pump_b) || !std::isfinite(r.pump_x)) {
    throw InvalidParameter("pump rates must be non-negative and finite");
  }
}

/// Stationary distribution that also covers vanishing pumps (then the dot
/// sits in G for good).
inline Occupations stationary_distribution(const RateSet& r) {
  if (r.pump_x == 0.0) return Occupations::pure(State::G);
  Generator a = generator(r);
  a.row(0).setOnes();
  StateVector rhs = StateVector::Zero();
  rhs[0] = 1.0;
  return Occupations::from_vector(a.partialPivLu().solve(rhs));
}

inline State sample_state(const Occupations& occ, RandomStream& rng) {
  const double u = rng.uniform() * occ.total();
  if (u < occ.gg) return State::G;
  if (u < occ.gg + occ.hh) return State::H;
  if (u < occ.gg + occ.hh + occ.vv) return State::V;
  return State::B;
}

}  // namespace detail

/// One Gillespie step: holding time, the transition taken and the photon it emitted.
struct Jump {
  double dwell_ns = 0.0;
  State from = State::G;
  State to = State::G;
  std::optional<Species> species;
  Polarization polarization = Polarization::H;
};

/// Continuous-time Markov jump process over {G, H, V, B}.
///
/// Transitions: G->H, G->V at pump_x each; H->B, V->B at pump_b (no photon);
/// B->H, B->V at gamma_b each (XX photon of that polarization); H->G, V->G at
/// gamma_x (X photon). Pump transitions emit nothing.
class CascadeTrajectory {
 public:
  CascadeTrajectory(const RateSet& rates, State initial, RandomStream rng)
      : rates_(rates), state_(initial), rng_(std::move(rng)) {
    detail::validate_mc_rates(rates);
  }

  State state() const { return state_; }
  void reset(State s) { state_ = s; }

  double exit_rate(State s) const {
    switch (s) {
      case State::G: return 2.0 * rates_.pump_x;
      case State::H:
      case State::V: return rates_.pump_b + rates_.gamma_x;
      case State::B: return 2.0 * rates_.gamma_b;
    }
    return 0.0;
  }

  /// Advances one jump. In an absorbing state the dwell time is +infinity and the state is unchanged.
  Jump step() {
    Jump j;
    j.from = state_;
    const double total = exit_rate(state_);
    if (total <= 0.0) {
      j.dwell_ns = std::numeric_limits<double>::infinity();
      j.to = state_;
      return j;
    }
    j.dwell_ns = rng_.exponential(total);
    const double u = rng_.uniform() * total;
    switch (state_) {
      case State::G:
        j.to = u < rates_.pump_x ? State::H : State::V;
        break;
      case State::H:
      case State::V:
        if (u < rates_.pump_b) {
          j.to = State::B;
        } else {
          j.to = State::G;
          j.species = Species::X;
          j.polarization = state_ == State::H ? Polarization::H : Polarization::V;
        }
        break;
      case State::B:
        j.to = u < rates_.gamma_b ? State::H : State::V;
        j.species = Species::XX;
        j.polarization = j.to == State::H ? Polarization::H : Polarization::V;
        break;
    }
    state_ = j.to;
    return j;
  }

 private:
  RateSet rates_;
  State state_;
  RandomStream rng_;
};

struct CwOptions {
  /// Independent time segments, each with a seed derived from (seed, shard).
  int shards = 1;
  /// Worker threads; results do not depend on this value.
  int threads = 1;
  /// Start state at t = 0; drawn from the stationary distribution when empty.
  std::optional<State> initial_state;
};

/// Continuous-wave emission stream over [0, duration_ps).
///
/// Shard k covers [k T/S, (k+1) T/S). Shards after the first start one
/// relaxation time (1 / smallest nonzero rate) early from a stationary draw,
/// and emissions before the segment start are discarded.
inline std::vector<EmissionEvent> simulate_cw(const RateSet& rates, double duration_ps,
                                              std::uint64_t seed, const CwOptions& options = {}) {
  detail::validate_mc_rates(rates);
  if (!(duration_ps > 0.0)) return {};
  if (options.shards < 1) throw InvalidParameter("shards must be >= 1");
  const Occupations stationary = detail::stationary_distribution(rates);

  double min_rate = std::numeric_limits<double>::infinity();
  for (double r : {rates.gamma_b, rates.gamma_x, rates.pump_b, rates.pump_x}) {
    if (r > 0.0) min_rate = std::min(min_rate, r);
  }
  const double warmup_ps = 1e3 / min_rate;

  const auto shards = static_cast<std::size_t>(options.shards);
  std::vector<std::vector<EmissionEvent>> parts(shards);
  auto run_shard = [&](std::size_t k) {
    RandomStream rng(seed, k);
    const double seg_start = duration_ps * static_cast<double>(k) / static_cast<double>(shards);
    const double seg_end = duration_ps * static_cast<double>(k + 1) / static_cast<double>(shards);
    State initial;
    double t_ps = seg_start;
    if (k == 0 && options.initial_state) {
      initial = *options.initial_state;
    } else {
      initial = detail::sample_state(stationary, rng);
      if (k > 0) t_ps -= warmup_ps;
    }
    CascadeTrajectory traj(rates, initial, rng.fork(1));
    auto& out = parts[k];
    for (;;) {
      const Jump j = traj.step();
      t_ps += j.dwell_ns * 1e3;
      if (!(t_ps < seg_end)) break;
      if (j.species && t_ps >= seg_start) {
        out.push_back({t_ps, *j.species, j.polarization, std::nullopt});
      }
    }
  };

  const auto workers = std::min<std::size_t>(shards, static_cast<std::size_t>(std::max(1, options.threads)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < shards; ++k) run_shard(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < shards; k = next++) run_shard(k);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<EmissionEvent> events;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  events.reserve(total);
  for (auto& p : parts) events.insert(events.end(), p.begin(), p.end());
  return events;
}

// ---------------------------------------------------------------------------
// Pulsed excitation

struct PulsePrep {
  double repetition_rate_hz = 80e6;
  double prob_b = 1.0;
  double prob_h = 0.0;
  double prob_v = 0.0;

  double period_ps() const { return 1e12 / repetition_rate_hz; }

  void validate() const {
    if (!(repetition_rate_hz > 0.0) || !std::isfinite(repetition_rate_hz)) {
      throw InvalidParameter("repetition rate must be positive");
    }
    for (double p : {prob_b, prob_h, prob_v}) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameter("preparation probabilities must lie in [0,1]");
    }
    if (prob_b + prob_h + prob_v > 1.0 + 1e-12) {
      throw InvalidParameter("preparation probabilities sum to more than 1");
    }
  }
};

/// Pulsed emission stream. Each pulse overwrites the dot state with a draw from
/// `prep` (G with the remaining probability); the dot then decays with all pump
/// rates zero until the next pulse. Only the decay rates of `rates` are used.
inline std::vector<EmissionEvent> simulate_pulsed(const PulsePrep& prep, const RateSet& rates,
                                                  std::int64_t n_pulses, std::uint64_t seed) {
  prep.validate();
  RateSet decay = rates;
  decay.pump_b = 0.0;
  decay.pump_x = 0.0;
  detail::validate_mc_rates(decay);
  if (n_pulses < 0) throw InvalidParameter("pulse count must be >= 0");

  RandomStream rng(seed, 0);
  CascadeTrajectory traj(decay, State::G, rng.fork(1));
  const double period = prep.period_ps();
  std::vector<EmissionEvent> events;
  for (std::int64_t k = 0; k < n_pulses; ++k) {
    const double t0 = static_cast<double>(k) * period;
    const double u = rng.uniform();
    State s = State::G;
    if (u < prep.prob_b) {
      s = State::B;
    } else if (u < prep.prob_b + prep.prob_h) {
      s = State::H;
    } else if (u < prep.prob_b + prep.prob_h + prep.prob_v) {
      s = State::V;
    }
    traj.reset(s);
    double t = t0;
    while (traj.state() != State::G) {
      const Jump j = traj.step();
      t += j.dwell_ns * 1e3;
      if (!(t < t0 + period)) break;
      if (j.species) events.push_back({t, *j.species, j.polarization, k});
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Detection

enum class PolarizationFilter { none, H, V };
enum class SpeciesFilter { none, X, XX };
/// none: everything to D0. fifty_fifty: HBT beamsplitter. species: XX to D0 and
/// X to D1 (spectrally separated cross-correlation arms).
enum class Splitter { none, fifty_fifty, species };

struct DetectionConfig {
  PolarizationFilter polarization_filter = PolarizationFilter::none;
  SpeciesFilter species_filter = SpeciesFilter::none;
  double efficiency = 1.0;      ///< end-to-end detection probability per photon
  double jitter_fwhm_ps = 0.0;  ///< Gaussian timing jitter, per detector
  Splitter splitter = Splitter::none;
  double dark_rate_hz = 0.0;    ///< per detector in use
  double dead_time_ps = 0.0;

  void validate() const {
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw InvalidParameter("efficiency must lie in [0,1]");
    if (!(jitter_fwhm_ps >= 0.0) || !(dark_rate_hz >= 0.0) || !(dead_time_ps >= 0.0)) {
      throw InvalidParameter("jitter, dark rate and dead time must be >= 0");
    }
  }
};

struct TagStreams {
  std::vector<TimeTag> d0;
  std::vector<TimeTag> d1;
};

inline bool passes(const DetectionConfig& c, const EmissionEvent& e) {
  if (c.polarization_filter == PolarizationFilter::H && e.polarization != Polarization::H) return false;
  if (c.polarization_filter == PolarizationFilter::V && e.polarization != Polarization::V) return false;
  if (c.species_filter == SpeciesFilter::X && e.species != Species::X) return false;
  if (c.species_filter == SpeciesFilter::XX && e.species != Species::XX) return false;
  return true;
}

/// Filters, thins at `efficiency`, routes, jitters, applies dead time and merges
/// dark counts over [0, span_ps). span_ps defaults to the last event time.
inline TagStreams detect(std::span<const EmissionEvent> events, const DetectionConfig& config,
                         std::uint64_t seed, std::optional<double> span_ps = std::nullopt) {
  config.validate();
  for (std::size_t k = 1; k < events.size(); ++k) {
    if (events[k].time_ps < events[k - 1].time_ps) throw PreconditionError("events must be time-sorted");
  }
  RandomStream rng(seed, 0);
  const double sigma = config.jitter_fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  std::vector<double> raw[2];
  for (const auto& e : events) {
    if (!passes(config, e)) continue;
    if (!rng.bernoulli(config.efficiency)) continue;
    int det = 0;
    if (config.splitter == Splitter::fifty_fifty) {
      det = rng.bernoulli(0.5) ? 1 : 0;
    } else if (config.splitter == Splitter::species) {
      det = e.species == Species::XX ? 0 : 1;
    }
    double t = e.time_ps;
    if (sigma > 0.0) t += rng.normal() * sigma;
    raw[det].push_back(t);
  }

  const double span = span_ps.value_or(events.empty() ? 0.0 : events.back().time_ps);
  RandomStream dark_rng(seed, 1);
  const bool second_in_use = config.splitter != Splitter::none;
  std::vector<TimeTag> out[2];
  for (int det = 0; det < 2; ++det) {
    std::vector<std::int64_t> tags;
    tags.reserve(raw[det].size());
    std::sort(raw[det].begin(), raw[det].end());
    for (double t : raw[det]) tags.push_back(std::llround(t));
    if (config.dead_time_ps > 0.0) {
      std::vector<std::int64_t> kept;
      kept.reserve(tags.size());
      for (std::int64_t t : tags) {
        if (kept.empty() || static_cast<double>(t - kept.back()) >= config.dead_time_ps) kept.push_back(t);
      }
      tags.swap(kept);
    }
    if (config.dark_rate_hz > 0.0 && span > 0.0 && (det == 0 || second_in_use)) {
      const double rate_per_ps = config.dark_rate_hz * 1e-12;
      for (double t = dark_rng.exponential(rate_per_ps); t < span; t += dark_rng.exponential(rate_per_ps)) {
        tags.push_back(std::llround(t));
      }
      std::sort(tags.begin(), tags.end());
    }
    out[det].reserve(tags.size());
    for (std::int64_t t : tags) out[det].push_back({t, static_cast<Detector>(det)});
  }
  return {std::move(out[0]), std::move(out[1])};
}

/// Time values of a tag stream.
inline std::vector<std::int64_t> times_of(std::span<const TimeTag> tags) {
  std::vector<std::int64_t> t;
  t.reserve(tags.size());
  for (const auto& tag : tags) t.push_back(tag.time_ps);
  return t;
}

}  // namespace twinphoton
