#pragma once

// Four-level biexciton-exciton cascade: rate equations, steady state,
// two-photon correlation functions and instrument-response convolution.
//
// States are G (ground), H and V (bright excitons) and B (biexciton).
// Rates are in 1/ns; correlation-curve delays are in ps.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "twinphoton/error.hpp"
#include "twinphoton/numerics/expm.hpp"

namespace twinphoton {

enum class State : int { G = 0, H = 1, V = 2, B = 3 };

using StateVector = Eigen::Vector4d;
using Generator = Eigen::Matrix4d;

struct RateSet {
  double gamma_b = 1.0;  ///< decay rate per biexciton channel (B->H and B->V each)
  double gamma_x = 1.0;  ///< exciton decay rate (H->G, V->G)
  double pump_b = 1.0;   ///< exciton -> biexciton pump rate
  double pump_x = 1.0;   ///< ground -> exciton pump rate, per polarization

  static RateSet equal_pump(double gamma_b, double gamma_x, double pump) {
    return RateSet{gamma_b, gamma_x, pump, pump};
  }

  bool equal_pumps() const { return pump_b == pump_x; }

  void validate() const {
    for (double r : {gamma_b, gamma_x, pump_b, pump_x}) {
      if (!(r > 0.0) || !std::isfinite(r)) {
        throw InvalidParameter("rates must be strictly positive and finite");
      }
    }
  }
};

struct Occupations {
  double gg = 1.0;
  double hh = 0.0;
  double vv = 0.0;
  double bb = 0.0;

  StateVector vector() const { return StateVector(gg, hh, vv, bb); }
  static Occupations from_vector(const StateVector& v) { return {v[0], v[1], v[2], v[3]}; }
  static Occupations pure(State s) {
    Occupations o{0.0, 0.0, 0.0, 0.0};
    switch (s) {
      case State::G: o.gg = 1.0; break;
      case State::H: o.hh = 1.0; break;
      case State::V: o.vv = 1.0; break;
      case State::B: o.bb = 1.0; break;
    }
    return o;
  }
  double total() const { return gg + hh + vv + bb; }

  void validate() const {
    for (double p : {gg, hh, vv, bb}) {
      if (!(p >= -1e-12 && p <= 1.0 + 1e-12)) throw InvalidParameter("occupation outside [0,1]");
    }
    if (std::fabs(total() - 1.0) > 1e-9) throw InvalidParameter("occupations do not sum to 1");
  }
};

enum class G2Kind { xx_x, x_xx, x_x, xx_xx, auto_composite, cross };

inline std::string_view to_string(G2Kind k) {
  switch (k) {
    case G2Kind::xx_x: return "XX-X";
    case G2Kind::x_xx: return "X-XX";
    case G2Kind::x_x: return "X-X";
    case G2Kind::xx_xx: return "XX-XX";
    case G2Kind::auto_composite: return "auto";
    case G2Kind::cross: return "cross";
  }
  return "?";
}

inline G2Kind parse_g2_kind(std::string_view s) {
  for (G2Kind k : {G2Kind::xx_x, G2Kind::x_xx, G2Kind::x_x, G2Kind::xx_xx,
                   G2Kind::auto_composite, G2Kind::cross}) {
    if (s == to_string(k)) return k;
  }
  if (s == "auto-composite") return G2Kind::auto_composite;
  throw InvalidParameter("unknown correlation kind '" + std::string(s) + "'");
}

struct G2Curve {
  std::vector<double> tau_ps;
  std::vector<double> values;
  G2Kind kind = G2Kind::cross;
  /// Per-point standard deviation; filled for measured curves, empty for models.
  std::vector<double> sigma;
};

struct InstrumentResponse {
  double fwhm_ps = 350.0;

  double sigma_ps() const { return fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0))); }
  void validate() const {
    if (!(fwhm_ps > 0.0) || !std::isfinite(fwhm_ps)) throw InvalidParameter("IRF FWHM must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Rate equations

/// Column-stochastic rate generator: d(rho)/dt = Q rho, column j = outflow of state j.
///
/// The exciton equations use -P_B rho_HH (resp. rho_VV) for the pump into the
/// biexciton; this is the only form consistent with a stationary state that
/// satisfies rho_BB = P^2/N and rho_HH = P Gamma_B / N.
inline Generator generator(const RateSet& r) {
  Generator q = Generator::Zero();
  constexpr int g = 0, h = 1, v = 2, b = 3;
  q(h, g) = r.pump_x;
  q(v, g) = r.pump_x;
  q(g, g) = -2.0 * r.pump_x;
  for (int x : {h, v}) {
    q(b, x) = r.pump_b;
    q(g, x) = r.gamma_x;
    q(x, x) = -(r.pump_b + r.gamma_x);
  }
  q(h, b) = r.gamma_b;
  q(v, b) = r.gamma_b;
  q(b, b) = -2.0 * r.gamma_b;
  return q;
}

/// Unique fixed point of the rate equations.
inline Occupations steady_state(const RateSet& rates) {
  rates.validate();
  Generator a = generator(rates);
  a.row(0).setOnes();  // replace one balance equation by normalization
  StateVector rhs = StateVector::Zero();
  rhs[0] = 1.0;
  const StateVector rho = a.partialPivLu().solve(rhs);
  return Occupations::from_vector(rho);
}

/// Occupations after evolving `init` for tau_ns under the rate equations.
inline Occupations evolve(const RateSet& rates, const Occupations& init, double tau_ns) {
  rates.validate();
  init.validate();
  if (!(tau_ns >= 0.0)) throw InvalidParameter("evolution time must be >= 0");
  return Occupations::from_vector(
      matrix_exponential_action<4>(generator(rates), init.vector(), tau_ns));
}

// ---------------------------------------------------------------------------
// Correlation functions

namespace detail {

/// Returns the grid step when `grid` is ascending and uniformly spaced.
inline std::optional<double> uniform_step(std::span<const double> grid) {
  if (grid.size() < 2) return std::nullopt;
  const double step = (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1);
  if (!(step > 0.0)) return std::nullopt;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double expected = grid.front() + step * static_cast<double>(k);
    if (std::fabs(grid[k] - expected) > 1e-9 * std::max(1.0, std::fabs(expected))) {
      return std::nullopt;
    }
  }
  return step;
}

struct Regression {
  State start;   // state right after the start photon
  State stop;    // upper state of the stop transition
};

inline Regression regression_for(G2Kind kind) {
  switch (kind) {
    case G2Kind::xx_x: return {State::H, State::H};   // B->H emitted, wait for H->G
    case G2Kind::xx_xx: return {State::H, State::B};  // B->H emitted, wait for B->H
    case G2Kind::x_xx: return {State::G, State::B};   // H->G emitted, wait for B->H
    case G2Kind::x_x: return {State::G, State::H};    // H->G emitted, wait for H->G
    default: break;
  }
  throw InvalidParameter("kind must be one of XX-X, X-XX, X-X, XX-XX");
}

inline double component(const StateVector& v, State s) { return v[static_cast<int>(s)]; }

}  // namespace detail

/// Two-photon correlation by the quantum-regression construction: collapse to the
/// post-detection state, evolve, read the stop-transition population and
/// normalize by its steady-state value. Delays in ps, tau >= 0.
inline G2Curve g2_numeric(G2Kind kind, const RateSet& rates, std::span<const double> tau_grid_ps) {
  rates.validate();
  const auto reg = detail::regression_for(kind);
  for (double t : tau_grid_ps) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidParameter("g2_numeric needs tau >= 0");
  }
  const Generator q = generator(rates);
  const StateVector ss = steady_state(rates).vector();
  const double norm = detail::component(ss, reg.stop);
  const StateVector init = Occupations::pure(reg.start).vector();

  G2Curve out;
  out.kind = kind;
  out.tau_ps.assign(tau_grid_ps.begin(), tau_grid_ps.end());
  out.values.resize(tau_grid_ps.size());
  if (tau_grid_ps.empty()) return out;

  if (const auto step = detail::uniform_step(tau_grid_ps)) {
    const Generator propagator = matrix_exponential<4>(q * (*step * 1e-3));
    StateVector v = matrix_exponential_action<4>(q, init, tau_grid_ps.front() * 1e-3);
    for (std::size_t k = 0; k < tau_grid_ps.size(); ++k) {
      if (k) v = propagator * v;
      out.values[k] = detail::component(v, reg.stop) / norm;
    }
  } else {
    for (std::size_t k = 0; k < tau_grid_ps.size(); ++k) {
      const StateVector v = matrix_exponential_action<4>(q, init, tau_grid_ps[k] * 1e-3);
      out.values[k] = detail::component(v, reg.stop) / norm;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Printed closed forms (equal pumps only)

enum class Beta3Variant {
  as_printed,        ///< Gamma_X^2 bracket contains "+ 6 Gamma_B"
  with_pump_factor,  ///< "+ 6 Gamma_B P", mirroring the beta_4 bracket
};

/// Abbreviations used by the closed-form correlation functions. `d` is the
/// discriminant (Gamma_X - 2 Gamma_B)^2 + 6 Gamma_X P - 4 Gamma_B P + P^2.
struct PrintedConstants {
  double pump = 0.0;
  double n = 0.0;
  double d = 0.0;
  double sqrt_d = 0.0;
  double a = 0.0;  ///< P^2 / N
  double z = 0.0;  ///< 4 D N; defined alongside the others but unused by any expression
  double beta1 = 0.0, beta2 = 0.0, beta3 = 0.0, beta4 = 0.0;
};

inline PrintedConstants printed_constants(const RateSet& rates,
                                          Beta3Variant variant = Beta3Variant::as_printed) {
  rates.validate();
  if (!rates.equal_pumps()) throw InvalidParameter("closed forms require pump_b == pump_x");
  const double gb = rates.gamma_b, gx = rates.gamma_x, p = rates.pump_x;
  PrintedConstants c;
  c.pump = p;
  c.n = gx * gb + 2.0 * p * gb + p * p;
  c.d = (gx - 2.0 * gb) * (gx - 2.0 * gb) + 6.0 * gx * p - 4.0 * gb * p + p * p;
  c.a = p * p / c.n;
  c.z = 4.0 * c.d * c.n;
  if (c.d < 0.0) return c;
  const double sd = std::sqrt(c.d);
  c.sqrt_d = sd;
  c.beta1 = 4.0 * gb * p * c.d;
  c.beta2 = 2.0 * c.d * c.n;
  const double six_gb = variant == Beta3Variant::as_printed ? 6.0 * gb : 6.0 * gb * p;
  c.beta3 = gx * gx * gx * gb - p * p * (2.0 * gb - p) * (-2.0 * gb + p + sd) +
            gx * gx * (-4.0 * gb * gb + six_gb + p * p - gb * sd) +
            gx * (4.0 * gb * gb * gb + p * p * (6.0 * p - sd) + 2.0 * gb * gb * (-2.0 * p + sd) -
                  3.0 * gb * p * (p + sd));
  c.beta4 = gx * gx * gx * gb + p * p * (2.0 * gb - p) * (2.0 * gb - p + sd) +
            gx * gx * (-4.0 * gb * gb + 6.0 * gb * p + p * p + gb * sd) +
            gx * (4.0 * gb * gb * gb + p * p * (6.0 * p + sd) + 2.0 * gb * gb * (-2.0 * p + sd) +
                  3.0 * gb * p * (-p + sd));
  return c;
}

/// Literal transcription of the published closed-form g2 expressions.
///
/// Kept for documentation and cross-checking only; g2_numeric is the model
/// used everywhere else. The XX-X and X-X expressions do not agree with the
/// regression construction (at Gamma_B = Gamma_X = P = 1 the XX-X form gives
/// 4.5 at zero delay instead of N/(P Gamma_B) = 4).
/// Terms e^{tau sqrt(D)} are regrouped with their e^{-(...)tau/2} prefactor
/// to avoid overflow; the algebra is unchanged.
inline G2Curve g2_printed(G2Kind kind, const RateSet& rates, std::span<const double> tau_grid_ps,
                          Beta3Variant variant = Beta3Variant::as_printed) {
  const PrintedConstants c = printed_constants(rates, variant);
  if (c.d < 0.0) throw ComplexBranchError("closed forms need D >= 0 (D = " + std::to_string(c.d) + ")");
  if (c.d == 0.0) throw InvalidParameter("closed forms divide by sqrt(D); D == 0");
  const double gb = rates.gamma_b, gx = rates.gamma_x, p = c.pump, sd = c.sqrt_d;
  const double s = gx + 2.0 * gb + 3.0 * p;

  G2Curve out;
  out.kind = kind;
  out.tau_ps.assign(tau_grid_ps.begin(), tau_grid_ps.end());
  out.values.reserve(tau_grid_ps.size());
  for (double tau_ps : tau_grid_ps) {
    if (!(tau_ps >= 0.0)) throw InvalidParameter("closed forms need tau >= 0");
    const double t = tau_ps * 1e-3;
    // e_fast = e^{-(S + sqrt D) t/2}, e_slow = e_fast * e^{t sqrt D}
    const double e_fast = std::exp(-(s + sd) * t / 2.0);
    const double e_slow = std::exp(-(s - sd) * t / 2.0);
    double g = 0.0;
    switch (kind) {
      case G2Kind::xx_x: {
        const double pre = c.n * c.a / (4.0 * c.d * p * p * p * gb);
        g = pre * (c.beta1 + c.beta2 * std::exp(-(gx + p) * t) +
                   c.beta3 * std::exp(-(0.5 * gx + gb + 1.5 * p - 0.5 * sd) * t) +
                   c.beta4 * std::exp(-(0.5 * gx + gb + 1.5 * p + 0.5 * sd) * t));
        break;
      }
      case G2Kind::x_xx:
        g = 0.5 * ((e_fast - e_slow) * s / sd - e_fast - e_slow) + 1.0;
        break;
      case G2Kind::x_x:
        g = (-gb * sd * (e_fast + e_slow) -
             (e_fast - e_slow) * ((gx - 2.0 * gb) * gb + gb * p + p * p)) /
                (2.0 * gb * sd) +
            1.0;
        break;
      case G2Kind::xx_xx:
        g = ((e_fast - e_slow) * (gx + p) * (-2.0 * gb + p) - p * sd * (e_fast + e_slow)) /
                (2.0 * p * sd) +
            1.0;
        break;
      default:
        throw InvalidParameter("kind must be one of XX-X, X-XX, X-X, XX-XX");
    }
    out.values.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite correlations

enum class CompositeWeighting {
  /// Weights from the steady-state photon fluxes f_XX = Gamma_B rho_BB and
  /// f_X = Gamma_X rho_HH of one polarization channel. This is the correlation
  /// of the merged XX+X photon stream produced by the rate model.
  flux,
  /// Equal weights 1/4, the "equally distributed probabilities" reading.
  equal,
};

struct AutoWeights {
  double xx_x = 0.25;
  double x_xx = 0.25;
  double x_x = 0.25;
  double xx_xx = 0.25;
};

inline AutoWeights auto_weights(const RateSet& rates, CompositeWeighting mode) {
  if (mode == CompositeWeighting::equal) return {};
  const Occupations ss = steady_state(rates);
  const double f_xx = rates.gamma_b * ss.bb;
  const double f_x = rates.gamma_x * ss.hh;
  const double total2 = (f_xx + f_x) * (f_xx + f_x);
  return {f_xx * f_x / total2, f_xx * f_x / total2, f_x * f_x / total2, f_xx * f_xx / total2};
}

/// Twin fraction g2_auto(0)/g2_cross(0) implied by the composite weights.
inline double model_alpha(const RateSet& rates, CompositeWeighting mode = CompositeWeighting::flux) {
  return auto_weights(rates, mode).xx_x;
}

struct CompositeCurves {
  G2Curve cross;
  G2Curve autocorr;
};

/// Cross correlation (XX start, X stop; X-XX branch for tau < 0) and the
/// symmetric auto correlation of the degenerate channel on any tau grid.
inline CompositeCurves g2_composites(const RateSet& rates, std::span<const double> tau_grid_ps,
                                     CompositeWeighting mode = CompositeWeighting::flux) {
  rates.validate();
  std::vector<double> abs_grid;
  abs_grid.reserve(tau_grid_ps.size());
  for (double t : tau_grid_ps) abs_grid.push_back(std::fabs(t));
  std::sort(abs_grid.begin(), abs_grid.end());
  abs_grid.erase(std::unique(abs_grid.begin(), abs_grid.end()), abs_grid.end());

  const auto xx_x = g2_numeric(G2Kind::xx_x, rates, abs_grid).values;
  const auto x_xx = g2_numeric(G2Kind::x_xx, rates, abs_grid).values;
  const auto x_x = g2_numeric(G2Kind::x_x, rates, abs_grid).values;
  const auto xx_xx = g2_numeric(G2Kind::xx_xx, rates, abs_grid).values;
  const AutoWeights w = auto_weights(rates, mode);

  CompositeCurves out;
  out.cross.kind = G2Kind::cross;
  out.autocorr.kind = G2Kind::auto_composite;
  out.cross.tau_ps.assign(tau_grid_ps.begin(), tau_grid_ps.end());
  out.autocorr.tau_ps = out.cross.tau_ps;
  out.cross.values.reserve(tau_grid_ps.size());
  out.autocorr.values.reserve(tau_grid_ps.size());
  for (double t : tau_grid_ps) {
    const auto k = static_cast<std::size_t>(
        std::lower_bound(abs_grid.begin(), abs_grid.end(), std::fabs(t)) - abs_grid.begin());
    out.cross.values.push_back(t >= 0.0 ? xx_x[k] : x_xx[k]);
    out.autocorr.values.push_back(w.xx_x * xx_x[k] + w.x_xx * x_xx[k] + w.x_x * x_x[k] +
                                  w.xx_xx * xx_xx[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instrument response

/// Discrete convolution with a unit-area Gaussian truncated at +-5 sigma.
/// The curve must sit on a uniform grid with spacing <= FWHM/10; values past
/// the grid ends are taken equal to the end values.
inline G2Curve convolve_irf(const G2Curve& curve, const InstrumentResponse& irf) {
  irf.validate();
  if (curve.tau_ps.size() != curve.values.size()) throw InvalidParameter("curve size mismatch");
  if (curve.tau_ps.size() < 2) return curve;
  const auto step = detail::uniform_step(curve.tau_ps);
  if (!step) throw ResolutionError("IRF convolution needs a uniform ascending grid");
  if (*step > irf.fwhm_ps / 10.0 * (1.0 + 1e-12)) {
    throw ResolutionError("grid spacing exceeds FWHM/10");
  }
  const double sigma = irf.sigma_ps();
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(5.0 * sigma / *step));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (std::ptrdiff_t j = -half; j <= half; ++j) {
    const double x = static_cast<double>(j) * *step;
    const double w = std::exp(-0.5 * x * x / (sigma * sigma));
    kernel[static_cast<std::size_t>(j + half)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  const auto n = static_cast<std::ptrdiff_t>(curve.values.size());
  G2Curve out = curve;
  out.sigma.clear();
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
      const std::ptrdiff_t idx = std::clamp<std::ptrdiff_t>(i - j, 0, n - 1);
      acc += kernel[static_cast<std::size_t>(j + half)] * curve.values[static_cast<std::size_t>(idx)];
    }
    out.values[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Symmetric uniform grid -half_width..+half_width (inclusive) with the given step.
inline std::vector<double> symmetric_grid(double half_width_ps, double step_ps) {
  if (!(step_ps > 0.0) || !(half_width_ps >= 0.0)) throw InvalidParameter("bad grid");
  const auto half = static_cast<long>(std::floor(half_width_ps / step_ps + 1e-9));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(2 * half + 1));
  for (long k = -half; k <= half; ++k) grid.push_back(static_cast<double>(k) * step_ps);
  return grid;
}

/// Uniform grid 0..end (inclusive).
inline std::vector<double> forward_grid(double end_ps, double step_ps) {
  if (!(step_ps > 0.0) || !(end_ps >= 0.0)) throw InvalidParameter("bad grid");
  const auto n = static_cast<long>(std::floor(end_ps / step_ps + 1e-9));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(n + 1));
  for (long k = 0; k <= n; ++k) grid.push_back(static_cast<double>(k) * step_ps);
  return grid;
}

}  // namespace twinphoton
