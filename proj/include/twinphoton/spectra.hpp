#pragma once

// Polarization-resolved X/XX quadruplet spectra: synthesis, constrained
// four-Lorentzian fits and fine-structure extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "twinphoton/error.hpp"
#include "twinphoton/numerics/least_squares.hpp"
#include "twinphoton/numerics/random.hpp"

namespace twinphoton {

enum class BindingSign { binding, antibinding };

inline double sign_of(BindingSign b) { return b == BindingSign::binding ? 1.0 : -1.0; }
inline std::string to_string(BindingSign b) { return b == BindingSign::binding ? "binding" : "antibinding"; }

inline BindingSign parse_binding_sign(const std::string& s) {
  if (s == "binding") return BindingSign::binding;
  if (s == "antibinding") return BindingSign::antibinding;
  throw InvalidParameter("unknown binding sign: " + s);
}

/// Line order used by per-component arrays.
enum Line { X_H = 0, XX_H = 1, X_V = 2, XX_V = 3 };

struct QuadrupletParams {
  double center_energy_ueV = 0.0;
  double delta_fss_ueV = 51.0;
  BindingSign binding_sign = BindingSign::binding;
  double linewidth_x_ueV = 40.0;
  double linewidth_xx_ueV = 35.0;
  /// I_X / I_XX, shared by both polarizations.
  double intensity_ratio_x_xx = 1.0;
  double principal_axis_deg = 0.0;
  /// Integrated intensity of the XX lines at full Malus weight.
  double intensity_xx = 1000.0;
  /// Offsets of the H lines from the center; nonzero breaks the degeneracy.
  double offset_x_h_ueV = 0.0;
  double offset_xx_h_ueV = 0.0;
  /// Per-line amplitude factors (X_H, XX_H, X_V, XX_V).
  std::array<double, 4> line_scale{1.0, 1.0, 1.0, 1.0};

  std::array<double, 4> energies() const {
    const double s = sign_of(binding_sign);
    const double xh = center_energy_ueV + offset_x_h_ueV, xxh = center_energy_ueV + offset_xx_h_ueV;
    return {xh, xxh, xh - s * delta_fss_ueV, xxh + s * delta_fss_ueV};
  }

  void validate() const {
    if (!(linewidth_x_ueV > 0.0) || !(linewidth_xx_ueV > 0.0)) throw InvalidParameter("linewidths must be positive");
    if (!(intensity_ratio_x_xx > 0.0)) throw InvalidParameter("intensity ratio must be positive");
    if (!(delta_fss_ueV >= 0.0)) throw InvalidParameter("fine-structure splitting must be >= 0");
    if (!(intensity_xx >= 0.0)) throw InvalidParameter("intensity must be >= 0");
    for (double v : line_scale) {
      if (!(v >= 0.0)) throw InvalidParameter("line scales must be >= 0");
    }
  }
};

/// Area-normalized Lorentzian with full width gamma.
inline double lorentzian(double e, double center, double gamma) {
  const double hw = 0.5 * gamma;
  return hw / std::numbers::pi / ((e - center) * (e - center) + hw * hw);
}

struct SpectralMap {
  std::vector<double> angles_deg;
  std::vector<double> energy_ueV;
  /// intensity[a][k] at angle a and energy k.
  std::vector<std::vector<double>> intensity;
};

struct SynthesisOptions {
  double noise_level = 0.0;
  /// Gaussian spectrometer response (FWHM, ueV); 0 disables it.
  double resolution_fwhm_ueV = 0.0;
};

/// Noiseless spectrum at polarizer angle theta.
inline std::vector<double> quadruplet_spectrum(const QuadrupletParams& p, double angle_deg,
                                               const std::vector<double>& energy_ueV) {
  const double th = (angle_deg - p.principal_axis_deg) * std::numbers::pi / 180.0;
  const double wh = std::cos(th) * std::cos(th), wv = std::sin(th) * std::sin(th);
  const auto e = p.energies();
  const double ix = p.intensity_xx * p.intensity_ratio_x_xx, ixx = p.intensity_xx;
  const std::array<double, 4> amp{wh * ix * p.line_scale[X_H], wh * ixx * p.line_scale[XX_H],
                                  wv * ix * p.line_scale[X_V], wv * ixx * p.line_scale[XX_V]};
  const std::array<double, 4> width{p.linewidth_x_ueV, p.linewidth_xx_ueV, p.linewidth_x_ueV, p.linewidth_xx_ueV};
  std::vector<double> out(energy_ueV.size(), 0.0);
  for (std::size_t k = 0; k < energy_ueV.size(); ++k) {
    for (int l = 0; l < 4; ++l) {
      if (amp[l] != 0.0) out[k] += amp[l] * lorentzian(energy_ueV[k], e[l], width[l]);
    }
  }
  return out;
}

namespace detail {

inline std::vector<double> gaussian_smooth(const std::vector<double>& y, double step, double fwhm) {
  const double sigma = fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const auto half = static_cast<long>(std::ceil(5.0 * sigma / step));
  std::vector<double> kernel;
  double sum = 0.0;
  for (long j = -half; j <= half; ++j) {
    const double x = static_cast<double>(j) * step;
    kernel.push_back(std::exp(-0.5 * x * x / (sigma * sigma)));
    sum += kernel.back();
  }
  const auto n = static_cast<long>(y.size());
  std::vector<double> out(y.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    for (long j = -half; j <= half; ++j) {
      const long k = std::clamp(i + j, 0L, n - 1);
      out[static_cast<std::size_t>(i)] += kernel[static_cast<std::size_t>(j + half)] / sum * y[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

inline double grid_step(const std::vector<double>& grid) {
  if (grid.size() < 2) throw InvalidParameter("energy grid needs at least two points");
  const double step = grid[1] - grid[0];
  for (std::size_t k = 2; k < grid.size(); ++k) {
    if (std::abs(grid[k] - grid[k - 1] - step) > 1e-9 * std::abs(step)) throw InvalidParameter("energy grid must be uniform");
  }
  if (!(step > 0.0)) throw InvalidParameter("energy grid must be increasing");
  return step;
}

}  // namespace detail

/// Spectra at each polarizer angle with additive Gaussian noise clamped at zero.
inline SpectralMap synthesize_map(const QuadrupletParams& params, const std::vector<double>& angles_deg,
                                  const std::vector<double>& energy_ueV, const SynthesisOptions& options,
                                  std::uint64_t seed) {
  params.validate();
  if (!(options.noise_level >= 0.0) || !(options.resolution_fwhm_ueV >= 0.0)) {
    throw InvalidParameter("noise and resolution must be >= 0");
  }
  const double step = detail::grid_step(energy_ueV);
  const auto e = params.energies();
  const double margin = 5.0 * std::max(params.linewidth_x_ueV, params.linewidth_xx_ueV);
  if (*std::min_element(e.begin(), e.end()) - margin < energy_ueV.front() ||
      *std::max_element(e.begin(), e.end()) + margin > energy_ueV.back()) {
    throw InvalidParameter("energy grid must span all lines plus five linewidths");
  }
  SpectralMap map;
  map.angles_deg = angles_deg;
  map.energy_ueV = energy_ueV;
  for (std::size_t a = 0; a < angles_deg.size(); ++a) {
    auto spectrum = quadruplet_spectrum(params, angles_deg[a], energy_ueV);
    if (options.resolution_fwhm_ueV > 0.0) spectrum = detail::gaussian_smooth(spectrum, step, options.resolution_fwhm_ueV);
    if (options.noise_level > 0.0) {
      RandomStream rng(seed, a);
      for (double& v : spectrum) v = std::max(0.0, v + options.noise_level * rng.normal());
    }
    map.intensity.push_back(std::move(spectrum));
  }
  return map;
}

// ---------------------------------------------------------------------------

struct QuadrupletFit {
  /// Fitted line energies (X_H, XX_H, X_V, XX_V).
  std::array<double, 4> energy_ueV{};
  std::array<double, 4> energy_sigma_ueV{};
  double delta_fss_ueV = 0.0;
  double delta_fss_sigma_ueV = 0.0;
  double linewidth_x_ueV = 0.0;
  double linewidth_xx_ueV = 0.0;
  double intensity_x_h = 0.0;
  double intensity_x_v = 0.0;
  double intensity_ratio_x_xx = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  /// Fraction of the fitted X intensity in the H lines.
  double h_fraction = 0.0;
  bool degenerate = false;
  std::string warning;
};

struct FitConstraints {
  BindingSign binding_sign = BindingSign::binding;
  /// Below this H (or V) intensity fraction the other group's positions are not reported as identified.
  double min_group_fraction = 0.1;
  /// Splittings below this are reported as unresolved; defaults to half the fitted linewidth.
  std::optional<double> min_resolved_splitting_ueV;
  /// Fits whose splitting standard error exceeds this fraction of the splitting are flagged.
  double max_relative_splitting_sigma = 0.2;
};

/// Starting point for fit_quadruplet: H and V line positions, splitting and widths.
struct QuadrupletGuess {
  double e_x_h = 0.0;
  double e_xx_h = 0.0;
  double delta_fss = 0.0;
  double linewidth_x = 0.0;
  double linewidth_xx = 0.0;
  double intensity_ratio = 1.0;
};

namespace detail {

// x = [E_XH, E_XXH, delta, gamma_X, gamma_XX, I_XH, I_XV, r]
inline std::vector<double> quadruplet_model(const Vector& x, double s, const std::vector<double>& grid) {
  std::vector<double> out(grid.size());
  const double ixx_h = x[5] / x[7], ixx_v = x[6] / x[7];
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double e = grid[k];
    out[k] = x[5] * lorentzian(e, x[0], x[3]) + ixx_h * lorentzian(e, x[1], x[4]) +
             x[6] * lorentzian(e, x[0] - s * x[2], x[3]) + ixx_v * lorentzian(e, x[1] + s * x[2], x[4]);
  }
  return out;
}

inline Matrix quadruplet_jacobian(const Vector& x, double s, const std::vector<double>& grid) {
  Matrix j(static_cast<Eigen::Index>(grid.size()), 8);
  const double r = x[7];
  const std::array<double, 4> centers{x[0], x[1], x[0] - s * x[2], x[1] + s * x[2]};
  const std::array<double, 4> widths{x[3], x[4], x[3], x[4]};
  const std::array<double, 4> amps{x[5], x[5] / r, x[6], x[6] / r};
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::array<double, 4> l{}, dc{}, dg{};
    for (int q = 0; q < 4; ++q) {
      const double u = grid[k] - centers[q], g = widths[q];
      const double d = u * u + 0.25 * g * g;
      l[q] = 0.5 * g / std::numbers::pi / d;
      dc[q] = g * u / std::numbers::pi / (d * d);
      dg[q] = (1.0 / d - 0.5 * g * g / (d * d)) / (2.0 * std::numbers::pi);
    }
    const auto row = static_cast<Eigen::Index>(k);
    j(row, 0) = amps[0] * dc[0] + amps[2] * dc[2];
    j(row, 1) = amps[1] * dc[1] + amps[3] * dc[3];
    j(row, 2) = -s * amps[2] * dc[2] + s * amps[3] * dc[3];
    j(row, 3) = amps[0] * dg[0] + amps[2] * dg[2];
    j(row, 4) = amps[1] * dg[1] + amps[3] * dg[3];
    j(row, 5) = l[0] + l[1] / r;
    j(row, 6) = l[2] + l[3] / r;
    j(row, 7) = -(amps[1] * l[1] + amps[3] * l[3]) / r;
  }
  return j;
}

struct Peak {
  double energy;
  double height;
};

// Local maxima of a lightly smoothed spectrum, highest first.
inline std::vector<Peak> find_peaks(const std::vector<double>& grid, const std::vector<double>& y, double smooth_fwhm) {
  const double step = grid_step(grid);
  const auto sm = smooth_fwhm > 0.0 ? gaussian_smooth(y, step, smooth_fwhm) : y;
  const double top = *std::max_element(sm.begin(), sm.end());
  std::vector<Peak> peaks;
  for (std::size_t k = 1; k + 1 < sm.size(); ++k) {
    if (sm[k] > sm[k - 1] && sm[k] >= sm[k + 1] && sm[k] > 0.05 * top) peaks.push_back({grid[k], sm[k]});
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.height != b.height ? a.height > b.height : a.energy < b.energy;
  });
  return peaks;
}

}  // namespace detail

/// Guess from an angle-summed spectrum, where H and V carry equal weight and
/// the quadruplet shows as a central H line between the two V lines.
inline QuadrupletGuess guess_from_sum(const std::vector<double>& grid, const std::vector<double>& summed,
                                      double linewidth_hint_ueV = 40.0) {
  const auto peaks = detail::find_peaks(grid, summed, 0.25 * linewidth_hint_ueV);
  if (peaks.empty()) throw InsufficientData("no peaks in spectrum");
  QuadrupletGuess g;
  g.linewidth_x = g.linewidth_xx = linewidth_hint_ueV;
  if (peaks.size() >= 3) {
    std::array<double, 3> e{peaks[0].energy, peaks[1].energy, peaks[2].energy};
    std::sort(e.begin(), e.end());
    g.e_x_h = g.e_xx_h = e[1];
    g.delta_fss = 0.5 * (e[2] - e[0]);
  } else {
    g.e_x_h = g.e_xx_h = peaks[0].energy;
    g.delta_fss = 0.5 * linewidth_hint_ueV;
  }
  return g;
}

/// Constrained four-Lorentzian fit: shared widths per species, one splitting
/// for X and XX, one X/XX intensity ratio for both polarizations.
inline QuadrupletFit fit_quadruplet(const std::vector<double>& grid, const std::vector<double>& spectrum,
                                    const QuadrupletGuess& guess, const FitConstraints& constraints = {},
                                    int max_iterations = 1000) {
  if (grid.size() != spectrum.size()) throw InvalidParameter("spectrum and grid sizes differ");
  const double step = detail::grid_step(grid);
  const double span = grid.back() - grid.front();
  const double s = sign_of(constraints.binding_sign);

  // Peak heights at the guessed H and V positions set the starting intensities.
  auto height_at = [&](double e) {
    const auto k = static_cast<std::size_t>(std::clamp((e - grid.front()) / step, 0.0, static_cast<double>(grid.size() - 1)));
    return std::max(spectrum[k], 0.0);
  };
  const double area = 0.5 * std::numbers::pi * guess.linewidth_x;
  const double r0 = guess.intensity_ratio;
  const double hv = 0.5 * (height_at(guess.e_x_h - s * guess.delta_fss) + height_at(guess.e_xx_h + s * guess.delta_fss));
  const double ih = height_at(guess.e_x_h) * area * r0 / (1.0 + r0);
  const double iv = hv * area;

  FitProblem problem;
  problem.initial = Vector(8);
  problem.initial << guess.e_x_h, guess.e_xx_h, guess.delta_fss, guess.linewidth_x, guess.linewidth_xx,
      std::max(ih, 1e-6), std::max(iv, 1e-6), r0;
  problem.lower = Vector(8);
  problem.upper = Vector(8);
  problem.lower << grid.front(), grid.front(), 0.0, 0.5 * step, 0.5 * step, 0.0, 0.0, 1e-3;
  problem.upper << grid.back(), grid.back(), span, span, span, 1e12, 1e12, 1e3;
  problem.max_iterations = max_iterations;
  problem.tolerance = 1e-11;
  problem.residual = [&](const Vector& x) {
    const auto m = detail::quadruplet_model(x, s, grid);
    Vector r(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t k = 0; k < grid.size(); ++k) r[static_cast<Eigen::Index>(k)] = m[k] - spectrum[k];
    return r;
  };
  problem.jacobian = [&](const Vector& x) { return detail::quadruplet_jacobian(x, s, grid); };
  const FitResult res = least_squares(problem);
  const Vector& x = res.params;

  QuadrupletFit f;
  f.energy_ueV = {x[0], x[1], x[0] - s * x[2], x[1] + s * x[2]};
  f.delta_fss_ueV = x[2];
  f.linewidth_x_ueV = x[3];
  f.linewidth_xx_ueV = x[4];
  f.intensity_x_h = x[5];
  f.intensity_x_v = x[6];
  f.intensity_ratio_x_xx = x[7];
  f.residual_norm = res.residual_norm;
  f.iterations = res.iterations;
  f.h_fraction = x[5] + x[6] > 0.0 ? x[5] / (x[5] + x[6]) : 0.0;

  const double dof = std::max<double>(1.0, static_cast<double>(grid.size()) - 8.0);
  const double var = res.residual_norm * res.residual_norm / dof;
  const Matrix cov = res.covariance * var;
  auto sd = [&](Eigen::Index i) { return std::sqrt(std::max(0.0, cov(i, i))); };
  const double sd_dd = sd(2);
  f.delta_fss_sigma_ueV = sd_dd;
  f.energy_sigma_ueV = {sd(0), sd(1), std::sqrt(std::max(0.0, cov(0, 0) + cov(2, 2) - 2.0 * s * cov(0, 2))),
                        std::sqrt(std::max(0.0, cov(1, 1) + cov(2, 2) + 2.0 * s * cov(1, 2)))};

  const double min_split =
      constraints.min_resolved_splitting_ueV.value_or(0.5 * std::min(f.linewidth_x_ueV, f.linewidth_xx_ueV));
  if (f.h_fraction < constraints.min_group_fraction) {
    f.degenerate = true;
    f.warning = "H lines too weak to locate";
  } else if (f.h_fraction > 1.0 - constraints.min_group_fraction) {
    f.degenerate = true;
    f.warning = "V lines too weak to locate";
  } else if (f.delta_fss_ueV < min_split) {
    f.degenerate = true;
    f.warning = "splitting below the resolvable limit";
  } else if (!std::isfinite(sd_dd) || sd_dd > constraints.max_relative_splitting_sigma * f.delta_fss_ueV) {
    f.degenerate = true;
    f.warning = "splitting not determined by the data";
  }
  return f;
}

// ---------------------------------------------------------------------------

struct FssExtraction {
  double delta_fss_mean = 0.0;
  double delta_fss_std = 0.0;
  /// Mean and std of each line's position relative to the map-level centroid of the quadruplet.
  std::array<double, 4> offset_mean{};
  std::array<double, 4> offset_std{};
  /// X_H and XX_H coincide within their standard deviations.
  bool h_degenerate = false;
  /// Polarizer angle of pure H, from a Malus-law fit to the fitted H fractions.
  double principal_axis_deg = 0.0;
  std::size_t spectra_used = 0;
  std::vector<QuadrupletFit> fits;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0};
}

}  // namespace detail

/// Fits every spectrum of the map, starting from the angle-summed spectrum's
/// peaks, and aggregates the non-degenerate fits.
inline FssExtraction extract_fss(const SpectralMap& map, const FitConstraints& constraints = {},
                                 double linewidth_hint_ueV = 40.0, std::size_t min_fits = 10) {
  if (map.intensity.size() != map.angles_deg.size()) throw InvalidParameter("map rows and angles differ");
  if (map.intensity.size() < min_fits) throw InsufficientData("too few spectra in the map");
  std::vector<double> summed(map.energy_ueV.size(), 0.0);
  for (const auto& row : map.intensity) {
    if (row.size() != summed.size()) throw InvalidParameter("map row length differs from the energy grid");
    for (std::size_t k = 0; k < row.size(); ++k) summed[k] += row[k];
  }
  const auto sum_guess = guess_from_sum(map.energy_ueV, summed, linewidth_hint_ueV);
  // Refine the shared guess on the summed spectrum itself.
  const auto sum_fit = fit_quadruplet(map.energy_ueV, summed, sum_guess, constraints);
  QuadrupletGuess guess{sum_fit.energy_ueV[X_H], sum_fit.energy_ueV[XX_H], sum_fit.delta_fss_ueV,
                        sum_fit.linewidth_x_ueV, sum_fit.linewidth_xx_ueV, sum_fit.intensity_ratio_x_xx};

  FitConstraints per_spectrum = constraints;
  if (!per_spectrum.min_resolved_splitting_ueV) {
    per_spectrum.min_resolved_splitting_ueV = 0.5 * std::min(guess.linewidth_x, guess.linewidth_xx);
  }

  FssExtraction out;
  std::vector<double> deltas;
  std::array<std::vector<double>, 4> rel;
  std::vector<double> centroids;
  for (const auto& row : map.intensity) {
    QuadrupletFit f;
    try {
      f = fit_quadruplet(map.energy_ueV, row, guess, per_spectrum);
    } catch (const FitFailure& e) {
      f.degenerate = true;
      f.warning = std::string("fit failed: ") + e.what();
    }
    out.fits.push_back(f);
  }
  // The fitted H fraction is unreliable where one group is nearly absent, so
  // group presence is judged from the Malus weight at the estimated axis.
  {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3600; ++k) {
      const double axis = 0.05 * k;
      double sse = 0.0;
      for (std::size_t a = 0; a < out.fits.size(); ++a) {
        if (out.fits[a].iterations == 0 && out.fits[a].residual_norm == 0.0) continue;
        const double c = std::cos((map.angles_deg[a] - axis) * std::numbers::pi / 180.0);
        sse += std::pow(out.fits[a].h_fraction - c * c, 2);
      }
      if (sse < best) {
        best = sse;
        out.principal_axis_deg = axis;
      }
    }
    for (std::size_t a = 0; a < out.fits.size(); ++a) {
      auto& f = out.fits[a];
      const double c = std::cos((map.angles_deg[a] - out.principal_axis_deg) * std::numbers::pi / 180.0);
      const double wh = c * c;
      if (wh < per_spectrum.min_group_fraction) {
        f.degenerate = true;
        f.warning = "H lines too weak to locate";
      } else if (wh > 1.0 - per_spectrum.min_group_fraction) {
        f.degenerate = true;
        f.warning = "V lines too weak to locate";
      }
    }
  }
  for (const auto& f : out.fits) {
    if (f.degenerate) continue;
    centroids.push_back(0.25 * (f.energy_ueV[0] + f.energy_ueV[1] + f.energy_ueV[2] + f.energy_ueV[3]));
  }
  if (centroids.size() < min_fits) throw InsufficientData("too few non-degenerate spectrum fits");
  const double reference = detail::mean_std(centroids).first;
  for (const auto& f : out.fits) {
    if (f.degenerate) continue;
    deltas.push_back(f.delta_fss_ueV);
    for (int l = 0; l < 4; ++l) rel[l].push_back(f.energy_ueV[l] - reference);
  }
  out.spectra_used = deltas.size();
  std::tie(out.delta_fss_mean, out.delta_fss_std) = detail::mean_std(deltas);
  for (int l = 0; l < 4; ++l) std::tie(out.offset_mean[l], out.offset_std[l]) = detail::mean_std(rel[l]);
  out.h_degenerate = std::abs(out.offset_mean[X_H] - out.offset_mean[XX_H]) <=
                     out.offset_std[X_H] + out.offset_std[XX_H] + 1e-6;
  return out;
}

/// Noise level at which the mean X_H / XX_H position scatter of extract_fss
/// reaches target_std_ueV on average over `maps` seeded maps, by secant steps on
/// the noise level.
inline double calibrate_noise_level(const QuadrupletParams& params, const std::vector<double>& angles_deg,
                                    const std::vector<double>& energy_ueV, double target_std_ueV, std::uint64_t seed,
                                    const FitConstraints& constraints = {}, int maps = 8, int iterations = 4) {
  if (!(target_std_ueV > 0.0)) throw InvalidParameter("target scatter must be positive");
  if (maps < 1 || iterations < 1) throw InvalidParameter("need at least one map and one iteration");
  auto scatter = [&](double noise) {
    double sum = 0.0;
    for (int m = 0; m < maps; ++m) {
      const auto map = synthesize_map(params, angles_deg, energy_ueV, {noise, 0.0}, seed + static_cast<std::uint64_t>(m));
      try {
        const auto r = extract_fss(map, constraints, params.linewidth_x_ueV);
        sum += 0.5 * (r.offset_std[X_H] + r.offset_std[XX_H]);
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    }
    return sum / maps;
  };
  const auto peak = quadruplet_spectrum(params, params.principal_axis_deg, energy_ueV);
  const double ceiling = 0.1 * *std::max_element(peak.begin(), peak.end());
  double noise = 0.01 * ceiling, prev_noise = 0.0, prev_s = 0.0;
  for (int i = 0; i < iterations; ++i) {
    const double s = scatter(noise);
    if (!std::isfinite(s)) {
      noise *= 0.5;
      prev_noise = 0.0;
      continue;
    }
    if (!(s > 0.0)) throw InvalidParameter("noise produces no position scatter");
    double next = noise * target_std_ueV / s;
    if (prev_noise > 0.0 && s != prev_s) {
      // Secant step: the scatter has a noise-independent floor.
      next = noise + (target_std_ueV - s) * (noise - prev_noise) / (s - prev_s);
    }
    prev_noise = noise;
    prev_s = s;
    noise = std::clamp(next, 0.25 * noise, std::min(ceiling, 4.0 * noise));
  }
  return noise;
}

inline std::vector<double> angle_grid(std::size_t count, double step_deg, double start_deg = 0.0) {
  std::vector<double> a(count);
  for (std::size_t k = 0; k < count; ++k) a[k] = start_deg + static_cast<double>(k) * step_deg;
  return a;
}

}  // namespace twinphoton
