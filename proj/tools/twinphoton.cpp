// twinphoton: command-line front end. Every stage reads and writes files, so
// pipelines are composed in the shell.

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twinphoton/correlator.hpp"
#include "twinphoton/hom.hpp"
#include "twinphoton/io.hpp"
#include "twinphoton/mc.hpp"
#include "twinphoton/model.hpp"
#include "twinphoton/pnr.hpp"
#include "twinphoton/run_config.hpp"
#include "twinphoton/spectra.hpp"
#include "twinphoton/svg.hpp"

#ifndef TWINPHOTON_VERSION
#define TWINPHOTON_VERSION "0.0.0"
#endif

namespace tp = twinphoton;
using tp::io::Json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitFit = 4;

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string config;
  std::string provenance;
};

void emit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
  } else {
    tp::io::write_text(path, text);
  }
}

std::string generator() { return std::string("twinphoton ") + TWINPHOTON_VERSION; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

// Effective option values of a subcommand, by long name.
std::map<std::string, std::string> effective_options(const CLI::App* sub) {
  std::map<std::string, std::string> out;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    out[name] = value;
  }
  return out;
}

void write_provenance(const CLI::App* sub, const Globals& g, const std::string& path) {
  const auto opts = effective_options(sub);
  std::string canon = sub->get_name() + "\n";
  for (const auto& [k, v] : opts) canon += k + "=" + v + "\n";
  Json j;
  j["command"] = sub->get_name();
  j["seed"] = g.seed;
  j["config_hash_fnv1a64"] = hex64(tp::fnv1a(canon));
  j["options"] = opts;
  j["versions"] = Json{{"twinphoton", TWINPHOTON_VERSION}, {"cli11", CLI11_VERSION},
                       {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  tp::io::write_text(path, tp::io::dump(j));
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (auto f : tp::io::split(s)) {
    try {
      out.push_back(tp::io::parse_number<double>(tp::detail::trim(f), 0));
    } catch (const tp::FormatError&) {
      throw tp::InvalidParameter("bad number list: " + s);
    }
  }
  return out;
}

std::vector<std::int64_t> tag_times(const std::vector<tp::TimeTag>& tags) { return tp::times_of(tags); }

// ---------------------------------------------------------------------------

struct Command {
  CLI::App* app = nullptr;
  std::function<void()> run;
  std::string* primary_output = nullptr;
};

struct RateOptions {
  double gamma_b = 1.0;
  double gamma_x = 1.0;
  double pump = 0.1;
  std::optional<double> pump_b;
  std::optional<double> pump_x;

  void add(CLI::App* a, double default_pump) {
    pump = default_pump;
    a->add_option("--gamma-b", gamma_b, "biexciton decay rate per channel (1/ns)")->capture_default_str();
    a->add_option("--gamma-x", gamma_x, "exciton decay rate (1/ns)")->capture_default_str();
    a->add_option("--pump", pump, "pump rate for both pump terms (1/ns)")->capture_default_str();
    a->add_option("--pump-b", pump_b, "exciton to biexciton pump rate (1/ns), overrides --pump");
    a->add_option("--pump-x", pump_x, "ground to exciton pump rate (1/ns), overrides --pump");
  }
  tp::RateSet rates() const { return tp::RateSet{gamma_b, gamma_x, pump_b.value_or(pump), pump_x.value_or(pump)}; }
};

// ---------------------------------------------------------------------------

struct Cli {
  CLI::App app{"Simulation and analysis of twin-photon emission from a quantum-dot cascade", "twinphoton"};
  Globals g;
  std::vector<Command> commands;

  // simulate-cw / simulate-pulsed
  RateOptions cw_rates, pulsed_rates;
  double cw_duration_ns = 1e6;
  int cw_shards = 1;
  std::string cw_out;
  double pl_rep = 80e6, pl_pb = 1.0, pl_ph = 0.0, pl_pv = 0.0;
  std::int64_t pl_pulses = 100000;
  std::string pl_out;

  // detect
  std::string det_in, det_out, det_filter = "none", det_species = "none", det_splitter = "none";
  double det_eff = 1.0, det_jitter = 0.0, det_dark = 0.0, det_dead = 0.0;
  std::optional<double> det_span;

  // correlate
  std::string cor_in, cor_out;
  std::int64_t cor_bin = 16, cor_window = 20000;
  std::optional<double> cor_duration;

  // fit-g2
  std::string fit_in, fit_out, fit_kind = "cross", fit_weighting = "flux", fit_curve_out;
  double fit_irf = 350.0;
  std::optional<double> fit_max_tau;
  int fit_max_iter = 200;
  RateOptions fit_init;

  // alpha
  std::optional<double> al_auto, al_cross;
  std::string al_auto_fit, al_cross_fit, al_out;

  // tpr-cw / tpr-pulsed
  double tc_n = 0.0, tc_eps = 0.0, tc_eta = 0.0, tc_alpha = 0.0;
  std::string tc_out;
  double tpp_rep = 80e6, tpp_p = 0.0, tpp_eta = 0.0;
  std::string tpp_out;

  // hom
  std::string hom_in, hom_out, hom_out_co, hom_out_cross;
  tp::HomConfig hom;
  std::optional<double> hom_window;

  // pnr-sim
  std::string ps_p = "0.86,0.0616,0.0784", ps_mode = "laser-sync", ps_out, ps_areas_out;
  std::string ps_sigma = "0.05,0.08,0.1,0.12", ps_thresholds;
  double ps_s = 5.04e-4, ps_unit = 1.0, ps_rep = 80e6;
  std::int64_t ps_triggers = 10000000;
  std::optional<double> ps_acq;

  // pnr-reconstruct
  std::optional<double> pr_r21, pr_r10;
  double pr_s = 5.04e-4;
  std::string pr_record, pr_vacuum, pr_out;
  tp::BootstrapOptions pr_boot;

  // spectra-sim / spectra-fit
  tp::QuadrupletParams sp;
  std::string sp_binding = "binding", sp_out;
  double sp_noise = 0.0, sp_resolution = 0.0, sp_angle_step = 5.0, sp_e_min = -400, sp_e_max = 400, sp_e_step = 2;
  std::size_t sp_angles = 36;
  std::string sf_in, sf_out, sf_binding = "binding";
  double sf_hint = 40.0, sf_group = 0.1;
  std::size_t sf_min_fits = 10;

  // report
  std::string rep_in, rep_out, rep_title, rep_column;

  Cli() {
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", generator());
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker thread cap; outputs do not depend on it")->capture_default_str();
    app.add_option("--config", g.config, "run configuration file (key = value lines, keys are long option names)");
    app.add_option("--provenance", g.provenance,
                   "provenance JSON path (default: <output>.provenance.json for commands with --out)");
    add_simulate();
    add_detect();
    add_correlate();
    add_fit();
    add_rates();
    add_hom();
    add_pnr();
    add_spectra();
    add_report();
  }

  CLI::App* sub(const char* name, const char* help) { return app.add_subcommand(name, help); }

  void add_simulate() {
    auto* a = sub("simulate-cw", "continuous-wave emission events");
    cw_rates.add(a, 0.1);
    a->add_option("--duration-ns", cw_duration_ns, "simulated time (ns)")->capture_default_str();
    a->add_option("--shards", cw_shards, "independent time segments (changes the random streams)")->capture_default_str();
    a->add_option("--out", cw_out, "events CSV")->required();
    commands.push_back({a, [this] {
                          tp::CwOptions o;
                          o.shards = cw_shards;
                          o.threads = g.threads;
                          const auto ev = tp::simulate_cw(cw_rates.rates(), cw_duration_ns * 1e3, g.seed, o);
                          emit(cw_out, tp::io::events_csv(ev));
                        },
                        &cw_out});

    auto* p = sub("simulate-pulsed", "pulsed emission events");
    pulsed_rates.gamma_b = 1.0 / 0.95;
    pulsed_rates.gamma_x = 1.0 / 1.77;
    pulsed_rates.add(p, 0.0);
    p->add_option("--rep-rate-hz", pl_rep, "laser repetition rate (Hz)")->capture_default_str();
    p->add_option("--prob-b", pl_pb, "probability a pulse prepares the biexciton")->capture_default_str();
    p->add_option("--prob-h", pl_ph, "probability a pulse prepares the H exciton")->capture_default_str();
    p->add_option("--prob-v", pl_pv, "probability a pulse prepares the V exciton")->capture_default_str();
    p->add_option("--pulses", pl_pulses, "number of pulses")->capture_default_str();
    p->add_option("--out", pl_out, "events CSV")->required();
    commands.push_back({p, [this] {
                          tp::PulsePrep prep{pl_rep, pl_pb, pl_ph, pl_pv};
                          auto r = pulsed_rates.rates();
                          r.pump_b = r.pump_x = 1.0;  // unused by the pulsed model
                          emit(pl_out, tp::io::events_csv(tp::simulate_pulsed(prep, r, pl_pulses, g.seed)));
                        },
                        &pl_out});
  }

  void add_detect() {
    auto* a = sub("detect", "filter, split and detect emission events as time tags");
    a->add_option("--in", det_in, "events CSV")->required();
    a->add_option("--out", det_out, "time-tag CSV")->required();
    a->add_option("--filter", det_filter, "polarization filter")
        ->check(CLI::IsMember({"none", "H", "V"}))
        ->capture_default_str();
    a->add_option("--species", det_species, "species filter")
        ->check(CLI::IsMember({"none", "X", "XX"}))
        ->capture_default_str();
    a->add_option("--splitter", det_splitter, "none, fifty-fifty (HBT) or species (XX to D0, X to D1)")
        ->check(CLI::IsMember({"none", "fifty-fifty", "species"}))
        ->capture_default_str();
    a->add_option("--efficiency", det_eff, "detection probability per photon")->capture_default_str();
    a->add_option("--jitter-fwhm-ps", det_jitter, "Gaussian jitter per detector (ps FWHM)")->capture_default_str();
    a->add_option("--dark-rate-hz", det_dark, "dark count rate per detector (Hz)")->capture_default_str();
    a->add_option("--dead-time-ps", det_dead, "detector dead time (ps)")->capture_default_str();
    a->add_option("--span-ps", det_span, "time span for dark counts (default: last event time)");
    commands.push_back({a, [this] {
                          tp::DetectionConfig c;
                          c.polarization_filter = det_filter == "H"   ? tp::PolarizationFilter::H
                                                  : det_filter == "V" ? tp::PolarizationFilter::V
                                                                      : tp::PolarizationFilter::none;
                          c.species_filter = det_species == "X"    ? tp::SpeciesFilter::X
                                             : det_species == "XX" ? tp::SpeciesFilter::XX
                                                                   : tp::SpeciesFilter::none;
                          c.splitter = det_splitter == "fifty-fifty" ? tp::Splitter::fifty_fifty
                                       : det_splitter == "species"   ? tp::Splitter::species
                                                                     : tp::Splitter::none;
                          c.efficiency = det_eff;
                          c.jitter_fwhm_ps = det_jitter;
                          c.dark_rate_hz = det_dark;
                          c.dead_time_ps = det_dead;
                          const auto ev = tp::io::parse_events(tp::io::read_text(det_in));
                          emit(det_out, tp::io::tags_csv(tp::detect(ev, c, g.seed, det_span)));
                        },
                        &det_out});
  }

  void add_correlate() {
    auto* a = sub("correlate", "start-stop histogram of detector 0 (start) against detector 1 (stop)");
    a->add_option("--in", cor_in, "time-tag CSV")->required();
    a->add_option("--out", cor_out, "histogram CSV")->required();
    a->add_option("--bin-ps", cor_bin, "bin width (ps)")->capture_default_str();
    a->add_option("--window-ps", cor_window, "largest |delay| (ps)")->capture_default_str();
    a->add_option("--duration-ps", cor_duration, "acquisition time (default: span of the tags)");
    commands.push_back({a, [this] {
                          const auto s = tp::io::parse_tags(tp::io::read_text(cor_in));
                          tp::CorrelateOptions o;
                          o.duration_ps = cor_duration;
                          o.threads = g.threads;
                          const auto h = tp::correlate(tag_times(s.d0), tag_times(s.d1), cor_bin, cor_window, o);
                          emit(cor_out, tp::io::histogram_csv(h));
                        },
                        &cor_out});
  }

  void add_fit() {
    auto* a = sub("fit-g2", "fit the cascade model to a normalized correlation");
    a->add_option("--in", fit_in, "histogram CSV (tau_ps,counts,g2) or curve CSV (tau_ps,g2)")->required();
    a->add_option("--out", fit_out, "fit report JSON")->required();
    a->add_option("--kind", fit_kind, "auto or cross")->check(CLI::IsMember({"auto", "cross"}))->capture_default_str();
    a->add_option("--weighting", fit_weighting, "flux or equal composite weights")
        ->check(CLI::IsMember({"flux", "equal"}))
        ->capture_default_str();
    a->add_option("--irf-fwhm-ps", fit_irf, "combined instrument response (ps FWHM)")->capture_default_str();
    a->add_option("--max-tau-ps", fit_max_tau, "fit only |tau| <= this");
    a->add_option("--curve-out", fit_curve_out, "fitted model curve CSV");
    a->add_option("--max-iterations", fit_max_iter, "optimizer iteration limit")->capture_default_str();
    fit_init.add(a, 1.0);
    commands.push_back({a, [this] { run_fit(); }, &fit_out});
  }

  void run_fit() {
    const auto text = tp::io::read_text(fit_in);
    const auto header = tp::io::csv_header(text);
    tp::G2Curve curve;
    if (header == std::vector<std::string>{"tau_ps", "g2"}) {
      curve = tp::io::parse_curve(text);
    } else {
      curve = tp::io::parse_histogram(text).curve;
      if (curve.values.empty()) throw tp::InsufficientData("histogram has no coincidences to fit");
    }
    if (fit_max_tau) {
      tp::G2Curve cut;
      for (std::size_t k = 0; k < curve.tau_ps.size(); ++k) {
        if (std::abs(curve.tau_ps[k]) > *fit_max_tau) continue;
        cut.tau_ps.push_back(curve.tau_ps[k]);
        cut.values.push_back(curve.values[k]);
        if (!curve.sigma.empty()) cut.sigma.push_back(curve.sigma[k]);
      }
      curve = std::move(cut);
    }
    const auto kind = fit_kind == "auto" ? tp::CorrelationKind::autocorr : tp::CorrelationKind::cross;
    tp::G2FitOptions o;
    o.weighting = fit_weighting == "equal" ? tp::CompositeWeighting::equal : tp::CompositeWeighting::flux;
    o.max_iterations = fit_max_iter;
    const tp::InstrumentResponse irf{fit_irf};
    const auto fit = tp::fit_g2(curve, kind, irf, fit_init.rates(), o);
    emit(fit_out, tp::io::dump(tp::io::to_json(fit, kind)));
    if (!fit_curve_out.empty()) {
      emit(fit_curve_out, tp::io::curve_csv(tp::measured_model(fit.rates, kind, curve.tau_ps, irf, o.weighting)));
    }
    std::cout << "g_fit(0) = " << tp::io::fmt(fit.g_fit_0) << " +- " << tp::io::fmt(fit.g_fit_0_sigma) << "\n";
  }

  void add_rates() {
    auto* a = sub("alpha", "twin-photon fraction alpha = g2_auto(0) / g2_cross(0)");
    a->add_option("--g-auto", al_auto, "deconvolved auto correlation at zero delay");
    a->add_option("--g-cross", al_cross, "deconvolved cross correlation at zero delay");
    a->add_option("--auto-fit", al_auto_fit, "fit report JSON of the auto correlation");
    a->add_option("--cross-fit", al_cross_fit, "fit report JSON of the cross correlation");
    a->add_option("--out", al_out, "result JSON");
    commands.push_back({a, [this] {
                          auto value = [](const std::optional<double>& v, const std::string& path, const char* what) {
                            if (v) return *v;
                            if (path.empty()) throw CLI::ValidationError(std::string("need --g-") + what + " or --" +
                                                                         what + "-fit");
                            return tp::io::json_get<double>(tp::io::parse_json(tp::io::read_text(path)), "g_fit_0");
                          };
                          const double ga = value(al_auto, al_auto_fit, "auto");
                          const double gc = value(al_cross, al_cross_fit, "cross");
                          const double alpha = tp::alpha_ratio(ga, gc);
                          std::cout << "alpha = " << tp::io::fmt(alpha) << "\n";
                          if (!al_out.empty()) {
                            emit(al_out, tp::io::dump(Json{{"g_auto_0", ga}, {"g_cross_0", gc}, {"alpha", alpha}}));
                          }
                        },
                        &al_out});

    auto* c = sub("tpr-cw", "twin-photon rate from CW count rates");
    c->add_option("--n-spcm", tc_n, "detected count rate (Hz)")->required();
    c->add_option("--eps", tc_eps, "setup efficiency after the first lens")->required();
    c->add_option("--eta", tc_eta, "first-lens collection efficiency")->required();
    c->add_option("--alpha", tc_alpha, "twin-photon fraction")->required();
    c->add_option("--out", tc_out, "result JSON");
    commands.push_back({c, [this] {
                          const auto b = tp::twin_rate_cw(tc_n, tc_eps, tc_eta, tc_alpha);
                          char line[128];
                          std::snprintf(line, sizeof line, "TPR = %.1f kHz (twin fraction of detections %.4f)\n",
                                        b.tpr_hz * 1e-3, b.twin_detect_fraction);
                          std::cout << line;
                          if (!tc_out.empty()) {
                            emit(tc_out, tp::io::dump(Json{{"alpha", b.alpha},
                                                           {"twin_detect_fraction", b.twin_detect_fraction},
                                                           {"tpr_hz", b.tpr_hz}}));
                          }
                        },
                        &tc_out});

    auto* p = sub("tpr-pulsed", "triggered twin-photon rate f * p_twin * eta^2");
    p->add_option("--rep-rate-hz", tpp_rep, "repetition rate (Hz)")->capture_default_str();
    p->add_option("--p-twin", tpp_p, "twin-photon probability per pulse")->required();
    p->add_option("--eta", tpp_eta, "first-lens collection efficiency")->required();
    p->add_option("--out", tpp_out, "result JSON");
    commands.push_back({p, [this] {
                          const double r = tp::twin_rate_pulsed(tpp_rep, tpp_p, tpp_eta);
                          char line[64];
                          std::snprintf(line, sizeof line, "TPR = %.1f kHz\n", r * 1e-3);
                          std::cout << line;
                          if (!tpp_out.empty()) emit(tpp_out, tp::io::dump(Json{{"tpr_hz", r}}));
                        },
                        &tpp_out});
  }

  void add_hom() {
    auto* a = sub("hom", "two-photon interference of pulsed pairs, co- and cross-polarized");
    a->add_option("--in", hom_in, "pulsed events CSV")->required();
    a->add_option("--out", hom_out, "visibility report JSON")->required();
    a->add_option("--out-co", hom_out_co, "co-polarized histogram CSV");
    a->add_option("--out-cross", hom_out_cross, "cross-polarized histogram CSV");
    a->add_option("--overlap", hom.mode_overlap, "mode overlap M")->capture_default_str();
    a->add_option("--rep-rate-hz", hom.rep_rate_hz, "repetition rate (Hz)")->capture_default_str();
    a->add_option("--pulses", hom.n_pulses, "pulse count (default: from the events)")->capture_default_str();
    a->add_option("--efficiency", hom.efficiency, "detection probability per photon")->capture_default_str();
    a->add_option("--jitter-fwhm-ps", hom.jitter_fwhm_ps, "jitter per detector (ps FWHM)")->capture_default_str();
    a->add_option("--bin-ps", hom.bin_width_ps, "histogram bin width (ps)")->capture_default_str();
    a->add_option("--k-range", hom.k_range, "side peaks on each side")->capture_default_str();
    a->add_option("--shards", hom.shards, "independent random streams")->capture_default_str();
    a->add_option("--window-ps", hom_window, "peak integration window (default: one period)");
    commands.push_back({a, [this] {
                          hom.threads = g.threads;
                          const auto ev = tp::io::parse_events(tp::io::read_text(hom_in));
                          const auto h = tp::simulate_hom(ev, hom, g.seed);
                          const auto r = tp::analyze_hom(h, hom.rep_rate_hz, hom.k_range, hom_window);
                          if (!hom_out_co.empty()) emit(hom_out_co, tp::io::histogram_csv(h.co.histogram));
                          if (!hom_out_cross.empty()) emit(hom_out_cross, tp::io::histogram_csv(h.cross.histogram));
                          emit(hom_out, tp::io::dump(tp::io::to_json(r)));
                          std::cout << "V = " << tp::io::fmt(r.visibility) << " +- " << tp::io::fmt(r.visibility_sigma)
                                    << (r.unphysical ? " (unphysical)" : "") << "\n";
                        },
                        &hom_out});
  }

  void add_pnr() {
    auto* a = sub("pnr-sim", "thin a source distribution and record TES pulse areas");
    a->add_option("--p", ps_p, "source distribution p0,p1,... (comma list)")->capture_default_str();
    a->add_option("--s", ps_s, "end-to-end detection probability")->capture_default_str();
    a->add_option("--triggers", ps_triggers, "trigger count")->capture_default_str();
    a->add_option("--mode", ps_mode, "laser-sync or photon-triggered")
        ->check(CLI::IsMember({"laser-sync", "photon-triggered"}))
        ->capture_default_str();
    a->add_option("--unit-area", ps_unit, "mean pulse area per photon (a.u.)")->capture_default_str();
    a->add_option("--sigma", ps_sigma, "pulse-area spread per photon number (comma list)")->capture_default_str();
    a->add_option("--thresholds", ps_thresholds, "classification thresholds (default: midpoints)");
    a->add_option("--rep-rate-hz", ps_rep, "trigger rate for laser-sync acquisition time (Hz)")->capture_default_str();
    a->add_option("--acquisition-s", ps_acq, "acquisition time (default: triggers / rate in laser-sync mode)");
    a->add_option("--out", ps_out, "count record JSON")->required();
    a->add_option("--areas-out", ps_areas_out, "pulse areas CSV");
    commands.push_back({a, [this] {
                          tp::PhotonNumberDist src;
                          src.p = parse_list(ps_p);
                          auto m = tp::TesModel::with_midpoint_thresholds(ps_unit, parse_list(ps_sigma));
                          if (!ps_thresholds.empty()) m.thresholds = parse_list(ps_thresholds);
                          const auto mode = tp::parse_trigger_mode(ps_mode);
                          const auto q = tp::thin_binomial(src, ps_s);
                          const auto areas = tp::simulate_tes(q, m, ps_triggers, g.seed, mode);
                          const double t = ps_acq.value_or(
                              mode == tp::TriggerMode::laser_sync ? static_cast<double>(ps_triggers) / ps_rep : 0.0);
                          const auto rec = tp::classify(areas, m, mode, t);
                          emit(ps_out, tp::io::dump(tp::io::to_json(rec)));
                          if (!ps_areas_out.empty()) emit(ps_areas_out, tp::io::areas_csv(areas));
                        },
                        &ps_out});

    auto* r = sub("pnr-reconstruct", "invert binomial loss to the source photon-number distribution");
    r->add_option("--r21", pr_r21, "ratio q2/q1 of detected events");
    r->add_option("--r10", pr_r10, "ratio q1/q0 of detected events");
    r->add_option("--s", pr_s, "end-to-end detection probability")->capture_default_str();
    r->add_option("--record", pr_record, "count record JSON (2/1 ratio, and 1/0 without --vacuum)");
    r->add_option("--vacuum", pr_vacuum, "laser-sync count record JSON for the 1/0 ratio");
    r->add_option("--resamples", pr_boot.resamples, "bootstrap resamples")->capture_default_str();
    r->add_option("--lower-quantile", pr_boot.lower_quantile, "interval lower quantile")->capture_default_str();
    r->add_option("--upper-quantile", pr_boot.upper_quantile, "interval upper quantile")->capture_default_str();
    r->add_option("--out", pr_out, "distribution JSON");
    commands.push_back({r, [this] { run_reconstruct(); }, &pr_out});
  }

  void run_reconstruct() {
    tp::PhotonNumberDist d;
    Json extra;
    if (pr_r21 || pr_r10) {
      if (!pr_r21 || !pr_r10) throw CLI::ValidationError("--r21 and --r10 go together");
      if (!pr_record.empty()) throw CLI::ValidationError("give either ratios or a record");
      d = tp::reconstruct(tp::Ratios{*pr_r21, *pr_r10}, pr_s);
    } else {
      if (pr_record.empty()) throw CLI::ValidationError("need --r21/--r10 or --record");
      pr_boot.seed = g.seed;
      auto load = [](const std::string& p) {
        return tp::io::count_record_from_json(tp::io::parse_json(tp::io::read_text(p)));
      };
      const auto rec = load(pr_record);
      const auto res = pr_vacuum.empty() ? tp::reconstruct(rec, pr_s, pr_boot)
                                         : tp::reconstruct(rec, load(pr_vacuum), pr_s, pr_boot);
      d = res.source;
      extra = Json{{"r21", res.ratios.r21}, {"r10", res.ratios.r10},
                   {"infeasible_resamples", res.infeasible_resamples}};
    }
    char line[128];
    std::snprintf(line, sizeof line, "p0 = %.4f  p1 = %.4f  p2 = %.4f\n", d.at(0), d.at(1), d.at(2));
    std::cout << line;
    if (!pr_out.empty()) {
      Json j = tp::io::to_json(d);
      if (!extra.is_null()) j["ratios"] = extra;
      emit(pr_out, tp::io::dump(j));
    }
  }

  void add_spectra() {
    auto* a = sub("spectra-sim", "polarization-resolved spectral map of the X/XX quadruplet");
    a->add_option("--center-ueV", sp.center_energy_ueV, "degenerate H line energy")->capture_default_str();
    a->add_option("--fss-ueV", sp.delta_fss_ueV, "fine-structure splitting")->capture_default_str();
    a->add_option("--binding", sp_binding, "binding or antibinding")
        ->check(CLI::IsMember({"binding", "antibinding"}))
        ->capture_default_str();
    a->add_option("--linewidth-x-ueV", sp.linewidth_x_ueV, "X linewidth (FWHM)")->capture_default_str();
    a->add_option("--linewidth-xx-ueV", sp.linewidth_xx_ueV, "XX linewidth (FWHM)")->capture_default_str();
    a->add_option("--ratio", sp.intensity_ratio_x_xx, "X/XX intensity ratio")->capture_default_str();
    a->add_option("--axis-deg", sp.principal_axis_deg, "principal polarization axis")->capture_default_str();
    a->add_option("--intensity", sp.intensity_xx, "integrated XX intensity")->capture_default_str();
    a->add_option("--offset-x-h-ueV", sp.offset_x_h_ueV, "X doublet offset from the center")->capture_default_str();
    a->add_option("--offset-xx-h-ueV", sp.offset_xx_h_ueV, "XX doublet offset from the center")->capture_default_str();
    a->add_option("--noise", sp_noise, "Gaussian noise standard deviation")->capture_default_str();
    a->add_option("--resolution-fwhm-ueV", sp_resolution, "spectrometer response (0: off)")->capture_default_str();
    a->add_option("--angles", sp_angles, "number of polarizer angles")->capture_default_str();
    a->add_option("--angle-step-deg", sp_angle_step, "angle step")->capture_default_str();
    a->add_option("--e-min-ueV", sp_e_min, "energy grid start")->capture_default_str();
    a->add_option("--e-max-ueV", sp_e_max, "energy grid end")->capture_default_str();
    a->add_option("--e-step-ueV", sp_e_step, "energy grid step")->capture_default_str();
    a->add_option("--out", sp_out, "spectral map CSV")->required();
    commands.push_back({a, [this] {
                          sp.binding_sign = tp::parse_binding_sign(sp_binding);
                          if (!(sp_e_step > 0.0) || !(sp_e_max > sp_e_min)) throw tp::InvalidParameter("bad energy grid");
                          std::vector<double> grid;
                          const auto n = static_cast<std::size_t>(std::floor((sp_e_max - sp_e_min) / sp_e_step + 1e-9));
                          for (std::size_t k = 0; k <= n; ++k) grid.push_back(sp_e_min + static_cast<double>(k) * sp_e_step);
                          const auto map = tp::synthesize_map(sp, tp::angle_grid(sp_angles, sp_angle_step), grid,
                                                              {sp_noise, sp_resolution}, g.seed);
                          emit(sp_out, tp::io::map_csv(map));
                        },
                        &sp_out});

    auto* f = sub("spectra-fit", "constrained four-line fits and fine-structure extraction");
    f->add_option("--in", sf_in, "spectral map CSV")->required();
    f->add_option("--out", sf_out, "fit results JSON")->required();
    f->add_option("--binding", sf_binding, "binding or antibinding")
        ->check(CLI::IsMember({"binding", "antibinding"}))
        ->capture_default_str();
    f->add_option("--linewidth-hint-ueV", sf_hint, "linewidth for peak finding")->capture_default_str();
    f->add_option("--min-group-fraction", sf_group, "minimum H or V Malus weight per used spectrum")
        ->capture_default_str();
    f->add_option("--min-fits", sf_min_fits, "minimum usable spectra")->capture_default_str();
    commands.push_back({f, [this] {
                          const auto map = tp::io::parse_map(tp::io::read_text(sf_in));
                          tp::FitConstraints c;
                          c.binding_sign = tp::parse_binding_sign(sf_binding);
                          c.min_group_fraction = sf_group;
                          const auto r = tp::extract_fss(map, c, sf_hint, sf_min_fits);
                          emit(sf_out, tp::io::dump(tp::io::to_json(r, map)));
                          char line[160];
                          std::snprintf(line, sizeof line,
                                        "FSS = %.2f +- %.2f ueV from %zu spectra; H lines %s\n", r.delta_fss_mean,
                                        r.delta_fss_std, r.spectra_used,
                                        r.h_degenerate ? "coincide" : "do not coincide");
                          std::cout << line;
                        },
                        &sf_out});
  }

  void add_report() {
    auto* a = sub("report", "render a curve, histogram, spectral map or pulse-area CSV as SVG");
    a->add_option("--in", rep_in, "input CSV")->required();
    a->add_option("--out", rep_out, "SVG output")->required();
    a->add_option("--title", rep_title, "plot title");
    a->add_option("--column", rep_column, "histogram column to plot: g2 or counts (default: g2 when normalized)");
    commands.push_back({a, [this] { run_report(); }, &rep_out});
  }

  void run_report() {
    const auto text = tp::io::read_text(rep_in);
    const auto header = tp::io::csv_header(text);
    tp::svg::Plot p;
    p.title = rep_title.empty() ? rep_in : rep_title;
    using H = std::vector<std::string>;
    if (header == H{"tau_ps", "g2"}) {
      const auto c = tp::io::parse_curve(text);
      tp::svg::Series s;
      for (std::size_t k = 0; k < c.tau_ps.size(); ++k) s.x.push_back(c.tau_ps[k] * 1e-3);
      s.y = c.values;
      p.series.push_back(std::move(s));
      p.x_label = "delay (ns)";
      p.y_label = "g2";
    } else if (header == H{"tau_ps", "counts", "g2"}) {
      const auto f = tp::io::parse_histogram(text);
      const bool use_g2 = rep_column.empty() ? !f.curve.values.empty() : rep_column == "g2";
      if (rep_column != "" && rep_column != "g2" && rep_column != "counts") {
        throw CLI::ValidationError("--column must be g2 or counts");
      }
      if (use_g2 && f.curve.values.empty()) throw tp::InsufficientData("histogram is not normalized");
      tp::svg::Series s;
      for (std::size_t k = 0; k < f.histogram.counts.size(); ++k) {
        s.x.push_back(f.histogram.tau_ps(k) * 1e-3);
        s.y.push_back(use_g2 ? f.curve.values[k] : static_cast<double>(f.histogram.counts[k]));
      }
      p.series.push_back(std::move(s));
      p.x_label = "delay (ns)";
      p.y_label = use_g2 ? "g2" : "coincidences";
    } else if (header == H{"angle_deg", "energy_ueV", "intensity"}) {
      const auto m = tp::io::parse_map(text);
      for (std::size_t a = 0; a < m.angles_deg.size(); ++a) {
        p.series.push_back({m.energy_ueV, m.intensity[a], tp::svg::num(m.angles_deg[a]) + " deg"});
      }
      p.x_label = "energy (ueV)";
      p.y_label = "intensity";
    } else if (header == H{"area_au"}) {
      const auto areas = tp::io::parse_areas(text);
      if (areas.empty()) throw tp::InsufficientData("no pulse areas");
      const auto [lo, hi] = std::minmax_element(areas.begin(), areas.end());
      const int bins = 200;
      const double w = std::max(*hi - *lo, 1e-12) / bins;
      tp::svg::Series s;
      std::vector<double> counts(bins, 0.0);
      for (double v : areas) counts[std::min(bins - 1, static_cast<int>((v - *lo) / w))] += 1.0;
      for (int b = 0; b < bins; ++b) {
        s.x.push_back(*lo + (b + 0.5) * w);
        s.y.push_back(counts[static_cast<std::size_t>(b)]);
      }
      p.series.push_back(std::move(s));
      p.x_label = "pulse area (a.u.)";
      p.y_label = "events";
    } else {
      throw tp::FormatError("unrecognized CSV header");
    }
    emit(rep_out, tp::svg::render(p, generator()));
  }
};

// Splices `key = value` entries from --config in right after the subcommand
// name, so explicit command-line options (parsed later) take precedence.
std::vector<std::string> with_config(const std::vector<std::string>& args, const Cli& cli) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const auto cfg = tp::parse_run_config(tp::io::read_text(path));
  std::vector<std::string> out;
  bool spliced = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    out.push_back(args[i]);
    if (spliced) continue;
    for (const auto& c : cli.commands) {
      if (args[i] == c.app->get_name()) {
        for (auto& a : cfg.as_arguments()) out.push_back(a);
        spliced = true;
        break;
      }
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = with_config(args, cli);
  } catch (const tp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.app.exit(e);
    return kExitUsage;
  }
  for (auto& c : cli.commands) {
    if (!c.app->parsed()) continue;
    try {
      c.run();
      std::string prov = cli.g.provenance;
      if (prov.empty() && c.primary_output && !c.primary_output->empty() && *c.primary_output != "-") {
        prov = *c.primary_output + ".provenance.json";
      }
      if (!prov.empty()) write_provenance(c.app, cli.g, prov);
      return 0;
    } catch (const CLI::ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const tp::FitFailure& e) {
      std::cerr << "fit failed: " << e.what() << "\n";
      return kExitFit;
    } catch (const tp::InvalidParameter& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitData;
    }
  }
  return kExitUsage;
}
