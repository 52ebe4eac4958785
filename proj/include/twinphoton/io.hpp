#pragma once

// File formats. Numbers are written with std::to_chars (shortest round-trip
// form), so output is byte-identical for identical inputs on any platform.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "twinphoton/correlator.hpp"
#include "twinphoton/error.hpp"
#include "twinphoton/hom.hpp"
#include "twinphoton/mc.hpp"
#include "twinphoton/pnr.hpp"
#include "twinphoton/spectra.hpp"

namespace twinphoton::io {

using Json = nlohmann::ordered_json;

inline std::string fmt(double v) {
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

inline std::string fmt(std::int64_t v) { return std::to_string(v); }

// ---------------------------------------------------------------------------
// Plain text helpers

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
  if (!out) throw FormatError("write failed for " + path);
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string_view>> rows;
  std::string storage;
  std::vector<std::size_t> line_numbers;
};

/// Parses CSV text with one header row. Blank lines are skipped; every row must
/// have as many fields as the header.
inline CsvTable parse_csv(std::string text, const std::vector<std::string>& expected_header) {
  CsvTable t;
  t.storage = std::move(text);
  std::string_view all = t.storage;
  std::size_t pos = 0, line_no = 0;
  bool have_header = false;
  while (pos < all.size()) {
    auto end = all.find('\n', pos);
    if (end == std::string_view::npos) end = all.size();
    auto line = all.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      for (auto f : fields) t.header.emplace_back(f);
      if (t.header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw FormatError("unexpected CSV header, want " + want);
      }
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                        " fields");
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw FormatError("missing CSV header");
  return t;
}

/// Header of a CSV text (first non-empty line), for format detection.
inline std::vector<std::string> csv_header(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> out;
    for (auto f : split(line)) out.emplace_back(f);
    return out;
  }
  throw FormatError("empty CSV file");
}

template <class T>
T parse_number(std::string_view s, std::size_t line_no) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Emission events: time_ps,species,polarization,pulse_index

inline std::string events_csv(std::span<const EmissionEvent> events) {
  std::string out = "time_ps,species,polarization,pulse_index\n";
  for (const auto& e : events) {
    out += fmt(static_cast<std::int64_t>(std::llround(e.time_ps)));
    out += ',';
    out += to_string(e.species);
    out += ',';
    out += to_string(e.polarization);
    out += ',';
    if (e.pulse_index) out += fmt(*e.pulse_index);
    out += '\n';
  }
  return out;
}

inline std::vector<EmissionEvent> parse_events(std::string text) {
  const auto t = parse_csv(std::move(text), {"time_ps", "species", "polarization", "pulse_index"});
  std::vector<EmissionEvent> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const auto ln = t.line_numbers[i];
    EmissionEvent e;
    e.time_ps = static_cast<double>(parse_number<std::int64_t>(r[0], ln));
    if (r[1] == "X") e.species = Species::X;
    else if (r[1] == "XX") e.species = Species::XX;
    else throw FormatError("line " + std::to_string(ln) + ": species must be X or XX");
    if (r[2] == "H") e.polarization = Polarization::H;
    else if (r[2] == "V") e.polarization = Polarization::V;
    else throw FormatError("line " + std::to_string(ln) + ": polarization must be H or V");
    if (!r[3].empty()) e.pulse_index = parse_number<std::int64_t>(r[3], ln);
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time tags: time_ps,detector

inline std::string tags_csv(const TagStreams& s) {
  std::vector<TimeTag> all;
  all.reserve(s.d0.size() + s.d1.size());
  all.insert(all.end(), s.d0.begin(), s.d0.end());
  all.insert(all.end(), s.d1.begin(), s.d1.end());
  std::stable_sort(all.begin(), all.end(), [](const TimeTag& a, const TimeTag& b) {
    return a.time_ps != b.time_ps ? a.time_ps < b.time_ps : a.detector < b.detector;
  });
  std::string out = "time_ps,detector\n";
  for (const auto& t : all) {
    out += fmt(t.time_ps);
    out += t.detector == Detector::D0 ? ",0\n" : ",1\n";
  }
  return out;
}

inline TagStreams parse_tags(std::string text) {
  const auto t = parse_csv(std::move(text), {"time_ps", "detector"});
  TagStreams s;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ln = t.line_numbers[i];
    TimeTag tag;
    tag.time_ps = parse_number<std::int64_t>(t.rows[i][0], ln);
    const auto d = parse_number<int>(t.rows[i][1], ln);
    if (d != 0 && d != 1) throw FormatError("line " + std::to_string(ln) + ": detector must be 0 or 1");
    tag.detector = d == 0 ? Detector::D0 : Detector::D1;
    (d == 0 ? s.d0 : s.d1).push_back(tag);
  }
  auto by_time = [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; };
  std::stable_sort(s.d0.begin(), s.d0.end(), by_time);
  std::stable_sort(s.d1.begin(), s.d1.end(), by_time);
  return s;
}

// ---------------------------------------------------------------------------
// g2 curves: tau_ps,g2

inline std::string curve_csv(const G2Curve& c) {
  std::string out = "tau_ps,g2\n";
  for (std::size_t k = 0; k < c.tau_ps.size(); ++k) out += fmt(c.tau_ps[k]) + ',' + fmt(c.values[k]) + '\n';
  return out;
}

inline G2Curve parse_curve(std::string text) {
  const auto t = parse_csv(std::move(text), {"tau_ps", "g2"});
  G2Curve c;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    c.tau_ps.push_back(parse_number<double>(t.rows[i][0], t.line_numbers[i]));
    c.values.push_back(parse_number<double>(t.rows[i][1], t.line_numbers[i]));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Histograms: tau_ps,counts,g2. The g2 column is 0 when the histogram cannot
// be normalized (no counts in one of the streams).

inline std::string histogram_csv(const CoincidenceHistogram& h) {
  std::vector<double> g(h.counts.size(), 0.0);
  if (h.rate_a_hz > 0.0 && h.rate_b_hz > 0.0 && h.duration_s > 0.0) g = normalize_cw(h).values;
  std::string out = "tau_ps,counts,g2\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out += fmt(static_cast<std::int64_t>(h.tau_ps(k))) + ',' + std::to_string(h.counts[k]) + ',' + fmt(g[k]) + '\n';
  }
  return out;
}

struct HistogramFile {
  CoincidenceHistogram histogram;
  /// The g2 column with Poisson sigmas; empty values when unnormalized.
  G2Curve curve;
};

inline HistogramFile parse_histogram(std::string text) {
  const auto t = parse_csv(std::move(text), {"tau_ps", "counts", "g2"});
  HistogramFile f;
  auto& h = f.histogram;
  std::vector<std::int64_t> tau;
  double norm = 0.0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ln = t.line_numbers[i];
    tau.push_back(parse_number<std::int64_t>(t.rows[i][0], ln));
    const auto n = parse_number<std::uint64_t>(t.rows[i][1], ln);
    const auto g = parse_number<double>(t.rows[i][2], ln);
    h.counts.push_back(n);
    f.curve.tau_ps.push_back(static_cast<double>(tau.back()));
    f.curve.values.push_back(g);
    if (n > 0 && g > 0.0 && norm == 0.0) norm = static_cast<double>(n) / g;
  }
  if (tau.size() < 2 || tau.size() % 2 == 0) throw FormatError("histogram needs an odd number (>= 3) of bins");
  h.bin_width_ps = tau[1] - tau[0];
  if (h.bin_width_ps <= 0) throw FormatError("histogram delays must increase");
  for (std::size_t k = 1; k < tau.size(); ++k) {
    if (tau[k] - tau[k - 1] != h.bin_width_ps) throw FormatError("histogram delays must be evenly spaced");
  }
  if (tau[tau.size() / 2] != 0) throw FormatError("histogram must be centred on zero delay");
  h.window_ps = tau.back();
  if (norm > 0.0) {
    for (auto n : h.counts) f.curve.sigma.push_back(std::sqrt(std::max(static_cast<double>(n), 1.0)) / norm);
  } else {
    f.curve.values.clear();
    f.curve.tau_ps.clear();
  }
  return f;
}

// ---------------------------------------------------------------------------
// JSON reports

inline std::string dump(const Json& j) { return j.dump(2) + '\n'; }

inline Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad JSON: ") + e.what());
  }
}

template <class T>
T json_get(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("missing JSON key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("JSON key '") + key + "' has the wrong type");
  }
}

inline Json to_json(const RateSet& r) {
  return Json{{"gamma_b_per_ns", r.gamma_b}, {"gamma_x_per_ns", r.gamma_x}, {"pump_b_per_ns", r.pump_b},
              {"pump_x_per_ns", r.pump_x}};
}

inline Json to_json(const G2Fit& f, CorrelationKind kind) {
  Json j;
  j["kind"] = kind == CorrelationKind::autocorr ? "auto" : "cross";
  j["rates"] = to_json(f.rates);
  j["confidence_1sigma"] = Json{{"pump_per_ns", f.rate_sigma[0]},
                                {"gamma_b_per_ns", f.rate_sigma[1]},
                                {"gamma_x_per_ns", f.rate_sigma[2]}};
  j["g_fit_0"] = f.g_fit_0;
  j["g_fit_0_sigma"] = f.g_fit_0_sigma;
  j["residual_norm"] = f.residual_norm;
  j["reduced_chi2"] = f.reduced_chi2;
  j["iterations"] = f.iterations;
  j["points"] = f.points;
  return j;
}

inline Json to_json(const VisibilityReport& r) {
  return Json{{"g_par_0", r.g_par_0},   {"g_par_0_sigma", r.g_par_0_sigma},       {"g_perp_0", r.g_perp_0},
              {"g_perp_0_sigma", r.g_perp_0_sigma}, {"visibility", r.visibility}, {"visibility_sigma", r.visibility_sigma},
              {"unphysical", r.unphysical}};
}

inline Json to_json(const CountRecord& c) {
  Json j;
  j["counts"] = c.counts;
  j["acquisition_time_s"] = c.acquisition_time_s;
  std::vector<double> rates;
  for (double n : c.counts) rates.push_back(c.acquisition_time_s > 0.0 ? n / c.acquisition_time_s : 0.0);
  j["rates_hz"] = rates;
  j["trigger_mode"] = to_string(c.trigger_mode);
  j["background_per_hour"] = c.background_per_hour;
  return j;
}

inline CountRecord count_record_from_json(const Json& j) {
  CountRecord c;
  c.counts = json_get<std::vector<double>>(j, "counts");
  c.acquisition_time_s = json_get<double>(j, "acquisition_time_s");
  c.trigger_mode = parse_trigger_mode(json_get<std::string>(j, "trigger_mode"));
  if (j.contains("background_per_hour")) c.background_per_hour = json_get<std::vector<double>>(j, "background_per_hour");
  return c;
}

inline Json to_json(const PhotonNumberDist& d) {
  Json j;
  j["plane"] = to_string(d.plane);
  j["p"] = d.p;
  Json iv = Json::array();
  for (const auto& i : d.intervals) iv.push_back(Json{i.lower, i.upper});
  j["intervals"] = iv;
  return j;
}

inline Json to_json(const QuadrupletFit& f) {
  Json j;
  j["energy_ueV"] = Json{{"X_H", f.energy_ueV[X_H]}, {"XX_H", f.energy_ueV[XX_H]}, {"X_V", f.energy_ueV[X_V]},
                         {"XX_V", f.energy_ueV[XX_V]}};
  j["energy_sigma_ueV"] = Json{{"X_H", f.energy_sigma_ueV[X_H]},
                               {"XX_H", f.energy_sigma_ueV[XX_H]},
                               {"X_V", f.energy_sigma_ueV[X_V]},
                               {"XX_V", f.energy_sigma_ueV[XX_V]}};
  j["delta_fss_ueV"] = f.delta_fss_ueV;
  j["delta_fss_sigma_ueV"] = f.delta_fss_sigma_ueV;
  j["linewidth_x_ueV"] = f.linewidth_x_ueV;
  j["linewidth_xx_ueV"] = f.linewidth_xx_ueV;
  j["intensity_ratio_x_xx"] = f.intensity_ratio_x_xx;
  j["h_fraction"] = f.h_fraction;
  j["residual_norm"] = f.residual_norm;
  j["iterations"] = f.iterations;
  j["degenerate"] = f.degenerate;
  if (!f.warning.empty()) j["warning"] = f.warning;
  return j;
}

inline Json to_json(const FssExtraction& r, const SpectralMap& map) {
  Json j;
  j["delta_fss_mean_ueV"] = r.delta_fss_mean;
  j["delta_fss_std_ueV"] = r.delta_fss_std;
  const char* names[4] = {"X_H", "XX_H", "X_V", "XX_V"};
  Json offsets;
  for (int l = 0; l < 4; ++l) offsets[names[l]] = Json{{"mean", r.offset_mean[l]}, {"std", r.offset_std[l]}};
  j["degeneracy_offsets_ueV"] = offsets;
  j["h_degenerate"] = r.h_degenerate;
  j["principal_axis_deg"] = r.principal_axis_deg;
  j["spectra_used"] = r.spectra_used;
  Json fits = Json::array();
  for (std::size_t a = 0; a < r.fits.size(); ++a) {
    Json f = to_json(r.fits[a]);
    f["angle_deg"] = map.angles_deg[a];
    fits.push_back(std::move(f));
  }
  j["fits"] = fits;
  return j;
}

// ---------------------------------------------------------------------------
// Pulse areas: area_au

inline std::string areas_csv(std::span<const double> areas) {
  std::string out = "area_au\n";
  for (double a : areas) out += fmt(a) + '\n';
  return out;
}

inline std::vector<double> parse_areas(std::string text) {
  const auto t = parse_csv(std::move(text), {"area_au"});
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) out.push_back(parse_number<double>(t.rows[i][0], t.line_numbers[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Spectral maps: angle_deg,energy_ueV,intensity, rows grouped by angle

inline std::string map_csv(const SpectralMap& m) {
  std::string out = "angle_deg,energy_ueV,intensity\n";
  for (std::size_t a = 0; a < m.angles_deg.size(); ++a) {
    const auto angle = fmt(m.angles_deg[a]) + ',';
    for (std::size_t k = 0; k < m.energy_ueV.size(); ++k) {
      out += angle + fmt(m.energy_ueV[k]) + ',' + fmt(m.intensity[a][k]) + '\n';
    }
  }
  return out;
}

inline SpectralMap parse_map(std::string text) {
  const auto t = parse_csv(std::move(text), {"angle_deg", "energy_ueV", "intensity"});
  SpectralMap m;
  std::vector<double> energies;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ln = t.line_numbers[i];
    const double angle = parse_number<double>(t.rows[i][0], ln);
    const double e = parse_number<double>(t.rows[i][1], ln);
    const double v = parse_number<double>(t.rows[i][2], ln);
    if (m.angles_deg.empty() || m.angles_deg.back() != angle) {
      if (!m.angles_deg.empty() && m.intensity.back().size() != m.energy_ueV.size()) {
        throw FormatError("line " + std::to_string(ln) + ": spectra must share one energy grid");
      }
      m.angles_deg.push_back(angle);
      m.intensity.emplace_back();
    }
    if (m.angles_deg.size() == 1) {
      m.energy_ueV.push_back(e);
    } else if (m.intensity.back().size() >= m.energy_ueV.size() || m.energy_ueV[m.intensity.back().size()] != e) {
      throw FormatError("line " + std::to_string(ln) + ": spectra must share one energy grid");
    }
    m.intensity.back().push_back(v);
  }
  if (!m.intensity.empty() && m.intensity.back().size() != m.energy_ueV.size()) {
    throw FormatError("last spectrum is incomplete");
  }
  return m;
}

}  // namespace twinphoton::io
