#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "vbquant/error.hpp"
#include "vbquant/spectra.hpp"
#include "vbquant/text_table.hpp"

namespace vbquant {

struct ColumnSpec {
  std::size_t x_column = 0;
  std::size_t y_column = 1;
  char delimiter = 0; // 0 = auto
};

struct AcquisitionMeta {
  AxisKind axis_kind = AxisKind::RamanShiftCm;
  std::optional<double> excitation_ev;
  std::string label;
};

struct LoadedSpectrum {
  Spectrum spectrum;
  std::size_t dropped_rows = 0; ///< rows with non-finite values
};

inline LoadedSpectrum parse_spectrum(std::istream& in, const ColumnSpec& cols, const AcquisitionMeta& meta,
                                     const std::string& source = {}) {
  const auto rows = text::read_table(in, cols.delimiter);
  std::vector<double> x;
  std::vector<double> y;
  std::vector<std::size_t> lines;
  std::size_t dropped = 0;
  for (const auto& row : rows) {
    const double xv = text::parse_number(text::field_at(row, cols.x_column, source), row.line_no, source);
    const double yv = text::parse_number(text::field_at(row, cols.y_column, source), row.line_no, source);
    if (!std::isfinite(xv) || !std::isfinite(yv)) {
      ++dropped;
      continue;
    }
    x.push_back(xv);
    y.push_back(yv);
    lines.push_back(row.line_no);
  }
  const std::string where = source.empty() ? std::string("input") : source;
  if (x.size() < kMinSpectrumSamples)
    throw Error(Errc::Empty, where + ": " + std::to_string(x.size()) + " valid rows, need at least " +
                                 std::to_string(kMinSpectrumSamples));
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!(x[i] > x[i - 1]))
      throw Error(Errc::Axis, where + ": line " + std::to_string(lines[i]) +
                                  ": x column is not strictly increasing");
  std::string label = meta.label.empty() ? source : meta.label;
  return {Spectrum(meta.axis_kind, std::move(x), std::move(y), meta.excitation_ev, std::move(label)), dropped};
}

inline LoadedSpectrum load_spectrum(const std::filesystem::path& path, const ColumnSpec& cols,
                                    const AcquisitionMeta& meta) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  return parse_spectrum(in, cols, meta, path.string());
}

inline void write_spectrum(std::ostream& out, const Spectrum& s, const std::vector<std::string>& header = {}) {
  for (const auto& h : header) out << "# " << h << '\n';
  out << "# axis=" << axis_name(s.axis_kind());
  if (s.excitation_ev()) out << " excitation_ev=" << std::setprecision(17) << *s.excitation_ev();
  out << '\n';
  if (!s.label().empty()) out << "# label=" << s.label() << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < s.size(); ++i) out << s.x()[i] << ',' << s.y()[i] << '\n';
}

/// key=value metadata found on '#' lines written by write_spectrum.
struct HeaderHints {
  std::optional<AxisKind> axis_kind;
  std::optional<double> excitation_ev;
  std::optional<std::string> label;
};

inline HeaderHints read_header_hints(std::istream& in) {
  HeaderHints h;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (t.empty()) continue;
    if (t.front() != '#') break;
    const auto body = text::trim(t.substr(1));
    if (body.rfind("label=", 0) == 0) {
      h.label = std::string(body.substr(6));
      continue;
    }
    std::size_t pos = 0;
    while (pos < body.size()) {
      auto end = body.find(' ', pos);
      if (end == std::string_view::npos) end = body.size();
      const auto tok = body.substr(pos, end - pos);
      pos = end + 1;
      const auto eq = tok.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = tok.substr(0, eq);
      const auto val = tok.substr(eq + 1);
      try {
        if (key == "axis") h.axis_kind = parse_axis_kind(val);
        if (key == "excitation_ev") h.excitation_ev = text::parse_number(val, 0);
      } catch (const Error&) {
        // not our header; ignore
      }
    }
  }
  return h;
}

inline HeaderHints read_header_hints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  return read_header_hints(in);
}

inline void write_spectrum_file(const std::filesystem::path& path, const Spectrum& s,
                                const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  write_spectrum(out, s, header);
}

// ---------------------------------------------------------------------------
// Hyperspectral maps: x_pos, y_pos, axis_value, counts

struct MapPixel {
  double x_pos = 0.0;
  double y_pos = 0.0;
  Spectrum spectrum;
};

struct SpectralMap {
  std::vector<double> xs; ///< sorted unique x positions
  std::vector<double> ys; ///< sorted unique y positions
  std::vector<MapPixel> pixels; ///< ordered by (y_pos, x_pos)
  std::size_t dropped_rows = 0;
};

inline SpectralMap parse_map(std::istream& in, const AcquisitionMeta& meta, const std::string& source = {},
                             char delimiter = 0) {
  const auto rows = text::read_table(in, delimiter);
  std::map<std::pair<double, double>, std::vector<std::pair<double, double>>> groups;
  SpectralMap map;
  for (const auto& row : rows) {
    double v[4];
    for (std::size_t c = 0; c < 4; ++c)
      v[c] = text::parse_number(text::field_at(row, c, source), row.line_no, source);
    if (!std::all_of(std::begin(v), std::end(v), [](double d) { return std::isfinite(d); })) {
      ++map.dropped_rows;
      continue;
    }
    groups[{v[1], v[0]}].emplace_back(v[2], v[3]);
  }
  if (groups.empty()) throw Error(Errc::Empty, (source.empty() ? "map" : source) + ": no pixels");
  for (auto& [pos, samples] : groups) {
    std::sort(samples.begin(), samples.end());
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& [a, c] : samples) {
      if (!x.empty() && a == x.back())
        throw Error(Errc::Axis, "duplicate axis value in pixel (" + std::to_string(pos.second) + ", " +
                                    std::to_string(pos.first) + ")");
      x.push_back(a);
      y.push_back(c);
    }
    map.pixels.push_back({pos.second, pos.first,
                          Spectrum(meta.axis_kind, std::move(x), std::move(y), meta.excitation_ev, meta.label)});
    map.xs.push_back(pos.second);
    map.ys.push_back(pos.first);
  }
  for (auto* v : {&map.xs, &map.ys}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return map;
}

inline SpectralMap load_map(const std::filesystem::path& path, const AcquisitionMeta& meta, char delimiter = 0) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  return parse_map(in, meta, path.string(), delimiter);
}

} // namespace vbquant
