#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbquant/defect_model.hpp"
#include "vbquant/error.hpp"
#include "vbquant/text_table.hpp"

namespace vbquant {

inline constexpr const char* kCalibrationSchema = "vbquant-cal-v1";

/// Names of the covariance rows, e.g. "r_a", "alpha", "beta", "c_a@2.33".
inline std::vector<std::string> calibration_parameter_names(const CalibrationModel& m) {
  std::vector<std::string> names{"r_a", "alpha", "beta"};
  for (const auto& [el, _] : m.per_el) {
    std::ostringstream tag;
    tag << el;
    names.push_back("c_a@" + tag.str());
    names.push_back("c_s@" + tag.str());
  }
  return names;
}

inline nlohmann::ordered_json calibration_to_json(const CalibrationModel& m) {
  nlohmann::ordered_json j;
  j["schema"] = kCalibrationSchema;
  j["mode"] = std::string(ratio_mode_name(m.mode));
  j["r_s"] = m.r_s_nm;
  j["r_a"] = m.r_a_nm;
  j["alpha"] = m.alpha;
  j["beta"] = m.beta;
  auto per_el = nlohmann::ordered_json::array();
  for (const auto& [el, c] : m.per_el) per_el.push_back({{"el_ev", el}, {"c_a", c.c_a}, {"c_s", c.c_s}});
  j["per_el"] = per_el;
  if (m.has_covariance()) {
    const auto names = calibration_parameter_names(m);
    j["parameter_order"] = names;
    auto cov = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < m.covariance.rows(); ++r) {
      auto row = nlohmann::ordered_json::array();
      for (Eigen::Index c = 0; c < m.covariance.cols(); ++c) row.push_back(m.covariance(r, c));
      cov.push_back(row);
    }
    j["covariance"] = cov;
    nlohmann::ordered_json sig;
    for (std::size_t i = 0; i < names.size(); ++i) sig[names[i]] = m.sigma(i);
    j["sigmas"] = sig;
  } else {
    j["covariance"] = nullptr;
  }
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.meta) meta[k] = v;
  j["meta"] = meta;
  return j;
}

namespace detail {

inline double json_number(const nlohmann::ordered_json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw Error(Errc::Schema, std::string("missing or non-numeric field '") + key + "'");
  return j.at(key).get<double>();
}

} // namespace detail

/// "sigmas" and "parameter_order" are derived on write and ignored on read.
inline CalibrationModel calibration_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw Error(Errc::Schema, "calibration must be a JSON object");
  if (!j.contains("schema") || j.at("schema") != kCalibrationSchema)
    throw Error(Errc::Schema, std::string("expected schema tag ") + kCalibrationSchema);
  CalibrationModel m;
  m.r_s_nm = detail::json_number(j, "r_s");
  m.r_a_nm = detail::json_number(j, "r_a");
  m.alpha = detail::json_number(j, "alpha");
  m.beta = detail::json_number(j, "beta");
  if (j.contains("mode")) m.mode = parse_ratio_mode(j.at("mode").get<std::string>());
  if (!j.contains("per_el") || !j.at("per_el").is_array() || j.at("per_el").empty())
    throw Error(Errc::Schema, "per_el must be a non-empty array");
  for (const auto& e : j.at("per_el")) {
    const double el = detail::json_number(e, "el_ev");
    if (m.el_index(el)) throw Error(Errc::Schema, "duplicate per_el entry for E_L = " + std::to_string(el));
    m.per_el[el] = {detail::json_number(e, "c_a"), detail::json_number(e, "c_s")};
  }
  if (j.contains("covariance") && !j.at("covariance").is_null()) {
    const auto& cov = j.at("covariance");
    const auto n = static_cast<Eigen::Index>(m.parameter_count());
    if (!cov.is_array() || static_cast<Eigen::Index>(cov.size()) != n)
      throw Error(Errc::Schema, "covariance must be " + std::to_string(n) + " x " + std::to_string(n));
    m.covariance.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = cov.at(static_cast<std::size_t>(r));
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
        throw Error(Errc::Schema, "covariance row " + std::to_string(r) + " has the wrong length");
      for (Eigen::Index c = 0; c < n; ++c) m.covariance(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  if (j.contains("meta") && j.at("meta").is_object())
    for (const auto& [k, v] : j.at("meta").items()) m.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  m.validate();
  return m;
}

inline std::string write_calibration_string(const CalibrationModel& m) {
  return calibration_to_json(m).dump(2) + "\n";
}

inline CalibrationModel read_calibration_string(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::Parse, std::string("calibration JSON: ") + e.what());
  }
  return calibration_from_json(j);
}

inline void write_calibration_file(const std::filesystem::path& path, const CalibrationModel& m) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << write_calibration_string(m);
}

inline CalibrationModel read_calibration_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return read_calibration_string(buf.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tables

struct FluenceEntry {
  std::string tile;
  double fluence_ions_per_nm2 = 0.0;
};

namespace detail {

/// A first row whose numeric column does not parse is taken as a header.
inline bool is_header_row(const std::vector<text::TableRow>& rows, std::size_t index, std::size_t numeric_col) {
  if (index != 0 || rows.empty() || rows[0].fields.size() <= numeric_col) return false;
  try {
    (void)text::parse_number(rows[0].fields[numeric_col], rows[0].line_no);
    return false;
  } catch (const Error&) {
    return true;
  }
}

} // namespace detail

/// Two columns: tile name, fluence in ions/nm^2.
inline std::vector<FluenceEntry> parse_fluence_table(std::istream& in, const std::string& source = {}) {
  const auto rows = text::read_table(in);
  std::vector<FluenceEntry> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (detail::is_header_row(rows, i, 1)) continue;
    FluenceEntry e;
    e.tile = std::string(text::trim(text::field_at(rows[i], 0, source)));
    e.fluence_ions_per_nm2 = text::parse_number(text::field_at(rows[i], 1, source), rows[i].line_no, source);
    if (!(e.fluence_ions_per_nm2 > 0.0) || !std::isfinite(e.fluence_ions_per_nm2))
      throw Error(Errc::Domain, source + ": line " + std::to_string(rows[i].line_no) + ": fluence must be positive");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<FluenceEntry> load_fluence_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return parse_fluence_table(in, path.string());
}

/// Columns: fluence, el_ev, ratio, optional ratio_sigma.
inline std::vector<RatioObservation> parse_ratio_table(std::istream& in, RatioMode mode,
                                                       const std::string& source = {}) {
  const auto rows = text::read_table(in);
  std::vector<RatioObservation> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (detail::is_header_row(rows, i, 0)) continue;
    const auto& row = rows[i];
    RatioObservation o;
    o.mode = mode;
    o.fluence_ions_per_nm2 = text::parse_number(text::field_at(row, 0, source), row.line_no, source);
    o.excitation_energy_ev = text::parse_number(text::field_at(row, 1, source), row.line_no, source);
    o.ratio = text::parse_number(text::field_at(row, 2, source), row.line_no, source);
    if (row.fields.size() > 3) o.ratio_sigma = text::parse_number(row.fields[3], row.line_no, source);
    out.push_back(o);
  }
  return out;
}

inline std::vector<RatioObservation> load_ratio_table(const std::filesystem::path& path, RatioMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return parse_ratio_table(in, mode, path.string());
}

inline void write_ratio_table(std::ostream& out, const std::vector<RatioObservation>& obs) {
  out << "# fluence_ions_per_nm2,el_ev,ratio,ratio_sigma\n";
  out.precision(17);
  for (const auto& o : obs)
    out << o.fluence_ions_per_nm2 << ',' << o.excitation_energy_ev << ',' << o.ratio << ',' << o.ratio_sigma << '\n';
}

} // namespace vbquant
