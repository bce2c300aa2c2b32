#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "vbquant/error.hpp"

namespace vbquant::text {

/// Delimiter 0 means auto-detect from the first data line: comma, then tab,
/// then runs of whitespace.
struct TableRow {
  std::size_t line_no = 0;
  std::vector<std::string> fields;
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline char detect_delimiter(std::string_view line) {
  if (line.find(',') != std::string_view::npos) return ',';
  if (line.find('\t') != std::string_view::npos) return '\t';
  if (line.find(';') != std::string_view::npos) return ';';
  return ' ';
}

inline std::vector<std::string> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string> out;
  if (delimiter == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      const std::size_t j = line.find_first_of(" \t", i);
      const std::size_t end = (j == std::string_view::npos) ? line.size() : j;
      out.emplace_back(line.substr(i, end - i));
      i = end;
    }
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t j = line.find(delimiter, start);
    const std::string_view field = line.substr(start, j == std::string_view::npos ? line.npos : j - start);
    out.emplace_back(trim(field));
    if (j == std::string_view::npos) break;
    start = j + 1;
  }
  return out;
}

/// Reads data rows, skipping blank lines and lines starting with '#'.
inline std::vector<TableRow> read_table(std::istream& in, char delimiter = 0) {
  std::vector<TableRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (delimiter == 0) delimiter = detect_delimiter(t);
    rows.push_back({line_no, split_fields(t, delimiter)});
  }
  return rows;
}

inline std::vector<TableRow> read_table_file(const std::filesystem::path& path, char delimiter = 0) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  return read_table(in, delimiter);
}

/// Parses a full field as a double; "nan"/"inf" are accepted and returned as-is.
inline double parse_number(std::string_view field, std::size_t line_no, std::string_view source = {}) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last) {
    std::string where = source.empty() ? std::string("line ") : std::string(source) + ": line ";
    throw Error(Errc::Parse, where + std::to_string(line_no) + ": cannot parse '" +
                                 std::string(field) + "' as a number");
  }
  return v;
}

inline const std::string& field_at(const TableRow& row, std::size_t column, std::string_view source = {}) {
  if (column >= row.fields.size()) {
    std::string where = source.empty() ? std::string("line ") : std::string(source) + ": line ";
    throw Error(Errc::Parse, where + std::to_string(row.line_no) + ": expected at least " +
                                 std::to_string(column + 1) + " columns, found " +
                                 std::to_string(row.fields.size()));
  }
  return row.fields[column];
}

} // namespace vbquant::text
