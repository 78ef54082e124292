#pragma once

// CSV output: header row, RFC-style quoting for strings, '.' decimal point,
// 17 significant digits for doubles. Bodies are a pure function of the data,
// so reruns with the same config and seed compare byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gfftree {

inline std::string format_double_17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  bool needs = false;
  for (char c : s)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') needs = true;
  if (!needs) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  using Cell = std::variant<double, long long, std::string>;

  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<Cell> row) {
    if (row.size() != header_.size())
      throw std::invalid_argument("csv: row width does not match header");
    rows_.push_back(std::move(row));
  }

  std::string body() const {
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (i) out += ',';
      out += csv_quote(header_[i]);
    }
    out += '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        if (std::holds_alternative<double>(row[i]))
          out += format_double_17(std::get<double>(row[i]));
        else if (std::holds_alternative<long long>(row[i]))
          out += std::to_string(std::get<long long>(row[i]));
        else
          out += csv_quote(std::get<std::string>(row[i]));
      }
      out += '\n';
    }
    return out;
  }

  void write(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("csv: cannot write " + file.string());
    out << body();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

}  // namespace gfftree
