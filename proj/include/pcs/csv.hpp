#pragma once

// Minimal CSV I/O: comma separator, '.' decimal, first row is the header.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcs {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  int require_column(const std::string& name) const {
    int c = column(name);
    if (c < 0) throw std::runtime_error("csv: missing column '" + name + "'");
    return c;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(detail::trim(cur));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::string trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto cells = split_csv_line(trimmed);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  if (first) throw std::runtime_error("csv: empty file " + path);
  return t;
}

inline double csv_double(const std::string& cell, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv: bad number '" + cell + "' in " + context);
  }
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("csv: cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

  static std::string num(double v) {
    std::ostringstream ss;
    ss.precision(12);
    ss << v;
    return ss.str();
  }

 private:
  std::ofstream out_;
};

}  // namespace pcs
