#pragma once

// Plain CSV tables with '#' header comments. Numbers are written in the
// shortest form that round-trips, so identical inputs give identical bytes.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "optospring/config.hpp"
#include "optospring/error.hpp"

namespace optospring {

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void comment(const std::string& line) { comments_.push_back(line); }

  CsvTable& row(std::initializer_list<double> values) {
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(config_detail::format_double(v));
    return row_cells(std::move(cells));
  }

  CsvTable& row_cells(std::vector<std::string> cells) {
    if (cells.size() != columns_.size()) throw ValidationError("csv row has the wrong number of cells");
    rows_.push_back(std::move(cells));
    return *this;
  }

  std::size_t size() const { return rows_.size(); }

  void write(std::ostream& os) const {
    for (const auto& c : comments_) os << "# " << c << '\n';
    write_line(os, columns_);
    for (const auto& r : rows_) write_line(os, r);
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    write(f);
    if (!f) throw Error("write to " + path.string() + " failed");
  }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  }

  std::vector<std::string> columns_;
  std::vector<std::string> comments_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace optospring
