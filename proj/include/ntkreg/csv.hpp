#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "ntkreg/errors.hpp"

namespace ntkreg {

// Shortest round-trippable form ("%.17g"), stable across runs.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void header(std::initializer_list<const char*> names) {
    std::vector<std::string> cells(names.begin(), names.end());
    row(cells);
  }

 private:
  std::ofstream out_;
};

}  // namespace ntkreg
