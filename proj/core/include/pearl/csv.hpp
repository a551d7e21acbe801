#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace pearl {

// Minimal CSV support for the artifact files this project emits and reads
// back in tests. Values never contain commas/quotes, so no quoting layer.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void write_row(const std::vector<std::string>& cells);
  void flush() { out_.flush(); }

  // Formats a double with enough digits to round-trip.
  static std::string num(double v);
  static std::string num(long long v);

 private:
  std::ofstream out_;
  std::size_t width_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);

}  // namespace pearl
