#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace roa {

// Shortest round-trip decimal representation; independent of the C locale.
std::string format_number(double value);

// Parses a decimal number written by format_number (or any plain decimal).
double parse_number(std::string_view text);

// Writes a header row followed by rows of numbers, comma separated.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);

 private:
  std::ostream& os_;
  std::size_t columns_;
};

std::vector<std::vector<double>> read_csv_numbers(std::istream& is,
                                                  std::vector<std::string>* header = nullptr);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace roa
