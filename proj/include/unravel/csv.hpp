#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace unravel {

// RFC 4180 style: fields containing a comma, quote, CR or LF are quoted and
// embedded quotes doubled. Rows end with "\n".
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_string() const;
  void write(const std::filesystem::path& path) const;
  static CsvTable parse(std::string_view text);

  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

// Shortest text that parses back to the same double.
std::string format_number(double value);

}  // namespace unravel
