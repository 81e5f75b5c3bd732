#pragma once

#include <initializer_list>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace evidencelab::csv {

// Full precision (17 significant digits); NaN is written as an empty field.
std::string number(double v);
std::string number(long long v);
inline std::string number(int v) { return number(static_cast<long long>(v)); }
inline std::string number(long v) { return number(static_cast<long long>(v)); }

// Writes one comma-separated row. Fields are expected to be free of commas,
// quotes and newlines (all emitters in this project produce such fields).
void write_row(std::ostream& os, const std::vector<std::string>& fields);
void write_row(std::ostream& os, std::initializer_list<std::string_view> fields);

std::vector<std::string> split_row(std::string_view line);

// Reads a header line and rows; blank lines are skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws InvalidArgument if absent.
  std::size_t column(std::string_view name) const;
};

Table read(std::istream& is);

}  // namespace evidencelab::csv
