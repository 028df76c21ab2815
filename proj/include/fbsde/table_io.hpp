#pragma once

// Comma-separated numeric tables and atomic file output.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fbsde {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);
  /// Index of a named column; throws InvalidArgument if absent.
  std::size_t column(std::string_view name) const;
  bool operator==(const Table&) const = default;
};

/// printf("%.17g"), enough digits to round-trip any double.
std::string format_double(double v);

std::string to_csv(const Table& table);
Table parse_csv(std::string_view text);
Table read_table(const std::filesystem::path& path);

/// Writes to a temporary sibling, then renames over the target. Throws
/// IoError on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace fbsde
