#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace causalread::csv {

/// Quotes a field when it contains a comma, quote, or line break.
std::string escape(std::string_view field);

/// One CSV record terminated by '\n'.
std::string row(const std::vector<std::string>& fields);

/// Shortest round-trippable representation of a double.
std::string number(double value);

/// Parsed CSV with a header row. Lines starting with '#' before the header
/// carry run metadata and are kept verbatim in `comments`.
struct Table {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index or throws ParseError naming the missing column.
  [[nodiscard]] std::size_t column(std::string_view name) const;
  [[nodiscard]] bool has_column(std::string_view name) const;
};

Table parse(std::string_view text);

}  // namespace causalread::csv
