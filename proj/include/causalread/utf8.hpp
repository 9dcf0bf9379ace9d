#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace causalread {

/// Half-open range [start, end) of Unicode scalar indices.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  [[nodiscard]] std::size_t size() const { return end - start; }
  [[nodiscard]] bool empty() const { return end <= start; }
  [[nodiscard]] bool contains(std::size_t i) const { return i >= start && i < end; }
  bool operator==(const CharSpan&) const = default;
};

namespace utf8 {

// All offsets below count Unicode scalar values, not bytes. Malformed input
// throws std::invalid_argument.

std::u32string decode(std::string_view text);
std::string encode(std::u32string_view text);

std::size_t length(std::string_view text);

/// Byte offset of scalar `index`; `index == length(text)` maps to text.size().
std::size_t byte_offset(std::string_view text, std::size_t index);

std::string substr(std::string_view text, CharSpan span);

bool is_space(char32_t c);

/// Spans of maximal non-whitespace runs.
std::vector<CharSpan> word_spans(std::string_view text);

inline std::size_t count_words(std::string_view text) { return word_spans(text).size(); }

}  // namespace utf8
}  // namespace causalread
