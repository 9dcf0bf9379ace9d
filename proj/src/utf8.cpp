#include "causalread/utf8.hpp"

#include <stdexcept>

namespace causalread::utf8 {

namespace {

// Decodes one scalar starting at text[pos]; advances pos.
char32_t next_scalar(std::string_view text, std::size_t& pos) {
  const auto lead = static_cast<unsigned char>(text[pos]);
  std::size_t extra = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    cp = lead;
  } else if ((lead & 0xE0) == 0xC0) {
    extra = 1;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    extra = 2;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    extra = 3;
    cp = lead & 0x07;
  } else {
    throw std::invalid_argument("invalid UTF-8 lead byte at offset " + std::to_string(pos));
  }
  for (std::size_t k = 1; k <= extra; ++k) {
    if (pos + k >= text.size()) {
      throw std::invalid_argument("truncated UTF-8 sequence at offset " + std::to_string(pos));
    }
    const auto cont = static_cast<unsigned char>(text[pos + k]);
    if ((cont & 0xC0) != 0x80) {
      throw std::invalid_argument("invalid UTF-8 continuation byte at offset " + std::to_string(pos + k));
    }
    cp = (cp << 6) | (cont & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0x80, 0x800, 0x10000};
  if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    throw std::invalid_argument("invalid UTF-8 scalar at offset " + std::to_string(pos));
  }
  pos += extra + 1;
  return cp;
}

}  // namespace

std::u32string decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) out.push_back(next_scalar(text, pos));
  return out;
}

std::string encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

std::size_t length(std::string_view text) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    next_scalar(text, pos);
    ++n;
  }
  return n;
}

std::size_t byte_offset(std::string_view text, std::size_t index) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < index; ++i) {
    if (pos >= text.size()) throw std::out_of_range("scalar index beyond end of text");
    next_scalar(text, pos);
  }
  return pos;
}

std::string substr(std::string_view text, CharSpan span) {
  if (span.end < span.start) throw std::out_of_range("inverted span");
  const std::size_t b0 = byte_offset(text, span.start);
  const std::size_t b1 = b0 + byte_offset(text.substr(b0), span.end - span.start);
  return std::string(text.substr(b0, b1 - b0));
}

bool is_space(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

std::vector<CharSpan> word_spans(std::string_view text) {
  std::vector<CharSpan> spans;
  const std::u32string cps = decode(text);
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && is_space(cps[i])) ++i;
    if (i == cps.size()) break;
    const std::size_t start = i;
    while (i < cps.size() && !is_space(cps[i])) ++i;
    spans.push_back({start, i});
  }
  return spans;
}

}  // namespace causalread::utf8
