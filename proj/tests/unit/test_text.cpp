#include <doctest.h>

#include <random>

#include "causalread/csv.hpp"
#include "causalread/errors.hpp"
#include "causalread/hash.hpp"
#include "causalread/utf8.hpp"

using namespace causalread;

TEST_CASE("utf8 offsets count scalars") {
  const std::string text = "Zoë ate crème brûlée";
  CHECK(utf8::length(text) == 20);
  CHECK(utf8::substr(text, {4, 7}) == "ate");
  CHECK(utf8::substr(text, {8, 13}) == "crème");
  CHECK(utf8::byte_offset(text, 20) == text.size());
  CHECK(utf8::encode(utf8::decode(text)) == text);
}

TEST_CASE("utf8 words split on any Unicode whitespace") {
  const std::string text = "a b\tc  d e";
  const auto words = utf8::word_spans(text);
  REQUIRE(words.size() == 5);
  CHECK(words[1] == CharSpan{2, 3});
  CHECK(utf8::count_words("  ") == 0);
}

TEST_CASE("malformed utf8 is rejected") {
  CHECK_THROWS_AS(utf8::decode("\xc3"), std::invalid_argument);
  CHECK_THROWS_AS(utf8::decode("\xff"), std::invalid_argument);
  CHECK_THROWS_AS(utf8::decode("\xed\xa0\x80"), std::invalid_argument);  // surrogate
}

TEST_CASE("csv escaping round-trips through the parser") {
  std::mt19937_64 rng(5);
  const std::string alphabet = "ab,\"\n x";
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> fields(1 + rng() % 4);
    for (auto& f : fields) {
      const auto len = 1 + rng() % 6;
      for (std::size_t i = 0; i < len; ++i) f += alphabet[rng() % alphabet.size()];
    }
    std::vector<std::string> header;
    for (std::size_t i = 0; i < fields.size(); ++i) header.push_back("c" + std::to_string(i));
    const csv::Table t = csv::parse(csv::row(header) + csv::row(fields));
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0] == fields);
  }
}

TEST_CASE("csv comments and columns") {
  const csv::Table t = csv::parse("# meta\nx,y\n1,\"a,b\"\n");
  CHECK(t.comments.size() == 1);
  CHECK(t.column("y") == 1);
  CHECK(t.rows[0][1] == "a,b");
  CHECK_THROWS_AS((void)t.column("z"), ParseError);
}

TEST_CASE("csv numbers are shortest round-trip") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) {
    CHECK(std::stod(csv::number(v)) == v);
  }
  CHECK(csv::number(std::nan("")) == "NA");
}

TEST_CASE("sha256 of a known string") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
