#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causalread/utf8.hpp"

namespace causalread {

enum class Condition { AffirmedAB, NegatedAB, OmittedNilB };

inline constexpr std::array<Condition, 3> kAllConditions = {Condition::AffirmedAB, Condition::NegatedAB,
                                                            Condition::OmittedNilB};

/// "A->B", "notA->B", "nil->B".
std::string_view to_label(Condition c);
/// Inverse of to_label; throws ParseError on anything else.
Condition parse_condition(std::string_view label);

enum class ChunkRole { Initiation, Intermediate, ChunkA, ChunkB, PostB };

std::string_view to_string(ChunkRole role);
ChunkRole parse_chunk_role(std::string_view name);

struct Chunk {
  std::size_t index = 0;
  std::string text;
  ChunkRole role = ChunkRole::Intermediate;
  std::size_t char_count = 0;

  bool operator==(const Chunk&) const = default;
};

Chunk make_chunk(std::size_t index, std::string text, ChunkRole role);

struct ChunkAVariants {
  std::string affirmed;
  std::string negated;
  /// Index of the A chunk in the affirmed realization; the chunk is inserted
  /// before shared_chunks[position].
  std::size_t position = 1;

  bool operator==(const ChunkAVariants&) const = default;
};

struct StoryTemplate {
  std::string story_id;
  std::string topic;
  std::vector<Chunk> shared_chunks;
  ChunkAVariants chunk_a;
  std::size_t region_b_chunk = 0;  ///< index into shared_chunks, role ChunkB
  CharSpan region_b_span;          ///< within shared_chunks[region_b_chunk].text
  std::string event_a_text;
  std::string event_b_text;
  std::optional<std::string> event_not_a_text;
  bool omission_allowed = true;

  [[nodiscard]] std::string region_b_text() const;
  bool operator==(const StoryTemplate&) const = default;
};

struct RealizedStory {
  std::string story_id;
  Condition condition = Condition::AffirmedAB;
  std::vector<Chunk> chunks;
  std::string full_text;
  CharSpan region_b_abs;
  std::string context_before_b;
  CharSpan region_b_in_chunk;  ///< region relative to the ChunkB text

  [[nodiscard]] std::string region_b_text() const { return utf8::substr(full_text, region_b_abs); }
  [[nodiscard]] std::size_t chunk_b_index() const;
  [[nodiscard]] std::optional<std::size_t> chunk_a_index() const;
  bool operator==(const RealizedStory&) const = default;
};

enum class CorpusSource { CSK, TRIP, Derived };

std::string_view to_string(CorpusSource source);

struct Corpus {
  std::string name;
  CorpusSource source = CorpusSource::CSK;
  std::vector<StoryTemplate> stories;
  std::vector<std::string> excluded_story_ids;

  [[nodiscard]] const StoryTemplate* find(std::string_view story_id) const;
  [[nodiscard]] bool is_excluded(std::string_view story_id) const;
  bool operator==(const Corpus&) const = default;
};

enum class CorpusFormat { CSKJson, TRIPJson };

/// Checks every template invariant; throws SchemaError naming the story and field.
void validate(const StoryTemplate& story);
void validate(const Corpus& corpus);

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_csk(std::string_view json_text);
std::string write_corpus(const Corpus& corpus);

/// Chunks joined by a single space; region offsets recomputed against the result.
RealizedStory realize(const StoryTemplate& story, Condition condition);

/// Drops Intermediate chunks strictly between the A chunk (Initiation under
/// nil->B) and the B chunk.
RealizedStory shorten_distance(const RealizedStory& story);
/// Template-level version used for derived corpora: drops Intermediate chunks
/// between the A insertion point and the B chunk.
StoryTemplate shorten_distance(const StoryTemplate& story);
Corpus shorten_distance(const Corpus& corpus);

struct TripPair {
  std::string pair_id;
  std::vector<std::string> plausible;
  std::vector<std::string> implausible;
  int breakpoint = 0;  ///< 0-based sentence index
};

std::vector<TripPair> parse_trip_jsonl(std::string_view text);
Corpus adapt_trip(std::span<const TripPair> pairs, std::string name = "TRIP");

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

MeanSd mean_sd(std::span<const double> values);

struct CorpusStats {
  std::array<MeanSd, 3> words_per_story;  ///< indexed by Condition
  MeanSd chunks_per_story;
  MeanSd words_chunk_a;
  MeanSd words_chunk_not_a;
  MeanSd words_chunk_b;
  MeanSd words_chunk_after_b;
  MeanSd words_between_ab;      ///< A->B realizations
  MeanSd words_between_not_ab;  ///< notA->B realizations
  MeanSd words_event_a;
  MeanSd words_event_not_a;  ///< n == 0 when no story supplies event_not_a_text
  MeanSd words_event_b;
};

/// Words after the A chunk up to the start of region B. Zero under nil->B.
std::size_t words_between_a_and_b(const RealizedStory& story);

CorpusStats descriptive_stats(const Corpus& corpus);

}  // namespace causalread
