#include "causalread/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <json.hpp>

#include "causalread/errors.hpp"

namespace causalread {

using nlohmann::json;

std::string_view to_label(Condition c) {
  switch (c) {
    case Condition::AffirmedAB: return "A->B";
    case Condition::NegatedAB: return "notA->B";
    case Condition::OmittedNilB: return "nil->B";
  }
  return "?";
}

Condition parse_condition(std::string_view label) {
  for (Condition c : kAllConditions) {
    if (to_label(c) == label) return c;
  }
  throw ParseError(fmt::format("unknown condition label '{}' (expected A->B, notA->B or nil->B)", label));
}

std::string_view to_string(ChunkRole role) {
  switch (role) {
    case ChunkRole::Initiation: return "Initiation";
    case ChunkRole::Intermediate: return "Intermediate";
    case ChunkRole::ChunkA: return "ChunkA";
    case ChunkRole::ChunkB: return "ChunkB";
    case ChunkRole::PostB: return "PostB";
  }
  return "?";
}

ChunkRole parse_chunk_role(std::string_view name) {
  for (ChunkRole r : {ChunkRole::Initiation, ChunkRole::Intermediate, ChunkRole::ChunkA, ChunkRole::ChunkB,
                      ChunkRole::PostB}) {
    if (to_string(r) == name) return r;
  }
  throw ParseError(fmt::format("unknown chunk role '{}'", name));
}

std::string_view to_string(CorpusSource source) {
  switch (source) {
    case CorpusSource::CSK: return "CSK";
    case CorpusSource::TRIP: return "TRIP";
    case CorpusSource::Derived: return "Derived";
  }
  return "?";
}

namespace {

CorpusSource parse_source(std::string_view s) {
  for (CorpusSource src : {CorpusSource::CSK, CorpusSource::TRIP, CorpusSource::Derived}) {
    if (to_string(src) == s) return src;
  }
  throw ParseError(fmt::format("field 'source': unknown corpus source '{}'", s));
}

std::size_t checked_length(std::string_view text, std::string_view story_id, std::string_view field) {
  try {
    return utf8::length(text);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(fmt::format("story '{}': field '{}': {}", story_id, field, e.what()));
  }
}

// Field access with a path-qualified ParseError.
const json& member(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(fmt::format("field '{}': expected an object", path));
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(fmt::format("field '{}.{}' is missing", path, key));
  return *it;
}

std::string get_string(const json& obj, const char* key, const std::string& path) {
  const json& v = member(obj, key, path);
  if (!v.is_string()) throw ParseError(fmt::format("field '{}.{}': expected a string", path, key));
  return v.get<std::string>();
}

std::size_t get_index(const json& obj, const char* key, const std::string& path) {
  const json& v = member(obj, key, path);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ParseError(fmt::format("field '{}.{}': expected a non-negative integer", path, key));
  }
  return v.get<std::size_t>();
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

std::string join_chunks(const std::vector<Chunk>& chunks) {
  std::string out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (i) out.push_back(' ');
    out += chunks[i].text;
  }
  return out;
}

// Rebuilds indices, full text and absolute region offsets.
RealizedStory assemble(std::string story_id, Condition condition, std::vector<Chunk> chunks, CharSpan region_in_chunk) {
  RealizedStory out;
  out.story_id = std::move(story_id);
  out.condition = condition;
  std::size_t offset = 0;
  bool found = false;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    chunks[i].index = i;
    if (chunks[i].role == ChunkRole::ChunkB) {
      out.region_b_abs = {offset + region_in_chunk.start, offset + region_in_chunk.end};
      found = true;
    }
    offset += chunks[i].char_count + 1;
  }
  if (!found) throw SchemaError(fmt::format("story '{}': no ChunkB chunk", out.story_id));
  out.chunks = std::move(chunks);
  out.full_text = join_chunks(out.chunks);
  out.region_b_in_chunk = region_in_chunk;
  out.context_before_b = utf8::substr(out.full_text, {0, out.region_b_abs.start});
  return out;
}

}  // namespace

Chunk make_chunk(std::size_t index, std::string text, ChunkRole role) {
  Chunk c;
  c.index = index;
  c.char_count = utf8::length(text);
  c.text = std::move(text);
  c.role = role;
  return c;
}

std::string StoryTemplate::region_b_text() const {
  return utf8::substr(shared_chunks.at(region_b_chunk).text, region_b_span);
}

std::size_t RealizedStory::chunk_b_index() const {
  for (const Chunk& c : chunks) {
    if (c.role == ChunkRole::ChunkB) return c.index;
  }
  throw SchemaError(fmt::format("story '{}': no ChunkB chunk", story_id));
}

std::optional<std::size_t> RealizedStory::chunk_a_index() const {
  for (const Chunk& c : chunks) {
    if (c.role == ChunkRole::ChunkA) return c.index;
  }
  return std::nullopt;
}

const StoryTemplate* Corpus::find(std::string_view story_id) const {
  for (const StoryTemplate& s : stories) {
    if (s.story_id == story_id) return &s;
  }
  return nullptr;
}

bool Corpus::is_excluded(std::string_view story_id) const {
  return std::find(excluded_story_ids.begin(), excluded_story_ids.end(), story_id) != excluded_story_ids.end();
}

void validate(const StoryTemplate& story) {
  const std::string& id = story.story_id;
  auto fail = [&](std::string_view field, std::string_view what) {
    throw SchemaError(fmt::format("story '{}': field '{}': {}", id, field, what));
  };
  if (id.empty()) throw SchemaError("story with empty story_id");
  if (story.shared_chunks.empty()) fail("chunks", "no chunks");

  std::size_t n_b = 0;
  std::size_t b_index = 0;
  for (std::size_t i = 0; i < story.shared_chunks.size(); ++i) {
    const Chunk& c = story.shared_chunks[i];
    if (c.index != i) fail("chunks", fmt::format("chunk {} carries index {}", i, c.index));
    if (c.char_count != checked_length(c.text, id, "chunks.text")) {
      fail("chunks", fmt::format("chunk {} char_count does not match its text", i));
    }
    if (c.text.empty()) fail("chunks", fmt::format("chunk {} is empty", i));
    switch (c.role) {
      case ChunkRole::Initiation:
        if (i != 0) fail("chunks", "Initiation chunk must be the first chunk and unique");
        break;
      case ChunkRole::ChunkA:
        fail("chunks", "ChunkA belongs in chunk_a, not in the shared chunk list");
        break;
      case ChunkRole::ChunkB:
        ++n_b;
        b_index = i;
        break;
      case ChunkRole::PostB:
        if (n_b == 0) fail("chunks", fmt::format("PostB chunk {} precedes ChunkB", i));
        break;
      case ChunkRole::Intermediate:
        if (n_b > 0) fail("chunks", fmt::format("Intermediate chunk {} follows ChunkB", i));
        break;
    }
  }
  if (story.shared_chunks.front().role != ChunkRole::Initiation) fail("chunks", "chunk 0 must have role Initiation");
  if (n_b != 1) fail("chunks", fmt::format("expected exactly one ChunkB, found {}", n_b));
  if (story.region_b_chunk != b_index) fail("region_b.chunk_index", "does not point at the ChunkB chunk");
  if (story.region_b_span.empty()) fail("region_b", "empty region");
  if (story.region_b_span.end > story.shared_chunks[b_index].char_count) {
    fail("region_b", fmt::format("span [{}, {}) exceeds ChunkB length {}", story.region_b_span.start,
                                 story.region_b_span.end, story.shared_chunks[b_index].char_count));
  }
  if (story.chunk_a.position < 1 || story.chunk_a.position > b_index) {
    fail("chunk_a.position", fmt::format("must lie in [1, {}] so that A follows the initiation and precedes B", b_index));
  }
  if (story.chunk_a.affirmed.empty()) fail("chunk_a.affirmed", "empty");
  if (story.chunk_a.negated.empty()) fail("chunk_a.negated", "empty");
  checked_length(story.chunk_a.affirmed, id, "chunk_a.affirmed");
  checked_length(story.chunk_a.negated, id, "chunk_a.negated");
}

void validate(const Corpus& corpus) {
  std::set<std::string> ids;
  for (const StoryTemplate& s : corpus.stories) {
    validate(s);
    if (!ids.insert(s.story_id).second) {
      throw SchemaError(fmt::format("story '{}': duplicate story_id", s.story_id));
    }
  }
  for (const std::string& ex : corpus.excluded_story_ids) {
    if (!ids.count(ex)) throw SchemaError(fmt::format("excluded_story_ids: unknown story '{}'", ex));
  }
}

Corpus parse_csk(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("line {}: {}", line_of(json_text, e.byte), e.what()));
  }
  Corpus corpus;
  corpus.name = get_string(doc, "name", "$");
  corpus.source = parse_source(get_string(doc, "source", "$"));
  const json& stories = member(doc, "stories", "$");
  if (!stories.is_array()) throw ParseError("field '$.stories': expected an array");
  for (std::size_t si = 0; si < stories.size(); ++si) {
    const json& js = stories[si];
    const std::string path = fmt::format("$.stories[{}]", si);
    StoryTemplate st;
    st.story_id = get_string(js, "story_id", path);
    st.topic = get_string(js, "topic", path);
    const json& chunks = member(js, "chunks", path);
    if (!chunks.is_array()) throw ParseError(fmt::format("field '{}.chunks': expected an array", path));
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
      const std::string cpath = fmt::format("{}.chunks[{}]", path, ci);
      std::string text = get_string(chunks[ci], "text", cpath);
      const ChunkRole role = parse_chunk_role(get_string(chunks[ci], "role", cpath));
      Chunk c;
      c.index = ci;
      c.char_count = checked_length(text, st.story_id, "chunks.text");
      c.text = std::move(text);
      c.role = role;
      st.shared_chunks.push_back(std::move(c));
    }
    const json& a = member(js, "chunk_a", path);
    st.chunk_a.affirmed = get_string(a, "affirmed", path + ".chunk_a");
    st.chunk_a.negated = get_string(a, "negated", path + ".chunk_a");
    st.chunk_a.position = get_index(a, "position", path + ".chunk_a");
    const json& rb = member(js, "region_b", path);
    st.region_b_chunk = get_index(rb, "chunk_index", path + ".region_b");
    st.region_b_span.start = get_index(rb, "start", path + ".region_b");
    st.region_b_span.end = get_index(rb, "end", path + ".region_b");
    st.event_a_text = get_string(js, "event_a_text", path);
    st.event_b_text = get_string(js, "event_b_text", path);
    if (js.contains("event_not_a_text")) st.event_not_a_text = get_string(js, "event_not_a_text", path);
    if (js.contains("omission_allowed")) {
      const json& v = js["omission_allowed"];
      if (!v.is_boolean()) throw ParseError(fmt::format("field '{}.omission_allowed': expected a boolean", path));
      st.omission_allowed = v.get<bool>();
    }
    corpus.stories.push_back(std::move(st));
  }
  if (doc.contains("excluded_story_ids")) {
    const json& ex = doc["excluded_story_ids"];
    if (!ex.is_array()) throw ParseError("field '$.excluded_story_ids': expected an array");
    for (const json& e : ex) {
      if (!e.is_string()) throw ParseError("field '$.excluded_story_ids': expected strings");
      corpus.excluded_story_ids.push_back(e.get<std::string>());
    }
  }
  validate(corpus);
  return corpus;
}

std::string write_corpus(const Corpus& corpus) {
  json doc;
  doc["name"] = corpus.name;
  doc["source"] = std::string(to_string(corpus.source));
  json stories = json::array();
  for (const StoryTemplate& st : corpus.stories) {
    json js;
    js["story_id"] = st.story_id;
    js["topic"] = st.topic;
    json chunks = json::array();
    for (const Chunk& c : st.shared_chunks) chunks.push_back({{"role", std::string(to_string(c.role))}, {"text", c.text}});
    js["chunks"] = std::move(chunks);
    js["chunk_a"] = {{"affirmed", st.chunk_a.affirmed}, {"negated", st.chunk_a.negated}, {"position", st.chunk_a.position}};
    js["region_b"] = {{"chunk_index", st.region_b_chunk}, {"start", st.region_b_span.start}, {"end", st.region_b_span.end}};
    js["event_a_text"] = st.event_a_text;
    js["event_b_text"] = st.event_b_text;
    if (st.event_not_a_text) js["event_not_a_text"] = *st.event_not_a_text;
    if (!st.omission_allowed) js["omission_allowed"] = false;
    stories.push_back(std::move(js));
  }
  doc["stories"] = std::move(stories);
  doc["excluded_story_ids"] = corpus.excluded_story_ids;
  return doc.dump(2) + "\n";
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open corpus file '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (format == CorpusFormat::CSKJson) return parse_csk(text);
  const std::vector<TripPair> pairs = parse_trip_jsonl(text);
  return adapt_trip(pairs, path.stem().string());
}

RealizedStory realize(const StoryTemplate& story, Condition condition) {
  if (condition == Condition::OmittedNilB && !story.omission_allowed) {
    throw UnsupportedCondition(fmt::format("story '{}' has no nil->B realization", story.story_id));
  }
  std::vector<Chunk> chunks;
  chunks.reserve(story.shared_chunks.size() + 1);
  for (std::size_t i = 0; i < story.shared_chunks.size(); ++i) {
    if (i == story.chunk_a.position && condition != Condition::OmittedNilB) {
      const std::string& text =
          condition == Condition::AffirmedAB ? story.chunk_a.affirmed : story.chunk_a.negated;
      chunks.push_back(make_chunk(0, text, ChunkRole::ChunkA));
    }
    chunks.push_back(story.shared_chunks[i]);
  }
  return assemble(story.story_id, condition, std::move(chunks), story.region_b_span);
}

RealizedStory shorten_distance(const RealizedStory& story) {
  const std::size_t b = story.chunk_b_index();
  const std::size_t anchor = story.chunk_a_index().value_or(0);
  std::vector<Chunk> kept;
  for (const Chunk& c : story.chunks) {
    const bool between = c.index > anchor && c.index < b;
    if (between && c.role == ChunkRole::Intermediate) continue;
    kept.push_back(c);
  }
  if (kept.size() == story.chunks.size()) return story;
  return assemble(story.story_id, story.condition, std::move(kept), story.region_b_in_chunk);
}

StoryTemplate shorten_distance(const StoryTemplate& story) {
  StoryTemplate out = story;
  out.shared_chunks.clear();
  for (const Chunk& c : story.shared_chunks) {
    const bool between = c.index >= story.chunk_a.position && c.index < story.region_b_chunk;
    if (between && c.role == ChunkRole::Intermediate) continue;
    out.shared_chunks.push_back(c);
  }
  for (std::size_t i = 0; i < out.shared_chunks.size(); ++i) {
    out.shared_chunks[i].index = i;
    if (out.shared_chunks[i].role == ChunkRole::ChunkB) out.region_b_chunk = i;
  }
  return out;
}

Corpus shorten_distance(const Corpus& corpus) {
  static constexpr std::string_view kSuffix = "-short";
  Corpus out = corpus;
  out.source = CorpusSource::Derived;
  if (!out.name.ends_with(kSuffix)) out.name += kSuffix;
  for (StoryTemplate& st : out.stories) st = shorten_distance(st);
  validate(out);
  return out;
}

std::vector<TripPair> parse_trip_jsonl(std::string_view text) {
  std::vector<TripPair> pairs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::size_t stop = eol == std::string_view::npos ? text.size() : eol;
    const std::string_view line = text.substr(pos, stop - pos);
    ++line_no;
    pos = stop + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (eol == std::string_view::npos) break;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
    const std::string path = fmt::format("line {}", line_no);
    TripPair p;
    const json& id = member(j, "pair_id", path);
    p.pair_id = id.is_string() ? id.get<std::string>() : id.dump();
    for (auto [key, target] : {std::pair{"plausible", &p.plausible}, std::pair{"implausible", &p.implausible}}) {
      const json& arr = member(j, key, path);
      if (!arr.is_array()) throw ParseError(fmt::format("{}: field '{}': expected an array of sentences", path, key));
      for (const json& s : arr) {
        if (!s.is_string()) throw ParseError(fmt::format("{}: field '{}': expected strings", path, key));
        target->push_back(s.get<std::string>());
      }
    }
    const json& bp = member(j, "breakpoint", path);
    if (!bp.is_number_integer()) throw ParseError(fmt::format("{}: field 'breakpoint': expected an integer", path));
    p.breakpoint = bp.get<int>();
    pairs.push_back(std::move(p));
    if (eol == std::string_view::npos) break;
  }
  return pairs;
}

Corpus adapt_trip(std::span<const TripPair> pairs, std::string name) {
  Corpus corpus;
  corpus.name = std::move(name);
  corpus.source = CorpusSource::TRIP;
  for (const TripPair& p : pairs) {
    auto fail = [&](std::string_view what) {
      throw SchemaError(fmt::format("story '{}': {}", p.pair_id, what));
    };
    const auto n = static_cast<int>(p.plausible.size());
    if (p.plausible.size() != p.implausible.size()) fail("plausible and implausible stories differ in length");
    if (p.breakpoint < 0 || p.breakpoint >= n) {
      fail(fmt::format("field 'breakpoint': index {} out of range for {} sentences", p.breakpoint, n));
    }
    std::vector<int> differing;
    for (int i = 0; i < n; ++i) {
      if (p.plausible[static_cast<std::size_t>(i)] != p.implausible[static_cast<std::size_t>(i)]) differing.push_back(i);
    }
    if (differing.size() != 1) fail(fmt::format("expected exactly one differing sentence, found {}", differing.size()));
    const int d = differing.front();
    if (d >= p.breakpoint) fail("differing sentence must precede the breakpoint sentence");
    if (d == 0) fail("differing sentence cannot be the story's first sentence");

    StoryTemplate st;
    st.story_id = p.pair_id;
    st.topic = p.pair_id;
    st.omission_allowed = false;
    for (int i = 0; i < n; ++i) {
      if (i == d) continue;
      ChunkRole role = ChunkRole::Intermediate;
      if (i == 0) role = ChunkRole::Initiation;
      else if (i == p.breakpoint) role = ChunkRole::ChunkB;
      else if (i > p.breakpoint) role = ChunkRole::PostB;
      st.shared_chunks.push_back(make_chunk(st.shared_chunks.size(), p.plausible[static_cast<std::size_t>(i)], role));
      if (i == p.breakpoint) st.region_b_chunk = st.shared_chunks.size() - 1;
    }
    st.chunk_a = {p.plausible[static_cast<std::size_t>(d)], p.implausible[static_cast<std::size_t>(d)],
                  static_cast<std::size_t>(d)};
    st.region_b_span = {0, st.shared_chunks[st.region_b_chunk].char_count};
    st.event_a_text = st.chunk_a.affirmed;
    st.event_not_a_text = st.chunk_a.negated;
    st.event_b_text = st.shared_chunks[st.region_b_chunk].text;
    corpus.stories.push_back(std::move(st));
  }
  validate(corpus);
  return corpus;
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  out.n = values.size();
  if (values.empty()) {
    out.mean = std::nan("");
    out.sd = std::nan("");
    return out;
  }
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::size_t words_between_a_and_b(const RealizedStory& story) {
  const auto a = story.chunk_a_index();
  if (!a) return 0;
  const std::size_t b = story.chunk_b_index();
  std::size_t words = 0;
  for (std::size_t i = *a + 1; i < b; ++i) words += utf8::count_words(story.chunks[i].text);
  words += utf8::count_words(utf8::substr(story.chunks[b].text, {0, story.region_b_in_chunk.start}));
  return words;
}

CorpusStats descriptive_stats(const Corpus& corpus) {
  if (corpus.stories.empty()) throw EmptyCorpus(fmt::format("corpus '{}' has no stories", corpus.name));
  std::array<std::vector<double>, 3> words_story;
  std::vector<double> chunks, chunk_a, chunk_not_a, chunk_b, chunk_after_b, between_a, between_not_a, ev_a, ev_not_a, ev_b;
  auto words = [](std::string_view t) { return static_cast<double>(utf8::count_words(t)); };
  for (const StoryTemplate& st : corpus.stories) {
    for (Condition c : kAllConditions) {
      if (c == Condition::OmittedNilB && !st.omission_allowed) continue;
      const RealizedStory r = realize(st, c);
      words_story[static_cast<std::size_t>(c)].push_back(words(r.full_text));
      if (c == Condition::AffirmedAB) {
        chunks.push_back(static_cast<double>(r.chunks.size()));
        between_a.push_back(static_cast<double>(words_between_a_and_b(r)));
        const std::size_t b = r.chunk_b_index();
        chunk_b.push_back(words(r.chunks[b].text));
        if (b + 1 < r.chunks.size()) chunk_after_b.push_back(words(r.chunks[b + 1].text));
      } else if (c == Condition::NegatedAB) {
        between_not_a.push_back(static_cast<double>(words_between_a_and_b(r)));
      }
    }
    chunk_a.push_back(words(st.chunk_a.affirmed));
    chunk_not_a.push_back(words(st.chunk_a.negated));
    ev_a.push_back(words(st.event_a_text));
    ev_b.push_back(words(st.event_b_text));
    if (st.event_not_a_text) ev_not_a.push_back(words(*st.event_not_a_text));
  }
  CorpusStats s;
  for (std::size_t c = 0; c < 3; ++c) s.words_per_story[c] = mean_sd(words_story[c]);
  s.chunks_per_story = mean_sd(chunks);
  s.words_chunk_a = mean_sd(chunk_a);
  s.words_chunk_not_a = mean_sd(chunk_not_a);
  s.words_chunk_b = mean_sd(chunk_b);
  s.words_chunk_after_b = mean_sd(chunk_after_b);
  s.words_between_ab = mean_sd(between_a);
  s.words_between_not_ab = mean_sd(between_not_a);
  s.words_event_a = mean_sd(ev_a);
  s.words_event_not_a = mean_sd(ev_not_a);
  s.words_event_b = mean_sd(ev_b);
  return s;
}

}  // namespace causalread
