#include "causalread/scoring.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>
#include <json.hpp>

#include "causalread/csv.hpp"
#include "causalread/errors.hpp"
#include "causalread/hash.hpp"

namespace causalread {

using nlohmann::json;

std::string_view to_string(ScoringMode mode) { return mode == ScoringMode::CLM ? "clm" : "mlm"; }

ScoringMode parse_scoring_mode(std::string_view text) {
  if (text == "clm" || text == "CLM") return ScoringMode::CLM;
  if (text == "mlm" || text == "MLM") return ScoringMode::MLM;
  throw ParseError(fmt::format("unknown scoring mode '{}' (expected clm or mlm)", text));
}

std::string BackendRequest::to_json() const {
  json j = {{"text", text}, {"mode", std::string(causalread::to_string(mode))}};
  if (mask_index) j["mask_index"] = *mask_index;
  return j.dump();
}

BackendRequest BackendRequest::from_json(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) throw ParseError("request needs a 'text' string");
  BackendRequest r;
  r.text = j["text"].get<std::string>();
  r.mode = parse_scoring_mode(j.value("mode", std::string("clm")));
  if (j.contains("mask_index") && !j["mask_index"].is_null()) {
    if (!j["mask_index"].is_number_integer() || j["mask_index"].get<long long>() < 0) {
      throw ParseError("'mask_index' must be a non-negative integer");
    }
    r.mask_index = j["mask_index"].get<std::size_t>();
  }
  return r;
}

std::string tokens_to_json(std::span<const BackendToken> tokens) {
  json arr = json::array();
  for (const BackendToken& t : tokens) {
    json jt = {{"text", t.text}, {"start", t.start}, {"end", t.end}};
    if (std::isnan(t.logprob)) {
      jt["logprob"] = nullptr;
    } else {
      jt["logprob"] = t.logprob;
    }
    arr.push_back(std::move(jt));
  }
  return json{{"tokens", std::move(arr)}}.dump();
}

std::vector<BackendToken> tokens_from_json(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw AlignmentError(fmt::format("malformed backend response: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
    throw AlignmentError("backend response lacks a 'tokens' array");
  }
  std::vector<BackendToken> out;
  for (const json& jt : j["tokens"]) {
    if (!jt.is_object() || !jt.contains("start") || !jt.contains("end") || !jt["start"].is_number_integer() ||
        !jt["end"].is_number_integer() || jt["start"].get<long long>() < 0 || jt["end"].get<long long>() < 0) {
      throw AlignmentError("backend token lacks integer start/end offsets");
    }
    BackendToken t;
    t.text = jt.value("text", std::string());
    t.start = jt["start"].get<std::size_t>();
    t.end = jt["end"].get<std::size_t>();
    const auto lp = jt.find("logprob");
    t.logprob = (lp == jt.end() || lp->is_null()) ? std::numeric_limits<double>::quiet_NaN() : lp->get<double>();
    out.push_back(std::move(t));
  }
  return out;
}

RateLimiter::RateLimiter(double per_second, double burst)
    : per_second_(per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (per_second_ <= 0.0) return;
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * per_second_);
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait = (1.0 - tokens_) / per_second_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

CachingBackend::CachingBackend(ScoringBackend& inner, std::filesystem::path directory)
    : inner_(inner), directory_(std::move(directory)) {
  std::filesystem::create_directories(directory_);
}

std::filesystem::path CachingBackend::entry_path(const BackendRequest& request) const {
  const std::string key = sha256_hex(inner_.fingerprint() + '\x1f' + request.to_json());
  return directory_ / (key + ".json");
}

std::vector<BackendToken> CachingBackend::query(const BackendRequest& request) {
  const auto path = entry_path(request);
  if (std::ifstream in{path, std::ios::binary}) {
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      auto tokens = tokens_from_json(ss.str());
      ++hits_;
      return tokens;
    } catch (const AlignmentError&) {
      // corrupt entry, refetch
    }
  }
  ++misses_;
  auto tokens = inner_.query(request);
  auto tmp = path;
  tmp += fmt::format(".tmp{}", std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << tokens_to_json(tokens);
  }
  std::filesystem::rename(tmp, path);
  return tokens;
}

double surprisal(double p) {
  if (!(p > 0.0) || p > 1.0) throw DomainError(fmt::format("surprisal undefined for probability {}", p));
  return -std::log(p);
}

TokenScore make_token_score(std::string text, CharSpan span, double logprob) {
  TokenScore t;
  t.token_text = std::move(text);
  t.char_span = span;
  static const double kFloorLog = std::log(kProbabilityFloor);
  if (std::isnan(logprob)) throw AlignmentError(fmt::format("no log-probability for token '{}'", t.token_text));
  if (logprob < kFloorLog) {
    logprob = kFloorLog;
    t.clamped = true;
  } else if (logprob > 0.0) {
    logprob = 0.0;
    t.clamped = true;
  }
  t.logprob = logprob;
  t.surprisal_nats = logprob == 0.0 ? 0.0 : -logprob;
  return t;
}

std::vector<RegionToken> select_region_tokens(std::span<const BackendToken> tokens, std::string_view text,
                                              CharSpan region) {
  const std::u32string cps = utf8::decode(text);
  std::vector<RegionToken> out;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const BackendToken& t = tokens[i];
    if (t.start >= t.end || t.end > cps.size()) {
      throw AlignmentError(fmt::format("token {} has invalid span [{}, {}) for a {}-character text", i, t.start, t.end,
                                       cps.size()));
    }
    if (t.start < cursor) throw AlignmentError(fmt::format("token {} overlaps its predecessor", i));
    for (std::size_t k = cursor; k < t.start; ++k) {
      if (!utf8::is_space(cps[k])) {
        throw AlignmentError(fmt::format("character {} is not covered by any token", k));
      }
    }
    const std::u32string_view piece(cps.data() + t.start, t.end - t.start);
    if (!t.text.empty() && utf8::encode(piece) != t.text) {
      throw AlignmentError(fmt::format("token {} text '{}' does not match its offsets", i, t.text));
    }
    cursor = t.end;
    const std::size_t twice_mid = t.start + t.end;
    if (twice_mid >= 2 * region.start && twice_mid < 2 * region.end) {
      RegionToken rt;
      rt.backend_index = i;
      rt.span = {std::max(t.start, region.start), std::min(t.end, region.end)};
      rt.text = utf8::encode(std::u32string_view(cps.data() + rt.span.start, rt.span.size()));
      rt.logprob = t.logprob;
      out.push_back(std::move(rt));
    }
  }
  for (std::size_t k = cursor; k < std::min(region.end, cps.size()); ++k) {
    if (!utf8::is_space(cps[k])) throw AlignmentError(fmt::format("character {} is not covered by any token", k));
  }
  return out;
}

std::vector<std::vector<std::size_t>> group_tokens_by_word(std::span<const TokenScore> tokens,
                                                           std::string_view full_text, CharSpan region) {
  const std::u32string cps = utf8::decode(full_text);
  std::vector<CharSpan> words = utf8::word_spans(utf8::substr(full_text, region));
  for (CharSpan& w : words) w = {w.start + region.start, w.end + region.start};

  std::vector<std::vector<std::size_t>> groups(words.size());
  std::optional<std::size_t> last_word;
  std::vector<std::size_t> pending;  // whitespace-only tokens before any word
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const CharSpan s = tokens[i].char_span;
    std::optional<std::size_t> anchor;
    for (std::size_t k = s.start; k < s.end; ++k) {
      if (!utf8::is_space(cps[k])) {
        anchor = k;
        break;
      }
    }
    if (!anchor) {
      if (last_word) {
        groups[*last_word].push_back(i);
      } else {
        pending.push_back(i);
      }
      continue;
    }
    auto it = std::find_if(words.begin(), words.end(), [&](const CharSpan& w) { return w.contains(*anchor); });
    if (it == words.end()) throw AlignmentError(fmt::format("token {} lies outside every region word", i));
    const auto w = static_cast<std::size_t>(it - words.begin());
    if (!pending.empty()) {
      groups[w].insert(groups[w].end(), pending.begin(), pending.end());
      pending.clear();
    }
    groups[w].push_back(i);
    last_word = w;
  }
  if (!pending.empty()) throw AlignmentError("region contains only whitespace tokens");
  for (std::size_t w = 0; w < groups.size(); ++w) {
    if (groups[w].empty()) throw AlignmentError(fmt::format("region word {} received no tokens", w));
  }
  return groups;
}

void finalize_region_score(RegionScore& score, std::string_view full_text) {
  if (score.token_scores.empty()) throw AlignmentError(fmt::format("no backend tokens fall inside region B of '{}'", score.story_id));
  score.word_groups = group_tokens_by_word(score.token_scores, full_text, score.region);
  double total = 0.0;
  for (const TokenScore& t : score.token_scores) total += t.surprisal_nats;
  score.total_nll = total;
  score.mean_per_token_surprisal = total / static_cast<double>(score.token_scores.size());
  double word_sum = 0.0;
  for (const auto& group : score.word_groups) {
    double s = 0.0;
    for (std::size_t i : group) s += score.token_scores[i].surprisal_nats;
    word_sum += s;
  }
  score.mean_per_word_surprisal = word_sum / static_cast<double>(score.word_groups.size());
}

namespace {

RegionScore start_score(const ScoringBackend& backend, const RealizedStory& story, ScoringMode mode) {
  if (story.region_b_abs.empty()) throw EmptyRegion(fmt::format("story '{}' has an empty region B", story.story_id));
  RegionScore s;
  s.story_id = story.story_id;
  s.condition = story.condition;
  s.mode = mode;
  s.backend_name = backend.descriptor().name;
  s.region = story.region_b_abs;
  return s;
}

}  // namespace

RegionScore score_clm(ScoringBackend& backend, const RealizedStory& story) {
  if (!backend.descriptor().supports_clm) {
    throw ModeUnsupported(fmt::format("backend '{}' does not support left-to-right scoring", backend.descriptor().name));
  }
  RegionScore score = start_score(backend, story, ScoringMode::CLM);
  // Only the text up to the end of region B is sent, so later chunks cannot
  // influence left-to-right scores.
  const std::string prefix = utf8::substr(story.full_text, {0, story.region_b_abs.end});
  score.context_chars = story.region_b_abs.end;
  const auto tokens = backend.query({prefix, ScoringMode::CLM, std::nullopt});
  for (RegionToken& rt : select_region_tokens(tokens, prefix, story.region_b_abs)) {
    score.token_scores.push_back(make_token_score(std::move(rt.text), rt.span, rt.logprob));
  }
  finalize_region_score(score, story.full_text);
  return score;
}

RegionScore score_mlm(ScoringBackend& backend, const RealizedStory& story) {
  if (!backend.descriptor().supports_mlm) {
    throw MaskUnsupported(fmt::format("backend '{}' does not support masked scoring", backend.descriptor().name));
  }
  RegionScore score = start_score(backend, story, ScoringMode::MLM);
  score.context_chars = utf8::length(story.full_text);
  const auto layout = backend.query({story.full_text, ScoringMode::MLM, std::nullopt});
  for (RegionToken& rt : select_region_tokens(layout, story.full_text, story.region_b_abs)) {
    const auto masked = backend.query({story.full_text, ScoringMode::MLM, rt.backend_index});
    if (masked.size() != layout.size() || masked[rt.backend_index].start != layout[rt.backend_index].start ||
        masked[rt.backend_index].end != layout[rt.backend_index].end) {
      throw AlignmentError(fmt::format("masked query for token {} returned a different tokenization", rt.backend_index));
    }
    score.token_scores.push_back(make_token_score(std::move(rt.text), rt.span, masked[rt.backend_index].logprob));
  }
  finalize_region_score(score, story.full_text);
  return score;
}

RegionScore score_region(ScoringBackend& backend, const RealizedStory& story, ScoringMode mode) {
  return mode == ScoringMode::CLM ? score_clm(backend, story) : score_mlm(backend, story);
}

CorpusScores score_corpus(ScoringBackend& backend, const Corpus& corpus, const ScoreCorpusOptions& options) {
  const BackendDescriptor& desc = backend.descriptor();
  if (options.mode == ScoringMode::CLM && !desc.supports_clm) {
    throw ModeUnsupported(fmt::format("backend '{}' does not support left-to-right scoring", desc.name));
  }
  if (options.mode == ScoringMode::MLM && !desc.supports_mlm) {
    throw MaskUnsupported(fmt::format("backend '{}' does not support masked scoring", desc.name));
  }
  std::optional<CachingBackend> cache;
  if (options.cache_dir) cache.emplace(backend, *options.cache_dir);
  ScoringBackend& source = cache ? static_cast<ScoringBackend&>(*cache) : backend;

  struct Item {
    const StoryTemplate* story;
    Condition condition;
  };
  std::vector<Item> items;
  for (const StoryTemplate& st : corpus.stories) {
    for (Condition c : options.conditions) {
      if (c == Condition::OmittedNilB && !st.omission_allowed) continue;
      items.push_back({&st, c});
    }
  }

  std::vector<std::optional<RegionScore>> results(items.size());
  std::vector<std::optional<std::string>> errors(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        RealizedStory r = realize(*items[i].story, items[i].condition);
        if (options.shorten) r = shorten_distance(r);
        results[i] = score_region(source, r, options.mode);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(desc.endpoint.max_in_flight, 1, std::max<std::size_t>(1, items.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  CorpusScores out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (results[i]) {
      out.scores.push_back(std::move(*results[i]));
    } else {
      out.failures.push_back({items[i].story->story_id, items[i].condition, errors[i].value_or("unknown error")});
    }
  }
  return out;
}

std::string token_scores_csv(std::span<const RegionScore> scores, std::string_view metadata_comment) {
  std::string out;
  if (!metadata_comment.empty()) out += fmt::format("# {}\n", metadata_comment);
  out += csv::row({"story_id", "condition", "mode", "backend", "token_index", "token_text", "start", "end", "logprob",
                   "surprisal", "clamped"});
  for (const RegionScore& s : scores) {
    for (std::size_t i = 0; i < s.token_scores.size(); ++i) {
      const TokenScore& t = s.token_scores[i];
      out += csv::row({s.story_id, std::string(to_label(s.condition)), std::string(to_string(s.mode)), s.backend_name,
                       std::to_string(i), t.token_text, std::to_string(t.char_span.start),
                       std::to_string(t.char_span.end), csv::number(t.logprob), csv::number(t.surprisal_nats),
                       t.clamped ? "true" : "false"});
    }
  }
  return out;
}

RegionSummary summarize(const RegionScore& score, std::string_view dataset) {
  RegionSummary s;
  s.dataset = std::string(dataset);
  s.story_id = score.story_id;
  s.condition = score.condition;
  s.mode = score.mode;
  s.backend_name = score.backend_name;
  s.mean_per_word_surprisal = score.mean_per_word_surprisal;
  s.mean_per_token_surprisal = score.mean_per_token_surprisal;
  s.total_nll = score.total_nll;
  return s;
}

std::string region_summary_csv(std::span<const RegionScore> scores, std::string_view dataset,
                               std::string_view metadata_comment) {
  std::string out;
  if (!metadata_comment.empty()) out += fmt::format("# {}\n", metadata_comment);
  out += csv::row({"dataset", "story_id", "condition", "mode", "backend", "n_tokens", "n_words", "context_chars",
                   "mean_per_word_surprisal", "mean_per_token_surprisal", "total_nll"});
  for (const RegionScore& s : scores) {
    out += csv::row({std::string(dataset), s.story_id, std::string(to_label(s.condition)),
                     std::string(to_string(s.mode)), s.backend_name, std::to_string(s.token_scores.size()),
                     std::to_string(s.word_groups.size()), std::to_string(s.context_chars),
                     csv::number(s.mean_per_word_surprisal), csv::number(s.mean_per_token_surprisal),
                     csv::number(s.total_nll)});
  }
  return out;
}

std::vector<RegionSummary> parse_region_summary_csv(std::string_view text) {
  const csv::Table t = csv::parse(text);
  const std::size_t c_story = t.column("story_id"), c_cond = t.column("condition"), c_mode = t.column("mode"),
                    c_backend = t.column("backend"), c_word = t.column("mean_per_word_surprisal"),
                    c_token = t.column("mean_per_token_surprisal"), c_total = t.column("total_nll");
  const bool has_dataset = t.has_column("dataset");
  std::vector<RegionSummary> out;
  for (const auto& r : t.rows) {
    RegionSummary s;
    if (has_dataset) s.dataset = r[t.column("dataset")];
    s.story_id = r[c_story];
    s.condition = parse_condition(r[c_cond]);
    s.mode = parse_scoring_mode(r[c_mode]);
    s.backend_name = r[c_backend];
    try {
      s.mean_per_word_surprisal = std::stod(r[c_word]);
      s.mean_per_token_surprisal = std::stod(r[c_token]);
      s.total_nll = std::stod(r[c_total]);
    } catch (const std::exception&) {
      throw ParseError(fmt::format("summary CSV: non-numeric aggregate for story '{}'", s.story_id));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace causalread
