#include "causalread/experiment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <mutex>
#include <random>
#include <sstream>
#include <json.hpp>

#include "causalread/csv.hpp"
#include "causalread/errors.hpp"

namespace causalread {

using nlohmann::json;

std::string_view to_string(RatingQuestion q) { return q == RatingQuestion::EventA ? "event_a" : "event_b"; }

RatingQuestion parse_rating_question(std::string_view text) {
  if (text == "event_a") return RatingQuestion::EventA;
  if (text == "event_b") return RatingQuestion::EventB;
  throw ParseError(fmt::format("unknown rating question '{}'", text));
}

std::string rating_prompt(std::string_view event_text) {
  return fmt::format("How sure are you that {} happened?", event_text);
}

Condition latin_square_condition(std::int64_t counterbalance_index, std::size_t trial_index) {
  const auto row = static_cast<std::size_t>(((counterbalance_index % 3) + 3) % 3);
  return kAllConditions[(trial_index + row) % 3];
}

std::vector<TrialAssignment> plan_trials(const Corpus& corpus, std::int64_t counterbalance_index, std::uint64_t seed) {
  // Topics in first-appearance order, each with its eligible stories.
  std::vector<std::pair<std::string, std::vector<const StoryTemplate*>>> topics;
  for (const StoryTemplate& s : corpus.stories) {
    if (corpus.is_excluded(s.story_id) || !s.omission_allowed) continue;
    auto it = std::find_if(topics.begin(), topics.end(), [&](const auto& t) { return t.first == s.topic; });
    if (it == topics.end()) {
      topics.push_back({s.topic, {&s}});
    } else {
      it->second.push_back(&s);
    }
  }
  if (topics.size() < 3) {
    throw InsufficientStories(
        fmt::format("need 3 eligible stories with distinct topics, corpus '{}' has {} topics", corpus.name, topics.size()));
  }
  // Raw engine output with modulo keeps the selection identical across
  // standard libraries (distribution objects are implementation-defined).
  std::mt19937_64 rng(seed);
  for (std::size_t i = topics.size() - 1; i > 0; --i) {
    std::swap(topics[i], topics[rng() % (i + 1)]);
  }
  std::vector<TrialAssignment> trials;
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& candidates = topics[j].second;
    const StoryTemplate* chosen = candidates[rng() % candidates.size()];
    trials.push_back({chosen->story_id, latin_square_condition(counterbalance_index, j)});
  }
  return trials;
}

bool ExperimentService::Session::chunks_done(std::size_t t) const {
  return t < trial || (t == trial && t < stories.size() && chunk >= stories[t].chunks.size());
}

ExperimentService::ExperimentService(Corpus corpus, std::filesystem::path log_path, Clock clock)
    : corpus_(std::move(corpus)), log_path_(std::move(log_path)), clock_(std::move(clock)) {
  if (!clock_) {
    clock_ = [] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
  }
  if (!log_path_.empty()) {
    replay();
    log_.open(log_path_, std::ios::binary | std::ios::app);
    if (!log_) throw std::runtime_error(fmt::format("cannot open event log {}", log_path_.string()));
  }
}

void ExperimentService::replay() {
  std::ifstream in(log_path_, std::ios::binary);
  if (!in) return;
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // partial trailing line from an interrupted write
    const std::string line = text.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", log_path_.string(), line_no, e.what()));
    }
    const std::string type = j.at("type").get<std::string>();
    auto str = [&](const char* key) { return j.at(key).get<std::string>(); };
    auto idx = [&](const char* key) { return j.at(key).get<std::size_t>(); };
    auto ms = [&](const char* key) { return j.at(key).get<std::int64_t>(); };
    if (type == "session_created") {
      SessionPlan p;
      p.session_id = str("session_id");
      p.participant_id = str("participant_id");
      p.seed = j.at("seed").get<std::uint64_t>();
      p.counterbalance_index = ms("counterbalance_index");
      p.created_at = ms("created_at");
      for (const json& t : j.at("trials")) {
        p.trials.push_back(
            {t.at("story_id").get<std::string>(), parse_condition(t.at("condition").get<std::string>())});
      }
      apply_create(std::move(p), false);
    } else if (type == "advance") {
      apply_advance({str("session_id"), idx("trial_index"), idx("chunk_index"), ms("shown_at"), ms("advanced_at"), 0,
                     ms("server_received_at")},
                    false);
    } else if (type == "rating") {
      apply_rating({str("session_id"), idx("trial_index"), parse_rating_question(str("question")),
                    j.at("value").get<int>(), ms("server_received_at")},
                   false);
    } else if (type == "familiarity") {
      apply_familiarity({str("session_id"), idx("trial_index"), j.at("unfamiliar").get<bool>(), ms("server_received_at")},
                        false);
    } else {
      throw ParseError(fmt::format("{}:{}: unknown event type '{}'", log_path_.string(), line_no, type));
    }
  }
  if (pos < text.size()) std::filesystem::resize_file(log_path_, pos);
}

void ExperimentService::append(const std::string& line) {
  if (!log_.is_open()) return;
  log_ << line << '\n';
  log_.flush();
  if (!log_) throw std::runtime_error(fmt::format("write to event log {} failed", log_path_.string()));
}

ExperimentService::Session& ExperimentService::find(const std::string& session_id) {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw SessionNotFound(fmt::format("no session '{}'", session_id));
  return it->second;
}

const ExperimentService::Session& ExperimentService::find(const std::string& session_id) const {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw SessionNotFound(fmt::format("no session '{}'", session_id));
  return it->second;
}

SessionPlan ExperimentService::apply_create(SessionPlan plan, bool persist) {
  Session s;
  for (const TrialAssignment& t : plan.trials) {
    const StoryTemplate* st = corpus_.find(t.story_id);
    if (!st) throw UnknownStory(fmt::format("session {} references unknown story '{}'", plan.session_id, t.story_id));
    s.stories.push_back(realize(*st, t.condition));
  }
  if (persist) {
    json trials = json::array();
    for (const TrialAssignment& t : plan.trials) {
      trials.push_back({{"story_id", t.story_id}, {"condition", std::string(to_label(t.condition))}});
    }
    append(json{{"type", "session_created"},
                {"session_id", plan.session_id},
                {"participant_id", plan.participant_id},
                {"seed", plan.seed},
                {"counterbalance_index", plan.counterbalance_index},
                {"created_at", plan.created_at},
                {"trials", trials}}
               .dump());
  }
  s.plan = plan;
  session_order_.push_back(plan.session_id);
  sessions_.emplace(plan.session_id, std::move(s));
  return plan;
}

ChunkEvent ExperimentService::apply_advance(ChunkEvent e, bool persist) {
  Session& s = find(e.session_id);
  if (s.complete()) throw SessionComplete(fmt::format("session {} is complete", e.session_id));
  if (s.chunks_done(s.trial)) {
    throw OutOfOrderChunk(fmt::format("trial {} has no chunk left; ratings are due", s.trial));
  }
  if (e.trial_index != s.trial || e.chunk_index != s.chunk) {
    throw OutOfOrderChunk(
        fmt::format("chunk {} submitted while chunk {} of trial {} is current", e.chunk_index, s.chunk, s.trial));
  }
  if (e.advanced_at <= e.shown_at) {
    throw ClockSkew(fmt::format("advanced_at {} is not after shown_at {}", e.advanced_at, e.shown_at));
  }
  e.rt_ms = e.advanced_at - e.shown_at;
  if (persist) {
    append(json{{"type", "advance"},
                {"session_id", e.session_id},
                {"trial_index", e.trial_index},
                {"chunk_index", e.chunk_index},
                {"shown_at", e.shown_at},
                {"advanced_at", e.advanced_at},
                {"server_received_at", e.server_received_at}}
               .dump());
  }
  s.chunk_events.push_back(e);
  ++s.chunk;
  return e;
}

RatingEvent ExperimentService::apply_rating(RatingEvent e, bool persist) {
  Session& s = find(e.session_id);
  if (e.value < kLikertMin || e.value > kLikertMax) {
    throw ValueOutOfRange(fmt::format("rating {} outside {}..{}", e.value, kLikertMin, kLikertMax));
  }
  if (e.trial_index >= s.plan.trials.size()) {
    throw ValueOutOfRange(fmt::format("trial index {} outside 0..{}", e.trial_index, s.plan.trials.size() - 1));
  }
  if (!s.chunks_done(e.trial_index)) throw TrialIncomplete(fmt::format("trial {} still has unread chunks", e.trial_index));
  for (const RatingEvent& r : s.ratings) {
    if (r.trial_index == e.trial_index && r.question == e.question) {
      throw DuplicateRating(fmt::format("trial {} already has a {} rating", e.trial_index, to_string(e.question)));
    }
  }
  if (persist) {
    append(json{{"type", "rating"},
                {"session_id", e.session_id},
                {"trial_index", e.trial_index},
                {"question", std::string(to_string(e.question))},
                {"value", e.value},
                {"server_received_at", e.server_received_at}}
               .dump());
  }
  s.ratings.push_back(e);
  const auto answered = std::count_if(s.ratings.begin(), s.ratings.end(),
                                      [&](const RatingEvent& r) { return r.trial_index == s.trial; });
  if (answered == 2) {
    ++s.trial;
    s.chunk = 0;
  }
  return e;
}

FamiliarityEvent ExperimentService::apply_familiarity(FamiliarityEvent e, bool persist) {
  Session& s = find(e.session_id);
  if (e.trial_index >= s.plan.trials.size()) {
    throw ValueOutOfRange(fmt::format("trial index {} outside 0..{}", e.trial_index, s.plan.trials.size() - 1));
  }
  if (!s.chunks_done(e.trial_index)) throw TrialIncomplete(fmt::format("trial {} still has unread chunks", e.trial_index));
  for (const FamiliarityEvent& f : s.familiarity) {
    if (f.trial_index == e.trial_index) {
      throw DuplicateRating(fmt::format("trial {} already has a familiarity response", e.trial_index));
    }
  }
  if (persist) {
    append(json{{"type", "familiarity"},
                {"session_id", e.session_id},
                {"trial_index", e.trial_index},
                {"unfamiliar", e.unfamiliar},
                {"server_received_at", e.server_received_at}}
               .dump());
  }
  s.familiarity.push_back(e);
  return e;
}

SessionPlan ExperimentService::create_session(const std::string& participant_id, std::int64_t counterbalance_index,
                                              std::uint64_t seed) {
  std::unique_lock lock(mutex_);
  SessionPlan plan;
  plan.session_id = fmt::format("S{:05d}", sessions_.size() + 1);
  plan.participant_id = participant_id;
  plan.seed = seed;
  plan.counterbalance_index = counterbalance_index;
  plan.trials = plan_trials(corpus_, counterbalance_index, seed);
  plan.created_at = clock_();
  return apply_create(std::move(plan), true);
}

NextItem ExperimentService::next_chunk(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const Session& s = find(session_id);
  if (s.complete()) throw SessionComplete(fmt::format("session {} is complete", session_id));
  const RealizedStory& story = s.stories[s.trial];
  if (s.chunk < story.chunks.size()) {
    return ChunkPayload{s.trial, s.chunk, story.chunks.size(), story.chunks[s.chunk].text};
  }
  const StoryTemplate* st = corpus_.find(story.story_id);
  TrialComplete done{s.trial, {}};
  done.prompts.push_back({RatingQuestion::EventA, rating_prompt(st->event_a_text)});
  done.prompts.push_back({RatingQuestion::EventB, rating_prompt(st->event_b_text)});
  return done;
}

ChunkEvent ExperimentService::record_advance(const std::string& session_id, std::size_t chunk_index,
                                             std::int64_t client_shown_at, std::int64_t client_advanced_at) {
  std::unique_lock lock(mutex_);
  const Session& s = find(session_id);
  return apply_advance({session_id, s.trial, chunk_index, client_shown_at, client_advanced_at, 0, clock_()}, true);
}

RatingEvent ExperimentService::record_rating(const std::string& session_id, std::size_t trial_index,
                                             RatingQuestion question, int value) {
  std::unique_lock lock(mutex_);
  return apply_rating({session_id, trial_index, question, value, clock_()}, true);
}

FamiliarityEvent ExperimentService::record_familiarity(const std::string& session_id, std::size_t trial_index,
                                                       bool unfamiliar) {
  std::unique_lock lock(mutex_);
  return apply_familiarity({session_id, trial_index, unfamiliar, clock_()}, true);
}

std::string ExperimentService::export_trials_csv() const {
  std::shared_lock lock(mutex_);
  std::string out = csv::row({"session_id", "participant_id", "trial_index", "story_id", "condition", "chunk_index",
                              "role", "char_count", "shown_at", "advanced_at", "rt_ms", "server_received_at"});
  for (const std::string& id : session_order_) {
    const Session& s = sessions_.at(id);
    for (const ChunkEvent& e : s.chunk_events) {
      const Chunk& c = s.stories[e.trial_index].chunks[e.chunk_index];
      out += csv::row({e.session_id, s.plan.participant_id, std::to_string(e.trial_index),
                       s.plan.trials[e.trial_index].story_id,
                       std::string(to_label(s.plan.trials[e.trial_index].condition)), std::to_string(e.chunk_index),
                       std::string(to_string(c.role)), std::to_string(c.char_count), std::to_string(e.shown_at),
                       std::to_string(e.advanced_at), std::to_string(e.rt_ms), std::to_string(e.server_received_at)});
    }
  }
  return out;
}

std::string ExperimentService::export_ratings_csv() const {
  std::shared_lock lock(mutex_);
  std::string out = csv::row({"session_id", "participant_id", "trial_index", "story_id", "condition", "question",
                              "value", "unfamiliar", "server_received_at"});
  for (const std::string& id : session_order_) {
    const Session& s = sessions_.at(id);
    std::vector<RatingEvent> ratings = s.ratings;
    std::stable_sort(ratings.begin(), ratings.end(), [](const RatingEvent& a, const RatingEvent& b) {
      return std::tie(a.trial_index, a.question) < std::tie(b.trial_index, b.question);
    });
    for (const RatingEvent& r : ratings) {
      bool unfamiliar = false;
      for (const FamiliarityEvent& f : s.familiarity) {
        if (f.trial_index == r.trial_index) unfamiliar = f.unfamiliar;
      }
      out += csv::row({r.session_id, s.plan.participant_id, std::to_string(r.trial_index),
                       s.plan.trials[r.trial_index].story_id,
                       std::string(to_label(s.plan.trials[r.trial_index].condition)),
                       std::string(to_string(r.question)), std::to_string(r.value), unfamiliar ? "1" : "0",
                       std::to_string(r.server_received_at)});
    }
  }
  return out;
}

std::vector<SessionPlan> ExperimentService::sessions() const {
  std::shared_lock lock(mutex_);
  std::vector<SessionPlan> out;
  for (const std::string& id : session_order_) out.push_back(sessions_.at(id).plan);
  return out;
}

std::vector<ChunkEvent> ExperimentService::chunk_events() const {
  std::shared_lock lock(mutex_);
  std::vector<ChunkEvent> out;
  for (const std::string& id : session_order_) {
    const auto& ev = sessions_.at(id).chunk_events;
    out.insert(out.end(), ev.begin(), ev.end());
  }
  return out;
}

namespace {

template <typename T>
T parse_int(const std::string& text, std::string_view column, std::size_t row) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(fmt::format("row {}, column {}: '{}' is not an integer", row, column, text));
  }
  return v;
}

}  // namespace

ChunkEventExport parse_trials_csv(std::string_view text) {
  const csv::Table t = csv::parse(text);
  const std::size_t c_session = t.column("session_id"), c_participant = t.column("participant_id"),
                    c_trial = t.column("trial_index"), c_story = t.column("story_id"),
                    c_condition = t.column("condition"), c_chunk = t.column("chunk_index"),
                    c_shown = t.column("shown_at"), c_advanced = t.column("advanced_at"), c_rt = t.column("rt_ms");
  const bool has_received = t.has_column("server_received_at");
  ChunkEventExport out;
  std::map<std::string, std::size_t> session_index;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    if (f.size() != t.header.size()) throw ParseError(fmt::format("row {}: wrong number of fields", i + 1));
    ChunkEvent e;
    e.session_id = f[c_session];
    e.trial_index = parse_int<std::size_t>(f[c_trial], "trial_index", i + 1);
    e.chunk_index = parse_int<std::size_t>(f[c_chunk], "chunk_index", i + 1);
    e.shown_at = parse_int<std::int64_t>(f[c_shown], "shown_at", i + 1);
    e.advanced_at = parse_int<std::int64_t>(f[c_advanced], "advanced_at", i + 1);
    e.rt_ms = parse_int<std::int64_t>(f[c_rt], "rt_ms", i + 1);
    if (has_received) e.server_received_at = parse_int<std::int64_t>(f[t.column("server_received_at")], "server_received_at", i + 1);

    auto [it, inserted] = session_index.emplace(e.session_id, out.sessions.size());
    if (inserted) {
      SessionPlan p;
      p.session_id = e.session_id;
      p.participant_id = f[c_participant];
      out.sessions.push_back(std::move(p));
    }
    SessionPlan& plan = out.sessions[it->second];
    if (plan.trials.size() <= e.trial_index) plan.trials.resize(e.trial_index + 1);
    TrialAssignment& ta = plan.trials[e.trial_index];
    const Condition condition = parse_condition(f[c_condition]);
    if (ta.story_id.empty()) {
      ta = {f[c_story], condition};
    } else if (ta.story_id != f[c_story] || ta.condition != condition) {
      throw ParseError(fmt::format("row {}: trial {} of session {} changes story or condition", i + 1, e.trial_index,
                                   e.session_id));
    }
    out.events.push_back(std::move(e));
  }
  return out;
}

std::vector<RatingRecord> parse_ratings_csv(std::string_view text) {
  const csv::Table t = csv::parse(text);
  const std::size_t c_session = t.column("session_id"), c_participant = t.column("participant_id"),
                    c_trial = t.column("trial_index"), c_story = t.column("story_id"),
                    c_condition = t.column("condition"), c_question = t.column("question"), c_value = t.column("value");
  const bool has_unfamiliar = t.has_column("unfamiliar");
  std::vector<RatingRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    if (f.size() != t.header.size()) throw ParseError(fmt::format("row {}: wrong number of fields", i + 1));
    RatingRecord r;
    r.session_id = f[c_session];
    r.participant_id = f[c_participant];
    r.trial_index = parse_int<std::size_t>(f[c_trial], "trial_index", i + 1);
    r.story_id = f[c_story];
    r.condition = parse_condition(f[c_condition]);
    r.question = parse_rating_question(f[c_question]);
    r.value = parse_int<int>(f[c_value], "value", i + 1);
    r.unfamiliar = has_unfamiliar && f[t.column("unfamiliar")] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace causalread
