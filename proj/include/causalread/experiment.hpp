#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "causalread/corpus.hpp"

namespace causalread {

enum class RatingQuestion { EventA, EventB };

std::string_view to_string(RatingQuestion q);  // "event_a" / "event_b"
RatingQuestion parse_rating_question(std::string_view text);

inline constexpr int kLikertMin = 0;
inline constexpr int kLikertMax = 7;
inline constexpr std::string_view kLikertMinLabel = "Not sure at all";
inline constexpr std::string_view kLikertMaxLabel = "Very sure";

struct TrialAssignment {
  std::string story_id;
  Condition condition = Condition::AffirmedAB;

  bool operator==(const TrialAssignment&) const = default;
};

struct SessionPlan {
  std::string session_id;
  std::string participant_id;
  std::uint64_t seed = 0;
  std::int64_t counterbalance_index = 0;
  std::vector<TrialAssignment> trials;
  std::int64_t created_at = 0;

  bool operator==(const SessionPlan&) const = default;
};

/// Latin square row `counterbalance_index mod 3`: trial j gets condition
/// (j + row) mod 3 in A->B, notA->B, nil->B order.
Condition latin_square_condition(std::int64_t counterbalance_index, std::size_t trial_index);

/// Picks three stories with distinct topics, pseudo-randomly from `seed`, among
/// non-excluded stories that can be shown in every condition. The choice does
/// not depend on the counterbalance index. Throws InsufficientStories.
std::vector<TrialAssignment> plan_trials(const Corpus& corpus, std::int64_t counterbalance_index, std::uint64_t seed);

struct ChunkEvent {
  std::string session_id;
  std::size_t trial_index = 0;
  std::size_t chunk_index = 0;
  std::int64_t shown_at = 0;
  std::int64_t advanced_at = 0;
  std::int64_t rt_ms = 0;
  std::int64_t server_received_at = 0;

  bool operator==(const ChunkEvent&) const = default;
};

struct RatingEvent {
  std::string session_id;
  std::size_t trial_index = 0;
  RatingQuestion question = RatingQuestion::EventA;
  int value = 0;
  std::int64_t server_received_at = 0;

  bool operator==(const RatingEvent&) const = default;
};

struct FamiliarityEvent {
  std::string session_id;
  std::size_t trial_index = 0;
  bool unfamiliar = false;
  std::int64_t server_received_at = 0;

  bool operator==(const FamiliarityEvent&) const = default;
};

struct ChunkPayload {
  std::size_t trial_index = 0;
  std::size_t chunk_index = 0;
  std::size_t n_chunks = 0;
  std::string text;
};

struct RatingPrompt {
  RatingQuestion question = RatingQuestion::EventA;
  std::string text;
};

/// Sent once every chunk of a trial has been advanced.
struct TrialComplete {
  std::size_t trial_index = 0;
  std::vector<RatingPrompt> prompts;
};

using NextItem = std::variant<ChunkPayload, TrialComplete>;

/// "How sure are you that {event} happened?"
std::string rating_prompt(std::string_view event_text);

/// Session store with an append-only JSON-lines log. Every accepted event is
/// written and flushed before the call returns; constructing a service on an
/// existing log replays it. Thread-safe: mutations are serialized, exports
/// and reads run concurrently.
class ExperimentService {
 public:
  using Clock = std::function<std::int64_t()>;

  /// `log_path` empty keeps events in memory only. `clock` supplies server
  /// receipt times in ms (defaults to the system clock).
  ExperimentService(Corpus corpus, std::filesystem::path log_path = {}, Clock clock = {});

  SessionPlan create_session(const std::string& participant_id, std::int64_t counterbalance_index,
                             std::uint64_t seed);
  /// Current chunk, or the rating prompts once the trial's chunks are done.
  /// Throws SessionNotFound, SessionComplete.
  NextItem next_chunk(const std::string& session_id) const;
  ChunkEvent record_advance(const std::string& session_id, std::size_t chunk_index, std::int64_t client_shown_at,
                            std::int64_t client_advanced_at);
  RatingEvent record_rating(const std::string& session_id, std::size_t trial_index, RatingQuestion question,
                            int value);
  FamiliarityEvent record_familiarity(const std::string& session_id, std::size_t trial_index, bool unfamiliar);

  /// Columns: session_id,participant_id,trial_index,story_id,condition,chunk_index,
  /// role,char_count,shown_at,advanced_at,rt_ms,server_received_at
  [[nodiscard]] std::string export_trials_csv() const;
  /// Columns: session_id,participant_id,trial_index,story_id,condition,question,
  /// value,unfamiliar,server_received_at
  [[nodiscard]] std::string export_ratings_csv() const;

  [[nodiscard]] std::vector<SessionPlan> sessions() const;
  [[nodiscard]] std::vector<ChunkEvent> chunk_events() const;
  [[nodiscard]] const Corpus& corpus() const { return corpus_; }

 private:
  struct Session {
    SessionPlan plan;
    std::vector<RealizedStory> stories;
    std::size_t trial = 0;
    std::size_t chunk = 0;
    std::vector<ChunkEvent> chunk_events;
    std::vector<RatingEvent> ratings;
    std::vector<FamiliarityEvent> familiarity;
    [[nodiscard]] bool complete() const { return trial >= plan.trials.size(); }
    [[nodiscard]] bool chunks_done(std::size_t t) const;
  };

  Session& find(const std::string& session_id);
  const Session& find(const std::string& session_id) const;
  // Each apply_* validates, logs when `persist`, then mutates state. Replay
  // runs the same path without logging.
  SessionPlan apply_create(SessionPlan plan, bool persist);
  ChunkEvent apply_advance(ChunkEvent event, bool persist);
  RatingEvent apply_rating(RatingEvent event, bool persist);
  FamiliarityEvent apply_familiarity(FamiliarityEvent event, bool persist);
  void append(const std::string& line);
  void replay();

  Corpus corpus_;
  std::filesystem::path log_path_;
  Clock clock_;
  std::ofstream log_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::vector<std::string> session_order_;
};

/// Reads the trials export back: chunk events plus the session plans implied
/// by their story and condition columns.
struct ChunkEventExport {
  std::vector<ChunkEvent> events;
  std::vector<SessionPlan> sessions;
};
ChunkEventExport parse_trials_csv(std::string_view text);

struct RatingRecord {
  std::string session_id;
  std::string participant_id;
  std::size_t trial_index = 0;
  std::string story_id;
  Condition condition = Condition::AffirmedAB;
  RatingQuestion question = RatingQuestion::EventA;
  int value = 0;
  bool unfamiliar = false;
};
std::vector<RatingRecord> parse_ratings_csv(std::string_view text);

}  // namespace causalread
