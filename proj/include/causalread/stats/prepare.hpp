#pragma once

#include <cstddef>
#include <span>

#include "causalread/corpus.hpp"
#include "causalread/experiment.hpp"
#include "causalread/scoring.hpp"
#include "causalread/stats/trial_table.hpp"

namespace causalread::stats {

inline constexpr std::int64_t kMinReadingTimeMs = 100;
inline constexpr std::int64_t kMaxReadingTimeMs = 50000;

struct RtPreparation {
  TrialTable table;
  std::size_t total_trials = 0;    ///< ChunkB events seen
  std::size_t story_excluded = 0;  ///< dropped because the story is excluded
  std::size_t rt_excluded = 0;     ///< dropped by the reading-time bounds
  /// rt_excluded as a percentage of trials on non-excluded stories.
  double loss_percent = 0.0;
};

/// One row per ChunkB event: subject = participant, item = story, response =
/// rt_ms / char_count. Reading times outside [100, 50000] ms are dropped.
/// Throws UnknownSession, UnknownStory.
RtPreparation prepare_rt_table(std::span<const ChunkEvent> chunk_events, std::span<const SessionPlan> sessions,
                               const Corpus& corpus);

enum class SurprisalAggregate { PerWord, PerToken };

std::string_view to_string(SurprisalAggregate a);  // "per_word" / "per_token"
SurprisalAggregate parse_surprisal_aggregate(std::string_view text);

/// One row per region score, item = story. Throws MixedBackends unless all
/// scores share backend and mode.
TrialTable prepare_surprisal_table(std::span<const RegionSummary> scores, SurprisalAggregate aggregate);
TrialTable prepare_surprisal_table(std::span<const RegionScore> scores, SurprisalAggregate aggregate);

}  // namespace causalread::stats
