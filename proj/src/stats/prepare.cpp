#include "causalread/stats/prepare.hpp"

#include <fmt/format.h>

#include <map>

#include "causalread/errors.hpp"

namespace causalread::stats {

RtPreparation prepare_rt_table(std::span<const ChunkEvent> chunk_events, std::span<const SessionPlan> sessions,
                               const Corpus& corpus) {
  std::map<std::string, const SessionPlan*> by_id;
  for (const SessionPlan& s : sessions) by_id[s.session_id] = &s;
  std::map<std::pair<std::string, Condition>, RealizedStory> realized;

  RtPreparation out;
  out.table.response_kind = ResponseKind::RtMsPerChar;
  for (const ChunkEvent& e : chunk_events) {
    auto it = by_id.find(e.session_id);
    if (it == by_id.end()) throw UnknownSession(fmt::format("chunk event references unknown session '{}'", e.session_id));
    const SessionPlan& plan = *it->second;
    if (e.trial_index >= plan.trials.size()) {
      throw UnknownSession(fmt::format("session '{}' has no trial {}", e.session_id, e.trial_index));
    }
    const TrialAssignment& trial = plan.trials[e.trial_index];
    const StoryTemplate* st = corpus.find(trial.story_id);
    if (!st) throw UnknownStory(fmt::format("session '{}' references unknown story '{}'", e.session_id, trial.story_id));
    auto key = std::make_pair(trial.story_id, trial.condition);
    auto rit = realized.find(key);
    if (rit == realized.end()) rit = realized.emplace(key, realize(*st, trial.condition)).first;
    const RealizedStory& story = rit->second;
    if (e.chunk_index >= story.chunks.size()) {
      throw UnknownStory(fmt::format("story '{}' has no chunk {}", trial.story_id, e.chunk_index));
    }
    const Chunk& chunk = story.chunks[e.chunk_index];
    if (chunk.role != ChunkRole::ChunkB) continue;

    ++out.total_trials;
    if (corpus.is_excluded(trial.story_id)) {
      ++out.story_excluded;
      continue;
    }
    if (e.rt_ms < kMinReadingTimeMs || e.rt_ms > kMaxReadingTimeMs) {
      ++out.rt_excluded;
      continue;
    }
    out.table.rows.push_back({plan.participant_id, trial.story_id, trial.condition,
                              static_cast<double>(e.rt_ms) / static_cast<double>(chunk.char_count), {}});
  }
  const std::size_t eligible = out.total_trials - out.story_excluded;
  out.loss_percent = eligible == 0 ? 0.0 : 100.0 * static_cast<double>(out.rt_excluded) / static_cast<double>(eligible);
  return out;
}

std::string_view to_string(SurprisalAggregate a) { return a == SurprisalAggregate::PerWord ? "per_word" : "per_token"; }

SurprisalAggregate parse_surprisal_aggregate(std::string_view text) {
  if (text == "per_word") return SurprisalAggregate::PerWord;
  if (text == "per_token") return SurprisalAggregate::PerToken;
  throw ParseError(fmt::format("unknown aggregate '{}' (expected per_word or per_token)", text));
}

TrialTable prepare_surprisal_table(std::span<const RegionSummary> scores, SurprisalAggregate aggregate) {
  TrialTable table{ResponseKind::SurprisalNats, {}};
  for (const RegionSummary& s : scores) {
    if (s.backend_name != scores.front().backend_name || s.mode != scores.front().mode) {
      throw MixedBackends(fmt::format("scores mix {}/{} with {}/{}", scores.front().backend_name,
                                      to_string(scores.front().mode), s.backend_name, to_string(s.mode)));
    }
    const double v = aggregate == SurprisalAggregate::PerWord ? s.mean_per_word_surprisal : s.mean_per_token_surprisal;
    table.rows.push_back({"", s.story_id, s.condition, v, {}});
  }
  return table;
}

TrialTable prepare_surprisal_table(std::span<const RegionScore> scores, SurprisalAggregate aggregate) {
  std::vector<RegionSummary> summaries;
  for (const RegionScore& s : scores) summaries.push_back(summarize(s));
  return prepare_surprisal_table(std::span<const RegionSummary>(summaries), aggregate);
}

}  // namespace causalread::stats
