#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causalread/corpus.hpp"
#include "causalread/utf8.hpp"

namespace causalread {

enum class ScoringMode { CLM, MLM };

std::string_view to_string(ScoringMode mode);  // "clm" / "mlm"
ScoringMode parse_scoring_mode(std::string_view text);

struct EndpointConfig {
  std::string base_url;
  std::string auth_token_env = "CAUSALREAD_API_TOKEN";
  double timeout_seconds = 30.0;
  int max_retries = 3;
  double rate_limit_per_second = 0.0;  ///< 0 disables the limiter
  std::size_t max_in_flight = 4;
};

struct BackendDescriptor {
  std::string name;
  bool supports_clm = true;
  bool supports_mlm = false;
  EndpointConfig endpoint;
};

/// One token as reported by a backend. Offsets are Unicode-scalar indices into
/// the request text; logprob is NaN when the backend gives none (e.g. the
/// first token of a left-to-right model).
struct BackendToken {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
  double logprob = 0.0;

  bool operator==(const BackendToken&) const = default;
};

struct BackendRequest {
  std::string text;
  ScoringMode mode = ScoringMode::CLM;
  std::optional<std::size_t> mask_index;

  /// Wire form `{text, mode, mask_index?}`.
  [[nodiscard]] std::string to_json() const;
  static BackendRequest from_json(std::string_view body);
};

std::string tokens_to_json(std::span<const BackendToken> tokens);
std::vector<BackendToken> tokens_from_json(std::string_view body);

/// A source of per-token log-probabilities. Implementations must allow
/// concurrent `query` calls.
class ScoringBackend {
 public:
  virtual ~ScoringBackend() = default;
  [[nodiscard]] virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::vector<BackendToken> query(const BackendRequest& request) = 0;
  /// Identifies the model behind the backend in cache keys.
  [[nodiscard]] virtual std::string fingerprint() const { return descriptor().name; }
};

/// Token-bucket limiter shared by concurrent callers.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second, double burst = 1.0);
  void acquire();

 private:
  std::mutex mutex_;
  double per_second_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

/// Serves repeated requests from a content-addressed directory; misses go to
/// the wrapped backend and are written back.
class CachingBackend : public ScoringBackend {
 public:
  CachingBackend(ScoringBackend& inner, std::filesystem::path directory);

  [[nodiscard]] const BackendDescriptor& descriptor() const override { return inner_.descriptor(); }
  std::vector<BackendToken> query(const BackendRequest& request) override;
  [[nodiscard]] std::string fingerprint() const override { return inner_.fingerprint(); }

  [[nodiscard]] std::size_t hits() const { return hits_; }
  [[nodiscard]] std::size_t misses() const { return misses_; }
  [[nodiscard]] std::filesystem::path entry_path(const BackendRequest& request) const;

 private:
  ScoringBackend& inner_;
  std::filesystem::path directory_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln p in nats. Throws DomainError unless 0 < p <= 1.
double surprisal(double p);

struct TokenScore {
  std::string token_text;
  CharSpan char_span;
  double logprob = 0.0;
  double surprisal_nats = 0.0;
  bool clamped = false;

  bool operator==(const TokenScore&) const = default;
};

/// Clamps probabilities below kProbabilityFloor (and positive log-probs to 0),
/// setting the clamped flag.
TokenScore make_token_score(std::string text, CharSpan span, double logprob);

struct RegionScore {
  std::string story_id;
  Condition condition = Condition::AffirmedAB;
  ScoringMode mode = ScoringMode::CLM;
  std::string backend_name;
  std::vector<TokenScore> token_scores;
  std::vector<std::vector<std::size_t>> word_groups;
  double mean_per_word_surprisal = 0.0;
  double mean_per_token_surprisal = 0.0;
  double total_nll = 0.0;
  CharSpan region;
  /// Characters of the story visible to the backend (prefix length for CLM,
  /// the whole story for MLM).
  std::size_t context_chars = 0;

  bool operator==(const RegionScore&) const = default;
};

/// Backend tokens whose span midpoint falls inside `region`, clipped to it,
/// with their index in `tokens`. Throws AlignmentError when the tokens do not
/// tile `text` (overlaps, out-of-range offsets, non-whitespace gaps).
struct RegionToken {
  std::size_t backend_index = 0;
  std::string text;
  CharSpan span;
  double logprob = 0.0;
};
std::vector<RegionToken> select_region_tokens(std::span<const BackendToken> tokens, std::string_view text,
                                              CharSpan region);

/// Groups token indices by the whitespace word of `full_text` containing each
/// token's first non-space character.
std::vector<std::vector<std::size_t>> group_tokens_by_word(std::span<const TokenScore> tokens,
                                                           std::string_view full_text, CharSpan region);

/// Fills word groups and the three aggregates from token scores.
void finalize_region_score(RegionScore& score, std::string_view full_text);

RegionScore score_clm(ScoringBackend& backend, const RealizedStory& story);
RegionScore score_mlm(ScoringBackend& backend, const RealizedStory& story);
RegionScore score_region(ScoringBackend& backend, const RealizedStory& story, ScoringMode mode);

struct ScoreFailure {
  std::string story_id;
  Condition condition = Condition::AffirmedAB;
  std::string error;
};

struct CorpusScores {
  std::vector<RegionScore> scores;
  std::vector<ScoreFailure> failures;
};

struct ScoreCorpusOptions {
  std::vector<Condition> conditions{kAllConditions.begin(), kAllConditions.end()};
  ScoringMode mode = ScoringMode::CLM;
  std::optional<std::filesystem::path> cache_dir;
  bool shorten = false;  ///< score shorten_distance() realizations
};

/// Scores every (story, condition) pair, in corpus order then condition
/// order. Per-item errors are collected instead of aborting the batch.
/// Conditions a story cannot realize (nil->B for TRIP pairs) are skipped.
CorpusScores score_corpus(ScoringBackend& backend, const Corpus& corpus, const ScoreCorpusOptions& options);

/// Long-format token rows:
/// story_id,condition,mode,backend,token_index,token_text,start,end,logprob,surprisal,clamped
std::string token_scores_csv(std::span<const RegionScore> scores, std::string_view metadata_comment = {});
/// One row per region with the three aggregates.
std::string region_summary_csv(std::span<const RegionScore> scores, std::string_view dataset,
                               std::string_view metadata_comment = {});

/// Aggregates of a region as stored in the summary CSV.
struct RegionSummary {
  std::string dataset;
  std::string story_id;
  Condition condition = Condition::AffirmedAB;
  ScoringMode mode = ScoringMode::CLM;
  std::string backend_name;
  double mean_per_word_surprisal = 0.0;
  double mean_per_token_surprisal = 0.0;
  double total_nll = 0.0;
};

RegionSummary summarize(const RegionScore& score, std::string_view dataset = {});
std::vector<RegionSummary> parse_region_summary_csv(std::string_view text);

}  // namespace causalread
