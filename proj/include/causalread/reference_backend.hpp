#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causalread/scoring.hpp"

namespace causalread {

/// Deterministic in-process backend: an add-one smoothed bigram model over
/// whitespace words. Every seed string is one sequence opened by "<s>".
///
///   P(w | prev) = (count(prev, w) + 1) / (count(prev, *) + V)
///
/// V counts the seed word types plus one unknown-word type. Tokens are the
/// whitespace words of the request text; masked queries return the same
/// value as left-to-right ones because the model never looks right.
class ReferenceBackend : public ScoringBackend {
 public:
  static constexpr std::string_view kStart = "<s>";

  explicit ReferenceBackend(std::span<const std::string> seed_corpus, std::string name = "ref");

  [[nodiscard]] const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::vector<BackendToken> query(const BackendRequest& request) override;
  [[nodiscard]] std::string fingerprint() const override { return fingerprint_; }

  [[nodiscard]] double probability(std::string_view prev, std::string_view word) const;
  [[nodiscard]] std::size_t vocabulary_size() const { return vocabulary_size_; }

 private:
  BackendDescriptor descriptor_;
  std::string fingerprint_;
  std::map<std::string, std::map<std::string, std::size_t, std::less<>>, std::less<>> bigrams_;
  std::map<std::string, std::size_t, std::less<>> context_totals_;
  std::size_t vocabulary_size_ = 0;
};

/// Seed texts for the reference backend: the A->B realization of every story.
std::vector<std::string> reference_seed(const Corpus& corpus);

}  // namespace causalread
