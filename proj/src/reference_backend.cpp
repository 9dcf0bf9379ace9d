#include "causalread/reference_backend.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

#include "causalread/errors.hpp"
#include "causalread/hash.hpp"

namespace causalread {

ReferenceBackend::ReferenceBackend(std::span<const std::string> seed_corpus, std::string name) {
  if (seed_corpus.empty()) throw DomainError("reference backend needs a non-empty seed corpus");
  descriptor_.name = std::move(name);
  descriptor_.supports_clm = true;
  descriptor_.supports_mlm = true;
  descriptor_.endpoint.max_in_flight = 1;

  std::set<std::string, std::less<>> types;
  std::string joined;
  for (const std::string& text : seed_corpus) {
    joined += text;
    joined.push_back('\x1f');
    std::string prev(kStart);
    for (const CharSpan& w : utf8::word_spans(text)) {
      std::string word = utf8::substr(text, w);
      types.insert(word);
      ++bigrams_[prev][word];
      ++context_totals_[prev];
      prev = std::move(word);
    }
  }
  vocabulary_size_ = types.size() + 1;
  fingerprint_ = "ref-bigram:" + sha256_hex(joined);
}

double ReferenceBackend::probability(std::string_view prev, std::string_view word) const {
  std::size_t pair = 0;
  std::size_t total = 0;
  if (auto ctx = bigrams_.find(prev); ctx != bigrams_.end()) {
    if (auto it = ctx->second.find(word); it != ctx->second.end()) pair = it->second;
    total = context_totals_.find(prev)->second;
  }
  return static_cast<double>(pair + 1) / static_cast<double>(total + vocabulary_size_);
}

std::vector<BackendToken> ReferenceBackend::query(const BackendRequest& request) {
  std::vector<BackendToken> tokens;
  std::string prev(kStart);
  for (const CharSpan& w : utf8::word_spans(request.text)) {
    BackendToken t;
    t.text = utf8::substr(request.text, w);
    t.start = w.start;
    t.end = w.end;
    t.logprob = std::log(probability(prev, t.text));
    prev = t.text;
    tokens.push_back(std::move(t));
  }
  if (request.mask_index && *request.mask_index >= tokens.size()) {
    throw AlignmentError(fmt::format("mask_index {} beyond {} tokens", *request.mask_index, tokens.size()));
  }
  return tokens;
}

std::vector<std::string> reference_seed(const Corpus& corpus) {
  std::vector<std::string> seed;
  for (const StoryTemplate& st : corpus.stories) seed.push_back(realize(st, Condition::AffirmedAB).full_text);
  return seed;
}

}  // namespace causalread
