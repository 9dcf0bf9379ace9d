#pragma once

#include <stdexcept>
#include <string>

namespace causalread {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors from model fitting and table preparation. The CLI maps these to exit code 1.
class AnalysisError : public Error {
 public:
  using Error::Error;
};

#define CAUSALREAD_ERROR(Name, Base)       \
  class Name : public Base {               \
   public:                                 \
    using Base::Base;                      \
  }

// corpus
CAUSALREAD_ERROR(ParseError, Error);
CAUSALREAD_ERROR(SchemaError, Error);
CAUSALREAD_ERROR(UnsupportedCondition, Error);
CAUSALREAD_ERROR(EmptyCorpus, Error);

// scoring
CAUSALREAD_ERROR(DomainError, Error);
CAUSALREAD_ERROR(BackendUnavailable, Error);
CAUSALREAD_ERROR(AlignmentError, Error);
CAUSALREAD_ERROR(EmptyRegion, Error);
CAUSALREAD_ERROR(MaskUnsupported, Error);
CAUSALREAD_ERROR(ModeUnsupported, Error);

// stats
CAUSALREAD_ERROR(UnknownStory, AnalysisError);
CAUSALREAD_ERROR(UnknownSession, AnalysisError);
CAUSALREAD_ERROR(NonConvergence, AnalysisError);
CAUSALREAD_ERROR(RankDeficient, AnalysisError);
CAUSALREAD_ERROR(TooFewGroups, AnalysisError);
CAUSALREAD_ERROR(MissingCondition, AnalysisError);
CAUSALREAD_ERROR(Separation, AnalysisError);
CAUSALREAD_ERROR(MixedBackends, AnalysisError);
CAUSALREAD_ERROR(InvalidTable, AnalysisError);

// experiment
CAUSALREAD_ERROR(InsufficientStories, Error);
CAUSALREAD_ERROR(SessionNotFound, Error);
CAUSALREAD_ERROR(SessionComplete, Error);
CAUSALREAD_ERROR(OutOfOrderChunk, Error);
CAUSALREAD_ERROR(ClockSkew, Error);
CAUSALREAD_ERROR(TrialIncomplete, Error);
CAUSALREAD_ERROR(DuplicateRating, Error);
CAUSALREAD_ERROR(ValueOutOfRange, Error);

#undef CAUSALREAD_ERROR

}  // namespace causalread
