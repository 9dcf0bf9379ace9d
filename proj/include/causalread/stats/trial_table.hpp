#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causalread/corpus.hpp"

namespace causalread::stats {

enum class ResponseKind { RtMsPerChar, SurprisalNats, Likert0to7 };

std::string_view to_string(ResponseKind kind);
ResponseKind parse_response_kind(std::string_view text);

struct TrialRow {
  std::string subject_id;  ///< empty for model data
  std::string item_id;
  Condition condition = Condition::AffirmedAB;
  double response = 0.0;
  std::map<std::string, double> covariates;

  bool operator==(const TrialRow&) const = default;
};

/// Long-format observations ready for regression.
struct TrialTable {
  ResponseKind response_kind = ResponseKind::RtMsPerChar;
  std::vector<TrialRow> rows;

  [[nodiscard]] bool has_condition(Condition c) const;
  [[nodiscard]] bool has_subjects() const;
  bool operator==(const TrialTable&) const = default;
};

/// Throws InvalidTable on missing item ids, non-positive reading times or
/// Likert values outside the integers 0..7.
void validate(const TrialTable& table);

TrialTable subset(const TrialTable& table, std::span<const Condition> conditions);

/// `subject_id,item_id,condition,response,response_kind` plus one column per covariate.
std::string write_trial_table_csv(const TrialTable& table, std::string_view metadata_comment = {});
TrialTable parse_trial_table_csv(std::string_view text);

}  // namespace causalread::stats
