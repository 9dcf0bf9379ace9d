#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causalread/corpus.hpp"
#include "causalread/stats/trial_table.hpp"

namespace causalread::report {

/// "***" (p < .001), "**" (< .01), "*" (< .05), "." (< .1), otherwise "n.s.".
/// Throws DomainError unless 0 <= p <= 1.
std::string_view significance_code(double p);

/// 4 for "***" down to 0 for "n.s."; throws DomainError for anything else.
int significance_rank(std::string_view code);

struct ContrastRow {
  std::string model;
  std::string dataset;
  std::string contrast;  ///< e.g. "A->B vs notA->B"
  double b = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::string sign_code = "n.s.";
  std::optional<std::string> failure;  ///< set when the fit failed

  bool operator==(const ContrastRow&) const = default;
};

/// "A->B vs notA->B" style label for a (reference, comparison) pair.
std::string contrast_label(Condition reference, Condition comparison);

ContrastRow make_contrast_row(std::string model, std::string dataset, std::string contrast, double b, double se,
                              double t, double p);
ContrastRow failed_contrast_row(std::string model, std::string dataset, std::string contrast, std::string error);

/// "0.21 & 2.76 & **", or "— & — & n.s." for a failed fit.
std::string format_cell(const ContrastRow& row);

struct RenderedTable {
  std::string text;  ///< markdown, two decimals
  std::string csv;   ///< full precision
};

/// Rows are stably ordered by dataset then model; each contrast label becomes
/// a column. Failed fits get a footnote under the table.
RenderedTable render_contrast_table(std::span<const ContrastRow> rows, std::string_view metadata_comment = {});
std::vector<ContrastRow> parse_contrast_csv(std::string_view text);

struct ConditionMean {
  Condition condition = Condition::AffirmedAB;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool degenerate = false;  ///< n == 1: sd reported as 0 and the interval collapses
};

/// Mean, sample sd, n and 95% normal interval per condition, on the log scale
/// when `log_scale`. Throws MissingCondition for a requested condition
/// without rows.
std::vector<ConditionMean> condition_means(const stats::TrialTable& table, bool log_scale,
                                           std::span<const Condition> conditions = kAllConditions);

/// condition,mean,sd,n,ci_low,ci_high,degenerate,scale
std::string emit_condition_means(const stats::TrialTable& table, bool log_scale,
                                 std::span<const Condition> conditions = kAllConditions,
                                 std::string_view metadata_comment = {});

}  // namespace causalread::report
