#include "causalread/stats/trial_table.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "causalread/csv.hpp"
#include "causalread/errors.hpp"

namespace causalread::stats {

std::string_view to_string(ResponseKind kind) {
  switch (kind) {
    case ResponseKind::RtMsPerChar: return "rt_ms_per_char";
    case ResponseKind::SurprisalNats: return "surprisal_nats";
    case ResponseKind::Likert0to7: return "likert_0_7";
  }
  return "?";
}

ResponseKind parse_response_kind(std::string_view text) {
  for (ResponseKind k : {ResponseKind::RtMsPerChar, ResponseKind::SurprisalNats, ResponseKind::Likert0to7}) {
    if (to_string(k) == text) return k;
  }
  throw ParseError(fmt::format("unknown response_kind '{}'", text));
}

bool TrialTable::has_condition(Condition c) const {
  return std::any_of(rows.begin(), rows.end(), [c](const TrialRow& r) { return r.condition == c; });
}

bool TrialTable::has_subjects() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const TrialRow& r) { return !r.subject_id.empty(); });
}

void validate(const TrialTable& table) {
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const TrialRow& r = table.rows[i];
    if (r.item_id.empty()) throw InvalidTable(fmt::format("row {}: missing item_id", i));
    if (!std::isfinite(r.response)) throw InvalidTable(fmt::format("row {}: response is not finite", i));
    switch (table.response_kind) {
      case ResponseKind::RtMsPerChar:
        if (r.response <= 0.0) throw InvalidTable(fmt::format("row {}: reading time {} is not positive", i, r.response));
        break;
      case ResponseKind::Likert0to7:
        if (r.response < 0.0 || r.response > 7.0 || r.response != std::floor(r.response)) {
          throw InvalidTable(fmt::format("row {}: Likert value {} outside the integers 0..7", i, r.response));
        }
        break;
      case ResponseKind::SurprisalNats: break;
    }
  }
}

TrialTable subset(const TrialTable& table, std::span<const Condition> conditions) {
  TrialTable out{table.response_kind, {}};
  for (const TrialRow& r : table.rows) {
    if (std::find(conditions.begin(), conditions.end(), r.condition) != conditions.end()) out.rows.push_back(r);
  }
  return out;
}

std::string write_trial_table_csv(const TrialTable& table, std::string_view metadata_comment) {
  std::set<std::string> covariates;
  for (const TrialRow& r : table.rows) {
    for (const auto& [name, value] : r.covariates) covariates.insert(name);
  }
  std::string out;
  if (!metadata_comment.empty()) out += fmt::format("# {}\n", metadata_comment);
  std::vector<std::string> header{"subject_id", "item_id", "condition", "response", "response_kind"};
  header.insert(header.end(), covariates.begin(), covariates.end());
  out += csv::row(header);
  for (const TrialRow& r : table.rows) {
    std::vector<std::string> fields{r.subject_id, r.item_id, std::string(to_label(r.condition)), csv::number(r.response),
                                    std::string(to_string(table.response_kind))};
    for (const std::string& c : covariates) {
      auto it = r.covariates.find(c);
      fields.push_back(it == r.covariates.end() ? "NA" : csv::number(it->second));
    }
    out += csv::row(fields);
  }
  return out;
}

namespace {

double parse_double(const std::string& text, std::size_t line, std::string_view column) {
  if (text == "NA") return std::nan("");
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(fmt::format("row {}, column {}: '{}' is not a number", line, column, text));
  }
  return v;
}

}  // namespace

TrialTable parse_trial_table_csv(std::string_view text) {
  const csv::Table t = csv::parse(text);
  const std::size_t c_subject = t.column("subject_id");
  const std::size_t c_item = t.column("item_id");
  const std::size_t c_condition = t.column("condition");
  const std::size_t c_response = t.column("response");
  const std::size_t c_kind = t.column("response_kind");
  std::vector<std::pair<std::size_t, std::string>> covariates;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i != c_subject && i != c_item && i != c_condition && i != c_response && i != c_kind) {
      covariates.emplace_back(i, t.header[i]);
    }
  }
  TrialTable table;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    if (f.size() != t.header.size()) {
      throw ParseError(fmt::format("row {}: expected {} fields, found {}", i + 1, t.header.size(), f.size()));
    }
    const ResponseKind kind = parse_response_kind(f[c_kind]);
    if (i == 0) {
      table.response_kind = kind;
    } else if (kind != table.response_kind) {
      throw InvalidTable(fmt::format("row {}: response_kind differs from the first row", i + 1));
    }
    TrialRow r;
    r.subject_id = f[c_subject];
    r.item_id = f[c_item];
    r.condition = parse_condition(f[c_condition]);
    r.response = parse_double(f[c_response], i + 1, "response");
    for (const auto& [idx, name] : covariates) {
      if (f[idx] != "NA") r.covariates[name] = parse_double(f[idx], i + 1, name);
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace causalread::stats
