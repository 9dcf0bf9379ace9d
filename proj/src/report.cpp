#include "causalread/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "causalread/csv.hpp"
#include "causalread/errors.hpp"

namespace causalread::report {

std::string_view significance_code(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(fmt::format("p-value {} outside [0, 1]", p));
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return ".";
  return "n.s.";
}

int significance_rank(std::string_view code) {
  if (code == "***") return 4;
  if (code == "**") return 3;
  if (code == "*") return 2;
  if (code == ".") return 1;
  if (code == "n.s.") return 0;
  throw DomainError(fmt::format("unknown significance code '{}'", code));
}

std::string contrast_label(Condition reference, Condition comparison) {
  return fmt::format("{} vs {}", to_label(reference), to_label(comparison));
}

ContrastRow make_contrast_row(std::string model, std::string dataset, std::string contrast, double b, double se,
                              double t, double p) {
  return {std::move(model), std::move(dataset), std::move(contrast), b, se, t, p,
          std::string(significance_code(p)), std::nullopt};
}

ContrastRow failed_contrast_row(std::string model, std::string dataset, std::string contrast, std::string error) {
  ContrastRow r;
  r.model = std::move(model);
  r.dataset = std::move(dataset);
  r.contrast = std::move(contrast);
  r.b = r.se = r.t = std::nan("");
  r.p = 1.0;
  r.sign_code = "n.s.";
  r.failure = std::move(error);
  return r;
}

namespace {

// Two decimals without a sign on values that round to zero.
std::string two_decimals(double v) {
  std::string s = fmt::format("{:.2f}", v);
  return s == "-0.00" ? "0.00" : s;
}

}  // namespace

std::string format_cell(const ContrastRow& row) {
  if (row.failure) return "— & — & n.s.";
  return fmt::format("{} & {} & {}", two_decimals(row.b), two_decimals(row.t), row.sign_code);
}

RenderedTable render_contrast_table(std::span<const ContrastRow> rows, std::string_view metadata_comment) {
  std::vector<ContrastRow> sorted(rows.begin(), rows.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ContrastRow& a, const ContrastRow& b) {
    return std::tie(a.dataset, a.model) < std::tie(b.dataset, b.model);
  });

  std::vector<std::string> contrasts;
  std::vector<std::pair<std::string, std::string>> groups;  // (dataset, model)
  std::map<std::pair<std::pair<std::string, std::string>, std::string>, const ContrastRow*> cells;
  for (const ContrastRow& r : sorted) {
    if (std::find(contrasts.begin(), contrasts.end(), r.contrast) == contrasts.end()) contrasts.push_back(r.contrast);
    std::pair<std::string, std::string> g{r.dataset, r.model};
    if (groups.empty() || groups.back() != g) groups.push_back(g);
    cells.emplace(std::make_pair(g, r.contrast), &r);
  }

  RenderedTable out;
  std::string& text = out.text;
  text += "| dataset | model |";
  for (const std::string& c : contrasts) text += fmt::format(" {} (b & t & sign) |", c);
  text += "\n|---|---|";
  for (std::size_t i = 0; i < contrasts.size(); ++i) text += "---|";
  text += "\n";
  std::vector<std::string> footnotes;
  for (const auto& g : groups) {
    text += fmt::format("| {} | {} |", g.first, g.second);
    for (const std::string& c : contrasts) {
      auto it = cells.find({g, c});
      if (it == cells.end()) {
        text += " |";
        continue;
      }
      std::string cell = format_cell(*it->second);
      if (it->second->failure) {
        footnotes.push_back(fmt::format("{}/{}/{}: {}", g.first, g.second, c, *it->second->failure));
        cell += fmt::format(" [{}]", footnotes.size());
      }
      text += fmt::format(" {} |", cell);
    }
    text += "\n";
  }
  for (std::size_t i = 0; i < footnotes.size(); ++i) text += fmt::format("\n[{}] fit failed: {}", i + 1, footnotes[i]);
  if (!footnotes.empty()) text += "\n";

  if (!metadata_comment.empty()) out.csv += fmt::format("# {}\n", metadata_comment);
  out.csv += csv::row({"model", "dataset", "contrast", "b", "se", "t", "p", "sign_code", "failure"});
  for (const ContrastRow& r : sorted) {
    out.csv += csv::row({r.model, r.dataset, r.contrast, csv::number(r.b), csv::number(r.se), csv::number(r.t),
                         csv::number(r.p), r.sign_code, r.failure.value_or("")});
  }
  return out;
}

namespace {

double parse_number(const std::string& s) {
  if (s == "NA") return std::nan("");
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(fmt::format("'{}' is not a number", s));
  return v;
}

}  // namespace

std::vector<ContrastRow> parse_contrast_csv(std::string_view text) {
  const csv::Table t = csv::parse(text);
  const std::size_t c_model = t.column("model"), c_dataset = t.column("dataset"), c_contrast = t.column("contrast"),
                    c_b = t.column("b"), c_se = t.column("se"), c_t = t.column("t"), c_p = t.column("p"),
                    c_sign = t.column("sign_code"), c_failure = t.column("failure");
  std::vector<ContrastRow> rows;
  for (const auto& f : t.rows) {
    if (f.size() != t.header.size()) throw ParseError("contrast CSV row with wrong number of fields");
    ContrastRow r;
    r.model = f[c_model];
    r.dataset = f[c_dataset];
    r.contrast = f[c_contrast];
    r.b = parse_number(f[c_b]);
    r.se = parse_number(f[c_se]);
    r.t = parse_number(f[c_t]);
    r.p = parse_number(f[c_p]);
    r.sign_code = f[c_sign];
    significance_rank(r.sign_code);
    if (!f[c_failure].empty()) r.failure = f[c_failure];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ConditionMean> condition_means(const stats::TrialTable& table, bool log_scale,
                                           std::span<const Condition> conditions) {
  std::vector<ConditionMean> out;
  for (Condition c : conditions) {
    std::vector<double> values;
    for (const stats::TrialRow& r : table.rows) {
      if (r.condition != c) continue;
      if (log_scale && !(r.response > 0.0)) {
        throw InvalidTable(fmt::format("log scale needs positive responses, found {}", r.response));
      }
      values.push_back(log_scale ? std::log(r.response) : r.response);
    }
    if (values.empty()) throw MissingCondition(fmt::format("no rows for condition {}", to_label(c)));
    const MeanSd ms = mean_sd(values);
    ConditionMean m{c, ms.mean, ms.sd, ms.n};
    m.degenerate = ms.n == 1;
    if (m.degenerate) m.sd = 0.0;
    const double half = 1.959963984540054 * m.sd / std::sqrt(static_cast<double>(m.n));
    m.ci_low = m.mean - half;
    m.ci_high = m.mean + half;
    out.push_back(m);
  }
  return out;
}

std::string emit_condition_means(const stats::TrialTable& table, bool log_scale, std::span<const Condition> conditions,
                                 std::string_view metadata_comment) {
  std::string out;
  if (!metadata_comment.empty()) out += fmt::format("# {}\n", metadata_comment);
  out += csv::row({"condition", "mean", "sd", "n", "ci_low", "ci_high", "degenerate", "scale"});
  for (const ConditionMean& m : condition_means(table, log_scale, conditions)) {
    out += csv::row({std::string(to_label(m.condition)), csv::number(m.mean), csv::number(m.sd), std::to_string(m.n),
                     csv::number(m.ci_low), csv::number(m.ci_high), m.degenerate ? "1" : "0",
                     log_scale ? "log" : "raw"});
  }
  return out;
}

}  // namespace causalread::report
