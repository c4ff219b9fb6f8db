#pragma once

// Campaign telemetry: derived metrics, weekly/daily/creative trend series,
// the analysis prompt and parsing of recommended actions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/llm_gateway.hpp"
#include "mindfuse/util/csv.hpp"
#include "mindfuse/util/date.hpp"
#include "mindfuse/util/numeric.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse {

struct RawTelemetryRow {
  Date date;
  std::string creative_id;
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::uint64_t lpv = 0;
  std::uint64_t results = 0;
  double spend = 0.0;
  std::uint64_t reach = 0;

  void validate() const {
    if (clicks > impressions) throw Error(ErrorCode::kInvalidArgument, "clicks > impressions");
    if (reach > impressions) throw Error(ErrorCode::kInvalidArgument, "reach > impressions");
    if (!(spend >= 0.0) || !std::isfinite(spend)) {
      throw Error(ErrorCode::kInvalidArgument, "spend must be >= 0");
    }
  }

  friend bool operator==(const RawTelemetryRow&, const RawTelemetryRow&) = default;
};

inline const std::vector<std::string>& telemetry_header() {
  static const std::vector<std::string> h{"date", "creative_id", "impressions", "clicks",
                                          "lpv",  "results",     "spend",       "reach"};
  return h;
}

inline std::vector<RawTelemetryRow> read_telemetry(std::istream& in) {
  const auto table = csv::read(in);
  std::vector<std::size_t> col;
  for (const auto& name : telemetry_header()) col.push_back(table.column(name));
  std::vector<RawTelemetryRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    const auto where = "line " + std::to_string(table.line_numbers[r]) + ": ";
    auto count = [&](std::size_t i) {
      auto v = numeric::parse_int(text::trim(f[col[i]]));
      if (!v || *v < 0) throw Error(ErrorCode::kMalformedLine, where + "bad " + telemetry_header()[i]);
      return static_cast<std::uint64_t>(*v);
    };
    RawTelemetryRow row;
    auto d = Date::parse(text::trim(f[col[0]]));
    if (!d) throw Error(ErrorCode::kMalformedLine, where + "bad date");
    row.date = *d;
    row.creative_id = text::trim(f[col[1]]);
    if (row.creative_id.empty()) throw Error(ErrorCode::kMalformedLine, where + "missing creative_id");
    row.impressions = count(2);
    row.clicks = count(3);
    row.lpv = count(4);
    row.results = count(5);
    auto spend = numeric::parse_double(text::trim(f[col[6]]));
    if (!spend) throw Error(ErrorCode::kMalformedLine, where + "bad spend");
    row.spend = *spend;
    row.reach = count(7);
    try {
      row.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedLine, where + e.detail());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<RawTelemetryRow> read_telemetry(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + file.string());
  return read_telemetry(in);
}

inline std::string telemetry_csv(const std::vector<RawTelemetryRow>& rows) {
  std::string out = text::join(telemetry_header(), ",") + "\n";
  for (const auto& r : rows) {
    out += r.date.str() + "," + csv::escape(r.creative_id) + "," + std::to_string(r.impressions) +
           "," + std::to_string(r.clicks) + "," + std::to_string(r.lpv) + "," +
           std::to_string(r.results) + "," + numeric::fixed(r.spend, 2) + "," +
           std::to_string(r.reach) + "\n";
  }
  return out;
}

/// Sums for one period plus the derived ratios; a ratio whose denominator is
/// zero is left empty.
struct MetricRow {
  std::string period_key;
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::uint64_t lpv = 0;
  std::uint64_t results = 0;
  std::uint64_t reach = 0;
  std::int64_t spend_micros = 0;  // exact sum; spend is derived from it
  double spend = 0.0;
  std::optional<double> frequency;
  std::optional<double> cpr;
  std::optional<double> cpm;
  std::optional<double> ctr;
  std::optional<double> cr_click_to_view;
  std::optional<double> cr_click_to_result;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Metrics carried in trend series, in table order.
inline const std::vector<std::string>& trend_metrics() {
  static const std::vector<std::string> m{"reach", "frequency", "results", "cpr",
                                          "spend", "cpm",       "ctr",     "cr_click_to_view",
                                          "cr_click_to_result"};
  return m;
}

inline std::optional<double> metric_value(const MetricRow& r, std::string_view name) {
  if (name == "reach") return static_cast<double>(r.reach);
  if (name == "frequency") return r.frequency;
  if (name == "results") return static_cast<double>(r.results);
  if (name == "cpr") return r.cpr;
  if (name == "spend") return r.spend;
  if (name == "cpm") return r.cpm;
  if (name == "ctr") return r.ctr;
  if (name == "cr_click_to_view") return r.cr_click_to_view;
  if (name == "cr_click_to_result") return r.cr_click_to_result;
  if (name == "impressions") return static_cast<double>(r.impressions);
  if (name == "clicks") return static_cast<double>(r.clicks);
  if (name == "lpv") return static_cast<double>(r.lpv);
  throw Error(ErrorCode::kInvalidArgument, "unknown metric " + std::string(name));
}

namespace telemetry_detail {

inline void finish(MetricRow& m) {
  auto ratio = [](double num, std::uint64_t den) {
    return numeric::safe_div(num, static_cast<double>(den));
  };
  m.spend = static_cast<double>(m.spend_micros) / 1e6;
  m.frequency = ratio(static_cast<double>(m.impressions), m.reach);
  m.cpr = ratio(m.spend, m.results);
  m.cpm = ratio(1000.0 * m.spend, m.impressions);
  m.ctr = ratio(static_cast<double>(m.clicks), m.impressions);
  m.cr_click_to_view = ratio(static_cast<double>(m.lpv), m.clicks);
  m.cr_click_to_result = ratio(static_cast<double>(m.results), m.clicks);
}

}  // namespace telemetry_detail

/// Sums the group then derives the ratios. Reach is summed across rows (it
/// over-counts people reached in more than one row). Spend is summed in
/// millionths so the total does not depend on summation order.
inline MetricRow derive_metrics(const std::vector<RawTelemetryRow>& group,
                                std::string period_key = {}) {
  if (group.empty()) throw Error(ErrorCode::kEmptyInput, "empty metric group");
  MetricRow m;
  m.period_key = std::move(period_key);
  for (const auto& r : group) {
    m.impressions += r.impressions;
    m.clicks += r.clicks;
    m.lpv += r.lpv;
    m.results += r.results;
    m.reach += r.reach;
    m.spend_micros += std::llround(r.spend * 1e6);
  }
  telemetry_detail::finish(m);
  return m;
}

inline nlohmann::json to_json(const MetricRow& m) {
  nlohmann::json j{{"period_key", m.period_key}, {"impressions", m.impressions},
                   {"clicks", m.clicks},         {"lpv", m.lpv},
                   {"results", m.results},       {"reach", m.reach},
                   {"spend", m.spend}};
  for (const char* name : {"frequency", "cpr", "cpm", "ctr", "cr_click_to_view", "cr_click_to_result"}) {
    auto v = metric_value(m, name);
    j[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  }
  return j;
}

enum class Granularity { kWeekly, kDaily, kCreative };

inline std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::kWeekly: return "weekly";
    case Granularity::kDaily: return "daily";
    case Granularity::kCreative: return "creative";
  }
  return "weekly";
}

inline Granularity parse_granularity(std::string_view s) {
  if (s == "weekly") return Granularity::kWeekly;
  if (s == "daily") return Granularity::kDaily;
  if (s == "creative") return Granularity::kCreative;
  throw Error(ErrorCode::kInvalidArgument, "unknown granularity " + std::string(s));
}

using PctChanges = std::map<std::string, std::optional<double>>;

struct TrendSeries {
  Granularity granularity = Granularity::kWeekly;
  std::vector<MetricRow> points;
  std::vector<PctChanges> pct_changes;  // points.size() - 1 entries, empty for creative

  friend bool operator==(const TrendSeries&, const TrendSeries&) = default;
};

/// out[i] = 100 * (x[i+1] - x[i]) / x[i]; empty when x[i] is zero or either
/// side is undefined.
inline std::vector<std::optional<double>> pct_change(const std::vector<std::optional<double>>& x) {
  if (x.empty()) throw Error(ErrorCode::kEmptySeries, "pct_change of empty series");
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    if (!x[i] || !x[i + 1] || *x[i] == 0.0) {
      out.emplace_back();
    } else {
      out.emplace_back(100.0 * (*x[i + 1] - *x[i]) / *x[i]);
    }
  }
  return out;
}

inline std::vector<std::optional<double>> pct_change(const std::vector<double>& x) {
  return pct_change(std::vector<std::optional<double>>(x.begin(), x.end()));
}

namespace telemetry_detail {

inline std::string bucket_key(const RawTelemetryRow& r, Granularity g) {
  switch (g) {
    case Granularity::kWeekly: return r.date.iso_week_key();
    case Granularity::kDaily: return r.date.str();
    case Granularity::kCreative: return r.creative_id;
  }
  return {};
}

inline TrendSeries with_changes(Granularity g, std::vector<MetricRow> points) {
  TrendSeries s;
  s.granularity = g;
  s.points = std::move(points);
  if (g == Granularity::kCreative) return s;
  s.pct_changes.resize(s.points.size() - 1);
  for (const auto& name : trend_metrics()) {
    std::vector<std::optional<double>> values;
    for (const auto& p : s.points) values.push_back(metric_value(p, name));
    const auto changes = pct_change(values);
    for (std::size_t i = 0; i < changes.size(); ++i) s.pct_changes[i][name] = changes[i];
  }
  return s;
}

inline void add_sums(MetricRow& into, const MetricRow& from) {
  into.impressions += from.impressions;
  into.clicks += from.clicks;
  into.lpv += from.lpv;
  into.results += from.results;
  into.reach += from.reach;
  into.spend_micros += from.spend_micros;
}

}  // namespace telemetry_detail

/// Buckets by ISO week ("2023-W41"), by date, or by creative_id; points are
/// ordered by key.
inline TrendSeries aggregate(const std::vector<RawTelemetryRow>& rows, Granularity g) {
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "no telemetry rows");
  std::map<std::string, std::vector<RawTelemetryRow>> buckets;
  for (const auto& r : rows) buckets[telemetry_detail::bucket_key(r, g)].push_back(r);
  std::vector<MetricRow> points;
  for (const auto& [key, group] : buckets) points.push_back(derive_metrics(group, key));
  return telemetry_detail::with_changes(g, std::move(points));
}

/// Re-buckets a daily series to weekly by summing the per-day sums.
inline TrendSeries rebucket_weekly(const TrendSeries& daily) {
  if (daily.granularity != Granularity::kDaily) {
    throw Error(ErrorCode::kInvalidArgument, "rebucket_weekly needs a daily series");
  }
  if (daily.points.empty()) throw Error(ErrorCode::kEmptySeries, "empty series");
  std::map<std::string, MetricRow> weeks;
  for (const auto& p : daily.points) {
    auto d = Date::parse(p.period_key);
    if (!d) throw Error(ErrorCode::kInvalidArgument, "bad daily key " + p.period_key);
    auto& w = weeks[d->iso_week_key()];
    w.period_key = d->iso_week_key();
    telemetry_detail::add_sums(w, p);
  }
  std::vector<MetricRow> points;
  for (auto& [key, w] : weeks) {
    telemetry_detail::finish(w);
    points.push_back(std::move(w));
  }
  return telemetry_detail::with_changes(Granularity::kWeekly, std::move(points));
}

inline nlohmann::json to_json(const TrendSeries& s) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : s.points) points.push_back(to_json(p));
  nlohmann::json changes = nlohmann::json::array();
  for (const auto& c : s.pct_changes) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k, v] : c) o[k] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    changes.push_back(o);
  }
  return {{"granularity", to_string(s.granularity)}, {"points", points}, {"pct_changes", changes}};
}

/// (min, max) over the defined values of each metric.
inline std::map<std::string, std::pair<double, double>> summarize_ranges(
    const TrendSeries& s, const std::vector<std::string>& metrics) {
  if (s.points.empty()) throw Error(ErrorCode::kEmptySeries, "empty series");
  std::map<std::string, std::pair<double, double>> out;
  for (const auto& name : metrics) {
    std::optional<std::pair<double, double>> range;
    for (const auto& p : s.points) {
      auto v = metric_value(p, name);
      if (!v) continue;
      if (!range) {
        range.emplace(*v, *v);
      } else {
        range->first = std::min(range->first, *v);
        range->second = std::max(range->second, *v);
      }
    }
    if (!range) throw Error(ErrorCode::kAllUndefined, name);
    out[name] = *range;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analysis prompt

/// A creative image resized and encoded for a multimodal prompt.
struct EncodedCreative {
  std::string creative_id;
  int width = 0;
  int height = 0;
  std::string mime = "image/png";
  std::string base64;

  std::string data_uri() const { return "data:" + mime + ";base64," + base64; }

  friend bool operator==(const EncodedCreative&, const EncodedCreative&) = default;
};

inline const std::vector<std::string>& default_guiding_questions() {
  static const std::vector<std::string> q{
      "How did CPR and Spend evolve?",
      "What were the corresponding changes in CTR, CPM, and CR?",
      "Were these changes causally connected?",
      "Which secondary metrics influenced CPR the most?",
      "What creative-level insights explain these shifts?",
      "What actions should be taken?"};
  return q;
}

inline constexpr const char* kDefaultKnowledge =
    "Metric definitions:\n"
    "- Reach: unique individuals exposed to the ad.\n"
    "- Frequency: average impressions per person reached (impressions / reach).\n"
    "- Results: conversions attributed to the campaign.\n"
    "- CPR (cost per result): spend / results. Conversion efficiency; lower is better.\n"
    "- Spend: amount spent in the period.\n"
    "- CPM: cost per 1,000 impressions (1000 * spend / impressions).\n"
    "- CTR: ad engagement rate (clicks / impressions).\n"
    "- CR click-to-view: share of clickers who land on the page (landing page views / clicks).\n"
    "- CR click-to-result: share of clickers who convert (results / clicks).\n"
    "Undefined values (zero denominators) are shown as n/a.";

inline constexpr const char* kDefaultRole =
    "You are a senior performance marketing lead. Deliver decisive, insight-driven guidance "
    "and avoid hedging language.";

inline constexpr const char* kDefaultTask =
    "Minimize cost per result (CPR). Review the trends in CPR and Spend alongside CTR, CPM and CR "
    "and identify the strategic shifts they call for. Answer the guiding questions, then end "
    "with your recommended actions as one JSON object with the lists kind (budget, creative, "
    "targeting, pacing or monitoring), description, confidence (low, medium or high) and "
    "evidence (metric names joined by ';').";

struct PromptTexts {
  std::string knowledge = kDefaultKnowledge;
  std::string role = kDefaultRole;
  std::string task = kDefaultTask;
  std::vector<std::string> guiding_questions = default_guiding_questions();

  void validate() const {
    if (text::trim(knowledge).empty() || text::trim(role).empty() || text::trim(task).empty()) {
      throw Error(ErrorCode::kInvalidArgument, "knowledge, role and task must be non-empty");
    }
    if (guiding_questions.size() != 6) {
      throw Error(ErrorCode::kInvalidArgument,
                  "expected 6 guiding questions, got " + std::to_string(guiding_questions.size()));
    }
    for (const auto& q : guiding_questions) {
      if (text::trim(q).empty()) throw Error(ErrorCode::kInvalidArgument, "empty guiding question");
    }
  }
};

inline constexpr const char* kAnalysisTemplate = "telemetry_analysis";
inline constexpr const char* kRecommendationSchema = "recommendations";

struct AnalysisPrompt {
  std::vector<std::pair<std::string, std::string>> sections;  // name, body
  std::vector<EncodedCreative> image_payloads;

  /// Bindings for the telemetry_analysis template, one per section.
  llm::Bindings bindings() const {
    static const char* keys[] = {"knowledge", "role", "task", "guiding_questions", "data"};
    llm::Bindings b;
    for (std::size_t i = 0; i < sections.size() && i < 5; ++i) b[keys[i]] = sections[i].second;
    return b;
  }

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < sections.size(); ++i) {
      if (i) out.push_back('\n');
      out += "## " + sections[i].first + "\n" + sections[i].second + "\n";
    }
    return out;
  }
};

namespace telemetry_detail {

inline std::string pct_cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  const double r = numeric::round_half_up(*v, 1);
  return (r > 0 ? "+" : "") + numeric::fixed(r == 0.0 ? 0.0 : r, 1) + "%";
}

inline std::string ratio_pct_cell(const std::optional<double>& v) {
  return v ? numeric::fixed(*v * 100.0, 2) + "%" : "n/a";
}

/// First column left-aligned, the rest right-aligned, two spaces between.
inline std::string fixed_width(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string line;
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      const auto& cell = rows[i][c];
      const std::string pad(width[c] - cell.size(), ' ');
      if (c) line += "  ";
      line += c == 0 ? cell + pad : pad + cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    if (i) out.push_back('\n');
    out += line;
  }
  return out;
}

}  // namespace telemetry_detail

/// Fixed-width metric table followed by the period-over-period changes.
inline std::string render_data_table(const TrendSeries& s) {
  using telemetry_detail::ratio_pct_cell;
  std::vector<std::vector<std::string>> rows{{"Period", "Reach", "Frequency", "Results", "CPR",
                                              "Spend", "CPM", "CTR", "CR view", "CR result"}};
  for (const auto& p : s.points) {
    rows.push_back({p.period_key, std::to_string(p.reach), numeric::fixed_or_na(p.frequency, 2),
                    std::to_string(p.results), numeric::fixed_or_na(p.cpr, 2),
                    numeric::fixed(p.spend, 2), numeric::fixed_or_na(p.cpm, 2),
                    ratio_pct_cell(p.ctr), ratio_pct_cell(p.cr_click_to_view),
                    ratio_pct_cell(p.cr_click_to_result)});
  }
  std::string out = "Granularity: " + to_string(s.granularity) + "\n\n" +
                    telemetry_detail::fixed_width(rows);
  if (!s.pct_changes.empty()) {
    std::vector<std::vector<std::string>> changes{{"Change", "Reach", "Frequency", "Results", "CPR",
                                                   "Spend", "CPM", "CTR", "CR view", "CR result"}};
    for (std::size_t i = 0; i < s.pct_changes.size(); ++i) {
      std::vector<std::string> row{s.points[i + 1].period_key};
      for (const auto& name : trend_metrics()) {
        auto it = s.pct_changes[i].find(name);
        row.push_back(telemetry_detail::pct_cell(it == s.pct_changes[i].end() ? std::nullopt : it->second));
      }
      changes.push_back(std::move(row));
    }
    out += "\n\nPercentage change from the previous period:\n\n" +
           telemetry_detail::fixed_width(changes);
  }
  return out;
}

inline AnalysisPrompt build_analysis_prompt(const TrendSeries& series,
                                            const std::vector<EncodedCreative>& creatives = {},
                                            const PromptTexts& texts = {}) {
  if (series.points.empty()) throw Error(ErrorCode::kEmptySeries, "empty series");
  texts.validate();
  std::string questions;
  for (std::size_t i = 0; i < texts.guiding_questions.size(); ++i) {
    if (i) questions.push_back('\n');
    questions += std::to_string(i + 1) + ". " + text::trim(texts.guiding_questions[i]);
  }
  std::string data = render_data_table(series);
  if (!creatives.empty()) {
    data += "\n\nCreatives attached as images (" + std::to_string(creatives.size()) + "):";
    for (const auto& c : creatives) {
      data += "\n- " + c.creative_id + " (" + std::to_string(c.width) + "x" +
              std::to_string(c.height) + " " + c.mime + ")";
    }
  }
  AnalysisPrompt p;
  p.sections = {{"Knowledge", text::trim(texts.knowledge)},
                {"Role", text::trim(texts.role)},
                {"Task", text::trim(texts.task)},
                {"Guiding Questions", questions},
                {"Data", data}};
  p.image_payloads = creatives;
  return p;
}

// ---------------------------------------------------------------------------
// Recommendations

enum class ActionKind { kBudget, kCreative, kTargeting, kPacing, kMonitoring };
enum class Confidence { kLow, kMedium, kHigh };

inline std::string to_string(ActionKind k) {
  switch (k) {
    case ActionKind::kBudget: return "budget";
    case ActionKind::kCreative: return "creative";
    case ActionKind::kTargeting: return "targeting";
    case ActionKind::kPacing: return "pacing";
    case ActionKind::kMonitoring: return "monitoring";
  }
  return "budget";
}

inline std::optional<ActionKind> parse_action_kind(std::string_view s) {
  const auto t = text::to_lower(text::trim(s));
  if (t == "budget") return ActionKind::kBudget;
  if (t == "creative") return ActionKind::kCreative;
  if (t == "targeting") return ActionKind::kTargeting;
  if (t == "pacing") return ActionKind::kPacing;
  if (t == "monitoring") return ActionKind::kMonitoring;
  return std::nullopt;
}

inline std::string to_string(Confidence c) {
  switch (c) {
    case Confidence::kLow: return "low";
    case Confidence::kMedium: return "medium";
    case Confidence::kHigh: return "high";
  }
  return "low";
}

inline std::optional<Confidence> parse_confidence(std::string_view s) {
  const auto t = text::to_lower(text::trim(s));
  if (t == "low") return Confidence::kLow;
  if (t == "medium") return Confidence::kMedium;
  if (t == "high") return Confidence::kHigh;
  return std::nullopt;
}

struct RecommendedAction {
  ActionKind kind = ActionKind::kMonitoring;
  std::string description;
  Confidence confidence = Confidence::kLow;
  std::vector<std::string> evidence_refs;

  friend bool operator==(const RecommendedAction&, const RecommendedAction&) = default;
};

inline nlohmann::json to_json(const RecommendedAction& a) {
  return {{"kind", to_string(a.kind)},
          {"description", a.description},
          {"confidence", to_string(a.confidence)},
          {"evidence_refs", a.evidence_refs}};
}

/// Keyword classes, checked in this order against word prefixes.
inline std::optional<ActionKind> classify_action(std::string_view line) {
  const auto tokens = text::tokenize(line);
  auto has_prefix = [&](std::initializer_list<std::string_view> keys) {
    for (const auto& t : tokens) {
      for (auto k : keys) {
        if (t.rfind(k, 0) == 0) return true;
      }
    }
    return false;
  };
  if (has_prefix({"budget", "bid"})) return ActionKind::kBudget;
  if (has_prefix({"creative", "visual"}) || text::contains_ci(line, "a/b")) return ActionKind::kCreative;
  if (has_prefix({"audience", "retarget"})) return ActionKind::kTargeting;
  if (has_prefix({"pacing", "schedul"})) return ActionKind::kPacing;
  if (has_prefix({"monitor", "track"})) return ActionKind::kMonitoring;
  return std::nullopt;
}

/// Metric names mentioned in a line.
inline std::vector<std::string> mentioned_metrics(std::string_view line) {
  static const std::vector<std::pair<std::string, std::string>> names{
      {"cpr", "cpr"},     {"ctr", "ctr"},         {"cpm", "cpm"},
      {"cr", "cr"},       {"spend", "spend"},     {"reach", "reach"},
      {"frequency", "frequency"}, {"results", "results"}};
  std::set<std::string> tokens;
  for (auto& t : text::tokenize(line)) tokens.insert(std::move(t));
  std::vector<std::string> out;
  for (const auto& [token, metric] : names) {
    if (tokens.count(token)) out.push_back(metric);
  }
  return out;
}

namespace telemetry_detail {

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  const auto& v = j[key];
  if (v.is_string()) {
    for (auto& part : text::split(v.get<std::string>(), ';')) {
      auto t = text::trim(part);
      if (!t.empty()) out.push_back(std::move(t));
    }
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (e.is_string()) out.push_back(e.get<std::string>());
    }
  }
  return out;
}

inline std::optional<RecommendedAction> make_action(const std::string& kind,
                                                    const std::string& description,
                                                    const std::string& confidence,
                                                    std::vector<std::string> evidence) {
  RecommendedAction a;
  a.description = text::normalize_whitespace(description);
  if (a.description.empty()) return std::nullopt;
  auto k = parse_action_kind(kind);
  if (!k) k = classify_action(kind + " " + a.description);
  if (!k) return std::nullopt;
  a.kind = *k;
  a.confidence = parse_confidence(confidence).value_or(Confidence::kLow);
  for (auto& e : evidence) {
    auto t = text::to_lower(text::trim(e));
    if (!t.empty()) a.evidence_refs.push_back(std::move(t));
  }
  return a;
}

/// Structured forms: {"actions":[{kind,description,confidence,evidence}]} or
/// parallel lists {"kind":[...], "description":[...], "confidence":[...],
/// "evidence":[...]} where each evidence entry is ';'-joined.
inline std::vector<RecommendedAction> structured_actions(const nlohmann::json& obj) {
  std::vector<RecommendedAction> out;
  if (obj.contains("actions") && obj["actions"].is_array()) {
    for (const auto& a : obj["actions"]) {
      if (!a.is_object()) continue;
      auto action = make_action(a.value("kind", ""), a.value("description", ""),
                                a.value("confidence", ""), string_list(a, "evidence"));
      if (action) out.push_back(std::move(*action));
    }
    return out;
  }
  const auto kinds = string_list(obj, "kind");
  const auto descriptions = obj.contains("description") && obj["description"].is_array()
                                ? string_list(obj, "description")
                                : std::vector<std::string>{};
  const auto confidences = obj.contains("confidence") && obj["confidence"].is_array()
                               ? string_list(obj, "confidence")
                               : std::vector<std::string>{};
  std::vector<std::string> evidence;
  if (obj.contains("evidence") && obj["evidence"].is_array()) {
    for (const auto& e : obj["evidence"]) evidence.push_back(e.is_string() ? e.get<std::string>() : "");
  }
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    std::vector<std::string> refs;
    if (i < evidence.size()) {
      for (auto& part : text::split(evidence[i], ';')) refs.push_back(part);
    }
    auto action = make_action(i < kinds.size() ? kinds[i] : "", descriptions[i],
                              i < confidences.size() ? confidences[i] : "", std::move(refs));
    if (action) out.push_back(std::move(*action));
  }
  return out;
}

inline std::string strip_bullet(std::string line) {
  line = text::trim(line);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
    line = line.substr(i + 1);
  } else if (line.rfind("- ", 0) == 0 || line.rfind("* ", 0) == 0) {
    line = line.substr(2);
  } else if (line.rfind("\xE2\x80\xA2", 0) == 0) {  // U+2022 bullet
    line = line.substr(3);
  }
  return text::trim(line);
}

}  // namespace telemetry_detail

/// Structured object first; otherwise each sentence of each line becomes an
/// action if it matches a keyword class, with low confidence.
inline std::vector<RecommendedAction> parse_recommendations(const std::string& llm_text) {
  if (text::trim(llm_text).empty()) throw Error(ErrorCode::kNoActionsFound, "empty text");
  if (auto obj = llm::extract_first_object(llm_text)) {
    auto actions = telemetry_detail::structured_actions(*obj);
    if (!actions.empty()) return actions;
  }
  std::vector<RecommendedAction> out;
  std::istringstream in(llm_text);
  std::string line;
  while (std::getline(in, line)) {
    const auto body = telemetry_detail::strip_bullet(line);
    if (body.empty() || body[0] == '#' || body[0] == '{') continue;
    for (const auto& sentence : text::split_sentences(body)) {
      auto kind = classify_action(sentence);
      if (!kind) continue;
      RecommendedAction a;
      a.kind = *kind;
      a.description = text::normalize_whitespace(sentence);
      a.confidence = Confidence::kLow;
      a.evidence_refs = mentioned_metrics(sentence);
      out.push_back(std::move(a));
    }
  }
  if (out.empty()) throw Error(ErrorCode::kNoActionsFound, "no actionable lines");
  return out;
}

inline std::string export_actions(const std::vector<RecommendedAction>& actions) {
  std::string out;
  for (const auto& a : actions) out += to_json(a).dump() + "\n";
  return out;
}

struct Analysis {
  AnalysisPrompt prompt;
  std::string raw_text;
  std::vector<RecommendedAction> actions;
  std::string provider_id;
};

/// Sends the prompt through the gateway and parses the reply.
inline Analysis analyze_campaign(const llm::Gateway& gateway, const AnalysisPrompt& prompt) {
  llm::CompletionRequest req;
  req.template_id = kAnalysisTemplate;
  req.schema_id = kRecommendationSchema;
  req.bindings = prompt.bindings();
  for (const auto& c : prompt.image_payloads) req.image_refs.push_back(c.data_uri());
  auto result = gateway.complete_structured(req, [](const nlohmann::json& j) {
    return telemetry_detail::structured_actions(j).empty()
               ? std::optional<std::string>("no valid actions")
               : std::nullopt;
  });
  Analysis a;
  a.prompt = prompt;
  a.raw_text = result.raw_text;
  a.provider_id = result.provider_id;
  a.actions = result.parsed ? telemetry_detail::structured_actions(*result.parsed)
                            : parse_recommendations(result.raw_text);
  return a;
}

}  // namespace mindfuse
