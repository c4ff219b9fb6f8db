#pragma once

// Attention-heatmap regions, cumulative ablation plans and degradation
// reports comparing ablated variants against the original creative.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/util/csv.hpp"
#include "mindfuse/util/numeric.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse {

struct AttentionHeatmap {
  std::string creative_id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> weights;  // row-major, normalized to [0, 1]

  double at(std::size_t x, std::size_t y) const { return weights[y * width + x]; }

  friend bool operator==(const AttentionHeatmap&, const AttentionHeatmap&) = default;
};

inline nlohmann::json to_json(const AttentionHeatmap& h) {
  return {{"creative_id", h.creative_id},
          {"width", h.width},
          {"height", h.height},
          {"weights", h.weights}};
}

/// Validates and max-normalizes a heatmap object
/// {creative_id, width, height, weights}.
inline AttentionHeatmap heatmap_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "heatmap must be an object");
  AttentionHeatmap h;
  try {
    h.creative_id = j.at("creative_id").get<std::string>();
    h.width = j.at("width").get<std::size_t>();
    h.height = j.at("height").get<std::size_t>();
    h.weights = j.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("heatmap: ") + e.what());
  }
  if (h.width == 0 || h.height == 0) {
    throw Error(ErrorCode::kShapeMismatch, "width and height must be positive");
  }
  if (h.weights.size() != h.width * h.height) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(h.weights.size()) + " weights for " +
                                               std::to_string(h.width) + "x" +
                                               std::to_string(h.height));
  }
  double max = 0.0;
  for (double w : h.weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "weights must be finite and >= 0");
    }
    max = std::max(max, w);
  }
  if (max <= 0.0) throw Error(ErrorCode::kAllZero, h.creative_id);
  for (double& w : h.weights) w /= max;
  return h;
}

inline AttentionHeatmap load_heatmap(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + file.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "heatmap is not JSON");
  return heatmap_from_json(j);
}

struct SalientRegion {
  std::string region_id;
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive cell bounds
  double mass = 0.0;
  double peak = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (x, y)
};

inline nlohmann::json to_json(const SalientRegion& r) {
  return {{"region_id", r.region_id},
          {"bbox", {r.x0, r.y0, r.x1, r.y1}},
          {"mass", r.mass},
          {"peak", r.peak},
          {"cell_count", r.cells.size()}};
}

/// 4-connected components of cells with weight >= threshold, by descending
/// mass (ties by y0 then x0). Region ids are "r1", "r2", ... in that order.
inline std::vector<SalientRegion> rank_regions(const AttentionHeatmap& h, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must be in (0, 1)");
  }
  std::vector<SalientRegion> regions;
  std::vector<bool> seen(h.weights.size(), false);
  std::vector<std::size_t> stack;
  for (std::size_t y = 0; y < h.height; ++y) {
    for (std::size_t x = 0; x < h.width; ++x) {
      const auto start = y * h.width + x;
      if (seen[start] || h.weights[start] < threshold) continue;
      SalientRegion r;
      r.x0 = r.x1 = x;
      r.y0 = r.y1 = y;
      seen[start] = true;
      stack.assign(1, start);
      while (!stack.empty()) {
        const auto cell = stack.back();
        stack.pop_back();
        const auto cx = cell % h.width;
        const auto cy = cell / h.width;
        const double w = h.weights[cell];
        r.cells.emplace_back(cx, cy);
        r.mass += w;
        r.peak = std::max(r.peak, w);
        r.x0 = std::min(r.x0, cx);
        r.x1 = std::max(r.x1, cx);
        r.y0 = std::min(r.y0, cy);
        r.y1 = std::max(r.y1, cy);
        auto visit = [&](std::size_t nx, std::size_t ny) {
          const auto n = ny * h.width + nx;
          if (!seen[n] && h.weights[n] >= threshold) {
            seen[n] = true;
            stack.push_back(n);
          }
        };
        if (cx > 0) visit(cx - 1, cy);
        if (cx + 1 < h.width) visit(cx + 1, cy);
        if (cy > 0) visit(cx, cy - 1);
        if (cy + 1 < h.height) visit(cx, cy + 1);
      }
      std::sort(r.cells.begin(), r.cells.end(),
                [](const auto& a, const auto& b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });
      regions.push_back(std::move(r));
    }
  }
  std::stable_sort(regions.begin(), regions.end(), [](const auto& a, const auto& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    return std::tie(a.y0, a.x0) < std::tie(b.y0, b.x0);
  });
  for (std::size_t i = 0; i < regions.size(); ++i) regions[i].region_id = "r" + std::to_string(i + 1);
  return regions;
}

struct VariantSpec {
  std::string variant_id;
  std::vector<std::string> removed_regions;
  std::vector<std::string> removed_elements;

  friend bool operator==(const VariantSpec&, const VariantSpec&) = default;
};

inline nlohmann::json to_json(const VariantSpec& v) {
  return {{"variant_id", v.variant_id},
          {"removed_regions", v.removed_regions},
          {"removed_elements", v.removed_elements}};
}

/// Variant i removes the top-i regions cumulatively, up to max_variants.
/// Elements are labelled from `element_labels`, falling back to the region id.
inline std::vector<VariantSpec> plan_ablation(
    const std::vector<SalientRegion>& regions,
    const std::map<std::string, std::string>& element_labels, std::size_t max_variants) {
  std::vector<VariantSpec> plan;
  VariantSpec acc;
  for (std::size_t i = 0; i < regions.size() && i < max_variants; ++i) {
    const auto& id = regions[i].region_id;
    acc.removed_regions.push_back(id);
    auto it = element_labels.find(id);
    acc.removed_elements.push_back(it != element_labels.end() ? it->second : id);
    acc.variant_id = "v" + std::to_string(i + 1);
    plan.push_back(acc);
  }
  return plan;
}

struct VariantStats {
  std::string variant_id;
  std::string label;
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::uint64_t lpv = 0;
  std::uint64_t results = 0;
  std::vector<std::string> removed_elements;

  void validate() const {
    if (clicks > impressions) throw Error(ErrorCode::kInvalidArgument, variant_id + ": clicks > impressions");
    if (lpv > clicks) throw Error(ErrorCode::kInvalidArgument, variant_id + ": lpv > clicks");
    if (results > clicks) throw Error(ErrorCode::kInvalidArgument, variant_id + ": results > clicks");
  }
};

/// Reads variant_id,label,impressions,clicks,lpv,results,removed_elements
/// rows; removed_elements is ';'-joined.
inline std::vector<VariantStats> read_variant_stats(std::istream& in) {
  const auto table = csv::read(in);
  const auto c_id = table.column("variant_id");
  const auto c_label = table.column("label");
  const auto c_imp = table.column("impressions");
  const auto c_clicks = table.column("clicks");
  const auto c_lpv = table.column("lpv");
  const auto c_results = table.column("results");
  const auto c_removed = table.column("removed_elements");
  std::vector<VariantStats> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto count = [&](std::size_t c) {
      auto v = numeric::parse_int(text::trim(row[c]));
      if (!v || *v < 0) {
        throw Error(ErrorCode::kMalformedLine, "line " + std::to_string(table.line_numbers[r]) +
                                                   ": bad " + table.header[c]);
      }
      return static_cast<std::uint64_t>(*v);
    };
    VariantStats s;
    s.variant_id = text::trim(row[c_id]);
    s.label = text::trim(row[c_label]);
    s.impressions = count(c_imp);
    s.clicks = count(c_clicks);
    s.lpv = count(c_lpv);
    s.results = count(c_results);
    for (auto& e : text::split(row[c_removed], ';')) {
      auto t = text::trim(e);
      if (!t.empty()) s.removed_elements.push_back(std::move(t));
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<VariantStats> read_variant_stats(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + file.string());
  return read_variant_stats(in);
}

/// Splits a combined stats file into (original, variants). The original is
/// the first row labelled "original", else the first row.
inline std::pair<VariantStats, std::vector<VariantStats>> split_original(
    std::vector<VariantStats> all) {
  if (all.empty()) throw Error(ErrorCode::kEmptyInput, "no variant rows");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (text::to_lower(all[i].label) == "original") {
      idx = i;
      break;
    }
  }
  VariantStats original = all[idx];
  all.erase(all.begin() + static_cast<std::ptrdiff_t>(idx));
  return {std::move(original), std::move(all)};
}

struct FunnelRates {
  double ctr = 0.0;
  double lpv_per_click = 0.0;
  double result_per_click = 0.0;
};

inline FunnelRates funnel_rates(const VariantStats& s) {
  if (s.impressions == 0) throw Error(ErrorCode::kZeroImpressions, s.variant_id);
  FunnelRates f;
  f.ctr = static_cast<double>(s.clicks) / static_cast<double>(s.impressions);
  if (s.clicks > 0) {
    f.lpv_per_click = static_cast<double>(s.lpv) / static_cast<double>(s.clicks);
    f.result_per_click = static_cast<double>(s.results) / static_cast<double>(s.clicks);
  }
  return f;
}

struct AblationRow {
  std::string label;
  double lpv_ratio = 0.0;
  double ctr_lpv_ratio = 0.0;
  double ctr_ratio = 0.0;
  double f1 = 0.0;
};

struct AblationReport {
  AblationRow original;
  std::vector<AblationRow> rows;  // one per variant, input order
  AblationRow overall;
};

inline double harmonic_mean(double a, double b) {
  return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
}

/// f1(ctr_lpv_ratio, ctr_ratio), both unrounded.
using F1Formula = std::function<double(double, double)>;

/// Per variant: lpv_ratio on LPV/impressions, ctr_ratio on clicks/impressions,
/// ctr_lpv_ratio on LPV/clicks, each relative to the original; f1 is the
/// harmonic mean of ctr_lpv_ratio and ctr_ratio. Values are rounded to three
/// decimals; the overall row is the mean of the rounded variant values.
inline AblationReport degradation_report(const VariantStats& original,
                                         const std::vector<VariantStats>& variants,
                                         const F1Formula& f1 = harmonic_mean) {
  auto rate = [](std::uint64_t num, std::uint64_t den, const char* metric,
                 const std::string& who) {
    if (den == 0) throw Error(ErrorCode::kZeroDenominator, std::string(metric) + " for " + who);
    return static_cast<double>(num) / static_cast<double>(den);
  };
  const double o_lpv = rate(original.lpv, original.impressions, "lpv_rate", original.variant_id);
  const double o_ctr = rate(original.clicks, original.impressions, "ctr", original.variant_id);
  const double o_ctr_lpv = rate(original.lpv, original.clicks, "lpv_per_click", original.variant_id);
  if (o_lpv == 0.0) throw Error(ErrorCode::kZeroDenominator, "original lpv_rate is zero");
  if (o_ctr == 0.0) throw Error(ErrorCode::kZeroDenominator, "original ctr is zero");
  if (o_ctr_lpv == 0.0) throw Error(ErrorCode::kZeroDenominator, "original lpv_per_click is zero");

  auto r3 = [](double x) { return numeric::round_half_up(x, 3); };
  AblationReport report;
  report.original = {original.label.empty() ? "original" : original.label, 1.0, 1.0, 1.0, 1.0};
  for (const auto& v : variants) {
    const double lpv = rate(v.lpv, v.impressions, "lpv_rate", v.variant_id) / o_lpv;
    const double ctr = rate(v.clicks, v.impressions, "ctr", v.variant_id) / o_ctr;
    const double ctr_lpv = rate(v.lpv, v.clicks, "lpv_per_click", v.variant_id) / o_ctr_lpv;
    report.rows.push_back({v.label, r3(lpv), r3(ctr_lpv), r3(ctr), r3(f1(ctr_lpv, ctr))});
  }
  report.overall.label = "Overall";
  if (!report.rows.empty()) {
    const auto n = static_cast<double>(report.rows.size());
    for (const auto& r : report.rows) {
      report.overall.lpv_ratio += r.lpv_ratio;
      report.overall.ctr_lpv_ratio += r.ctr_lpv_ratio;
      report.overall.ctr_ratio += r.ctr_ratio;
      report.overall.f1 += r.f1;
    }
    report.overall.lpv_ratio = r3(report.overall.lpv_ratio / n);
    report.overall.ctr_lpv_ratio = r3(report.overall.ctr_lpv_ratio / n);
    report.overall.ctr_ratio = r3(report.overall.ctr_ratio / n);
    report.overall.f1 = r3(report.overall.f1 / n);
  }
  return report;
}

inline nlohmann::json to_json(const AblationRow& r) {
  return {{"label", r.label}, {"lpv", r.lpv_ratio}, {"ctr_lpv", r.ctr_lpv_ratio},
          {"ctr", r.ctr_ratio}, {"f1", r.f1}};
}

inline nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"original", to_json(r.original)}, {"rows", rows}, {"overall", to_json(r.overall)}};
}

/// CSV with the columns Layout,LPV,CTR-LPV,CTR,F1 Score; one row per variant
/// followed by Overall.
inline std::string report_csv(const AblationReport& r) {
  std::string out = "Layout,LPV,CTR-LPV,CTR,F1 Score\n";
  auto line = [&](const AblationRow& row) {
    out += csv::escape(row.label) + "," + numeric::fixed(row.lpv_ratio, 3) + "," +
           numeric::fixed(row.ctr_lpv_ratio, 3) + "," + numeric::fixed(row.ctr_ratio, 3) + "," +
           numeric::fixed(row.f1, 3) + "\n";
  };
  for (const auto& row : r.rows) line(row);
  line(r.overall);
  return out;
}

struct Drop {
  std::string element;
  std::string metric;
  long long drop_pct = 0;
};

/// Integer percent drop 100 * (1 - ratio), rounded half-up, computed in
/// thousandths so three-decimal ratios round exactly.
inline long long drop_percent(double ratio) {
  const long long milli = std::llround(ratio * 1000.0);
  const long long tenths = 1000 - milli;  // drop in tenths of a percent
  long long q = (tenths + 5) / 10;
  if ((tenths + 5) % 10 != 0 && tenths + 5 < 0) --q;  // floor for negatives
  return q;
}

/// One row per (variant, metric); the element is the variant's label.
inline std::vector<Drop> summarize_drops(const AblationReport& r) {
  std::vector<Drop> out;
  for (const auto& row : r.rows) {
    out.push_back({row.label, "lpv", drop_percent(row.lpv_ratio)});
    out.push_back({row.label, "ctr_lpv", drop_percent(row.ctr_lpv_ratio)});
    out.push_back({row.label, "ctr", drop_percent(row.ctr_ratio)});
    out.push_back({row.label, "f1", drop_percent(row.f1)});
  }
  return out;
}

inline nlohmann::json to_json(const Drop& d) {
  return {{"element", d.element}, {"metric", d.metric}, {"drop_pct", d.drop_pct}};
}

}  // namespace mindfuse
