#pragma once

// Content-pillar extraction: one structured record per ad via the gateway.

#include <algorithm>
#include <future>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/ad_store.hpp"
#include "mindfuse/error.hpp"
#include "mindfuse/llm_gateway.hpp"

namespace mindfuse {

inline constexpr const char* kPillarTemplate = "extract_pillars";
inline constexpr const char* kPillarSchema = "pillars";
inline constexpr const char* kUnknown = "unknown";

struct ContentPillars {
  std::string ad_id;
  std::string audience;
  std::string insight;
  std::string need;
  std::string product;
  std::string value_proposition;
  std::string emotional_appeal;
  std::string tone;
  std::string archetype;

  friend bool operator==(const ContentPillars&, const ContentPillars&) = default;
};

enum class PillarField { kAudience, kInsight };

inline const std::string& pillar_text(const ContentPillars& p, PillarField f) {
  return f == PillarField::kAudience ? p.audience : p.insight;
}

inline nlohmann::json to_json(const ContentPillars& p) {
  return {{"ad_id", p.ad_id},
          {"audience", p.audience},
          {"insight", p.insight},
          {"need", p.need},
          {"product", p.product},
          {"value_proposition", p.value_proposition},
          {"emotional_appeal", p.emotional_appeal},
          {"tone", p.tone},
          {"archetype", p.archetype}};
}

inline ContentPillars pillars_from_json(const nlohmann::json& j) {
  ContentPillars p;
  p.ad_id = j.at("ad_id").get<std::string>();
  p.audience = j.at("audience").get<std::string>();
  p.insight = j.at("insight").get<std::string>();
  p.need = j.value("need", kUnknown);
  p.product = j.value("product", kUnknown);
  p.value_proposition = j.value("value_proposition", kUnknown);
  p.emotional_appeal = j.value("emotional_appeal", kUnknown);
  p.tone = j.value("tone", kUnknown);
  p.archetype = j.value("archetype", kUnknown);
  return p;
}

struct PillarFailure {
  std::string ad_id;
  std::string reason;

  friend bool operator==(const PillarFailure&, const PillarFailure&) = default;
};

struct PillarTable {
  std::vector<ContentPillars> rows;
  std::vector<PillarFailure> failures;

  friend bool operator==(const PillarTable&, const PillarTable&) = default;
};

/// Only audience and insight are hard-required; the other six fall back to
/// "unknown" when the model leaves them out or blank.
inline ContentPillars extract_pillars(const llm::Gateway& gateway, const AdCreative& ad) {
  llm::CompletionRequest req;
  req.template_id = kPillarTemplate;
  req.schema_id = kPillarSchema;
  req.bindings = {{"brand", ad.brand}, {"body_text", ad.body_text}};
  if (ad.headline && !ad.headline->empty()) req.bindings["headline"] = *ad.headline;

  const auto result = gateway.complete_structured(req);
  if (!result.parsed) {
    throw Error(ErrorCode::kExtractionFailed,
                ad.id + ": " + (result.errors.empty() ? std::string("validation failed")
                                                      : text::join(result.errors, "; ")));
  }
  const auto& j = *result.parsed;
  auto field = [&](const char* name) {
    if (!j.contains(name) || !j[name].is_string()) return std::string(kUnknown);
    auto v = text::normalize_whitespace(j[name].get<std::string>());
    return v.empty() ? std::string(kUnknown) : v;
  };
  ContentPillars p;
  p.ad_id = ad.id;
  for (const char* required : {"audience", "insight"}) {
    auto v = text::normalize_whitespace(j.value(required, std::string()));
    if (v.empty()) throw Error(ErrorCode::kExtractionFailed, std::string(required) + " empty");
    (std::string_view(required) == "audience" ? p.audience : p.insight) = std::move(v);
  }
  p.need = field("need");
  p.product = field("product");
  p.value_proposition = field("value_proposition");
  p.emotional_appeal = field("emotional_appeal");
  p.tone = field("tone");
  p.archetype = field("archetype");
  return p;
}

/// Extracts every ad, collecting per-ad failures. Rows and failures are
/// sorted by ad_id whatever the completion order.
inline PillarTable batch_extract(const llm::Gateway& gateway, const std::vector<AdCreative>& ads,
                                 unsigned threads = 1) {
  std::set<std::string> ids;
  for (const auto& ad : ads) {
    if (!ids.insert(ad.id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate ad id " + ad.id);
    }
  }
  struct Outcome {
    std::optional<ContentPillars> row;
    std::string failure;
  };
  std::vector<Outcome> outcomes(ads.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        outcomes[i].row = extract_pillars(gateway, ads[i]);
      } catch (const Error& e) {
        outcomes[i].failure = e.what();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(ads.size())));
  if (threads <= 1) {
    work(0, ads.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (ads.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < ads.size(); b += chunk) {
      jobs.push_back(std::async(std::launch::async, work, b, std::min(ads.size(), b + chunk)));
    }
    for (auto& j : jobs) j.get();
  }

  PillarTable table;
  for (std::size_t i = 0; i < ads.size(); ++i) {
    if (outcomes[i].row) {
      table.rows.push_back(std::move(*outcomes[i].row));
    } else {
      table.failures.push_back({ads[i].id, outcomes[i].failure});
    }
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const auto& a, const auto& b) { return a.ad_id < b.ad_id; });
  std::sort(table.failures.begin(), table.failures.end(),
            [](const auto& a, const auto& b) { return a.ad_id < b.ad_id; });
  return table;
}

/// Line-delimited export, one record per row.
inline std::string export_pillars(const PillarTable& table) {
  std::string out;
  for (const auto& row : table.rows) out += to_json(row).dump() + "\n";
  return out;
}

}  // namespace mindfuse
