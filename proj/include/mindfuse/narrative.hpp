#pragma once

// Campaign briefs: persona + challenge + offering fused into a story, a
// distilled one-sentence insight and a campaign idea.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/insight_mining.hpp"
#include "mindfuse/llm_gateway.hpp"
#include "mindfuse/util/hash.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse {

inline constexpr std::size_t kMaxInsightChars = 280;

struct Offering {
  std::string offering_id;
  std::string name;
  std::string description;
  std::string brand;

  friend bool operator==(const Offering&, const Offering&) = default;
};

inline nlohmann::json to_json(const Offering& o) {
  return {{"offering_id", o.offering_id},
          {"name", o.name},
          {"description", o.description},
          {"brand", o.brand}};
}

inline Offering offering_from_json(const nlohmann::json& j) {
  Offering o;
  o.offering_id = j.at("offering_id").get<std::string>();
  o.name = j.at("name").get<std::string>();
  o.description = j.value("description", std::string());
  o.brand = j.value("brand", std::string());
  if (text::trim(o.name).empty()) throw Error(ErrorCode::kInvalidArgument, "offering name empty");
  return o;
}

struct CampaignBrief {
  std::string brief_id;
  std::string persona_ref;
  std::string challenge_ref;
  std::string offering_ref;
  std::string story;
  std::string insight;
  std::string idea;
  std::string created_at;
  std::map<std::string, std::string> provenance;

  friend bool operator==(const CampaignBrief&, const CampaignBrief&) = default;
};

inline nlohmann::json to_json(const CampaignBrief& b) {
  return {{"brief_id", b.brief_id},       {"persona_ref", b.persona_ref},
          {"challenge_ref", b.challenge_ref}, {"offering_ref", b.offering_ref},
          {"story", b.story},             {"insight", b.insight},
          {"idea", b.idea},               {"created_at", b.created_at},
          {"provenance", b.provenance}};
}

inline CampaignBrief brief_from_json(const nlohmann::json& j) {
  CampaignBrief b;
  b.brief_id = j.at("brief_id").get<std::string>();
  b.persona_ref = j.at("persona_ref").get<std::string>();
  b.challenge_ref = j.at("challenge_ref").get<std::string>();
  b.offering_ref = j.at("offering_ref").get<std::string>();
  b.story = j.at("story").get<std::string>();
  b.insight = j.at("insight").get<std::string>();
  b.idea = j.at("idea").get<std::string>();
  b.created_at = j.at("created_at").get<std::string>();
  b.provenance = j.value("provenance", std::map<std::string, std::string>{});
  return b;
}

/// Plain-text rendering for pasting into decks.
inline std::string render_brief_text(const CampaignBrief& b, const std::string& persona_name,
                                     const std::string& challenge_name,
                                     const std::string& offering_name) {
  std::string out;
  out += "CAMPAIGN BRIEF " + b.brief_id + "\n";
  out += "Persona:   " + persona_name + "\n";
  out += "Challenge: " + challenge_name + "\n";
  out += "Offering:  " + offering_name + "\n\n";
  out += "STORY\n" + b.story + "\n\n";
  out += "INSIGHT\n" + b.insight + "\n\n";
  out += "IDEA\n" + b.idea + "\n";
  return out;
}

/// Append-only brief log (`briefs.jsonl`).
class BriefStore {
 public:
  explicit BriefStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      briefs_.push_back(brief_from_json(nlohmann::json::parse(line)));
    }
  }

  void append(const CampaignBrief& b) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << to_json(b).dump() << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "cannot append " + path_.string());
    briefs_.push_back(b);
  }

  std::vector<CampaignBrief> all() const {
    std::lock_guard lock(mu_);
    return briefs_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return briefs_.size();
  }

  CampaignBrief get(const std::string& id) const {
    std::lock_guard lock(mu_);
    for (const auto& b : briefs_) {
      if (b.brief_id == id) return b;
    }
    throw Error(ErrorCode::kNotFound, "brief " + id);
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<CampaignBrief> briefs_;
};

using Clock = std::function<std::string()>;

/// UTC wall-clock timestamp, e.g. 2024-01-31T09:15:00Z.
inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Cuts to at most `limit` bytes at a word boundary.
inline std::string clip_words(std::string s, std::size_t limit) {
  if (s.size() <= limit) return s;
  auto cut = s.rfind(' ', limit);
  s.resize(cut == std::string::npos || cut == 0 ? limit : cut);
  while (!s.empty() && (s.back() == ',' || s.back() == ' ')) s.pop_back();
  return s;
}

class NarrativeEngine {
 public:
  NarrativeEngine(const llm::Gateway& gateway, BriefStore* store = nullptr,
                  Clock clock = utc_now)
      : gateway_(gateway), store_(store), clock_(std::move(clock)) {}

  /// One sentence, at most 280 characters. A multi-sentence reply is retried
  /// with the corrective instruction; if the model persists, its first
  /// sentence is kept.
  std::string distill_insight(const std::string& story) const {
    if (text::normalize_whitespace(story).empty()) {
      throw Error(ErrorCode::kInvalidArgument, "story is empty");
    }
    llm::CompletionRequest req{"distill_insight", {{"story", story}}, "insight", {}};
    auto result = gateway_.complete_structured(req, [](const nlohmann::json& j) {
      const auto sentences = text::split_sentences(j.value("insight", ""));
      if (sentences.empty()) return std::optional<std::string>("insight empty");
      if (sentences.size() > 1) return std::optional<std::string>("insight must be one sentence");
      return std::optional<std::string>();
    });
    std::optional<nlohmann::json> obj = result.parsed;
    if (!obj) {
      auto v = llm::validate_output(result.raw_text, gateway_.registry().get_schema("insight"));
      obj = v.parsed;
    }
    if (!obj) {
      throw Error(ErrorCode::kExtractionFailed, "insight: " + text::join(result.errors, "; "));
    }
    const auto sentences = text::split_sentences(text::normalize_whitespace(obj->value("insight", "")));
    if (sentences.empty()) throw Error(ErrorCode::kExtractionFailed, "insight empty");
    return clip_words(sentences.front(), kMaxInsightChars);
  }

  CampaignBrief generate_brief(const Persona& persona, const Challenge& challenge,
                               const Offering& offering,
                               std::optional<std::size_t> gap_rank = std::nullopt) {
    if (persona.name.empty() || challenge.name.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "persona and challenge need names");
    }
    if (text::trim(offering.name).empty()) {
      throw Error(ErrorCode::kInvalidArgument, "offering name empty");
    }
    llm::CompletionRequest req;
    req.template_id = "brief_story";
    req.schema_id = "brief";
    req.bindings = {{"persona_name", persona.name},
                    {"persona_description", persona.description},
                    {"challenge_name", challenge.name},
                    {"challenge_description", challenge.description},
                    {"offering_name", offering.name},
                    {"brand", offering.brand.empty() ? std::string("the brand") : offering.brand}};
    if (!text::trim(offering.description).empty()) {
      req.bindings["offering_description"] = offering.description;
    }
    const auto result = gateway_.complete_structured(req, [](const nlohmann::json& j) {
      if (text::normalize_whitespace(j.value("story", "")).empty()) {
        return std::optional<std::string>("story empty");
      }
      if (text::normalize_whitespace(j.value("idea", "")).empty()) {
        return std::optional<std::string>("idea empty");
      }
      return std::optional<std::string>();
    });
    if (!result.parsed) {
      throw Error(ErrorCode::kExtractionFailed, "brief: " + text::join(result.errors, "; "));
    }

    CampaignBrief b;
    b.persona_ref = persona.id;
    b.challenge_ref = challenge.id;
    b.offering_ref = offering.offering_id;
    b.story = text::trim((*result.parsed)["story"].get<std::string>());
    b.idea = text::trim((*result.parsed)["idea"].get<std::string>());
    b.insight = distill_insight(b.story);
    b.created_at = clock_();
    b.provenance["template_version"] =
        "brief_story@" + gateway_.registry().get_template("brief_story").version() +
        ",distill_insight@" + gateway_.registry().get_template("distill_insight").version();
    b.provenance["provider_id"] = result.provider_id;
    if (gap_rank) b.provenance["gap_rank"] = std::to_string(*gap_rank);

    const std::size_t seq = (store_ ? store_->size() : local_seq_.load()) + 1;
    ++local_seq_;
    b.brief_id = hash::sha256_hex(persona.id + '\x1f' + challenge.id + '\x1f' +
                                  offering.offering_id + '\x1f' + b.story)
                     .substr(0, 12) +
                 "-" + std::to_string(seq);
    if (store_) store_->append(b);
    return b;
  }

  /// One brief per top-ranked gap cell (more with fanout > 1). The offering
  /// is the first whose brand matches `corpus_brand`, else the first listed.
  std::vector<CampaignBrief> propose_briefs(const CoverageMatrix& matrix,
                                            const std::vector<Persona>& personas,
                                            const std::vector<Challenge>& challenges,
                                            const std::vector<Offering>& offerings,
                                            std::size_t top_n,
                                            const std::optional<std::string>& corpus_brand = {},
                                            std::size_t fanout = 1) {
    if (top_n == 0) return {};
    if (offerings.empty()) throw Error(ErrorCode::kNoOfferings, "no offerings available");
    std::vector<const Offering*> ranked;
    if (corpus_brand) {
      for (const auto& o : offerings) {
        if (text::to_lower(o.brand) == text::to_lower(*corpus_brand)) ranked.push_back(&o);
      }
    }
    for (const auto& o : offerings) {
      if (std::find(ranked.begin(), ranked.end(), &o) == ranked.end()) ranked.push_back(&o);
    }
    ranked.resize(std::min(std::max<std::size_t>(fanout, 1), ranked.size()));

    auto find = [](const std::vector<Archetype>& list, const std::string& id) -> const Archetype& {
      for (const auto& a : list) {
        if (a.id == id) return a;
      }
      throw Error(ErrorCode::kNotFound, id);
    };
    std::vector<CampaignBrief> out;
    for (const auto& gap : detect_gaps(matrix, top_n)) {
      const auto& p = find(personas, gap.persona);
      const auto& c = find(challenges, gap.challenge);
      for (const auto* o : ranked) out.push_back(generate_brief(p, c, *o, gap.rank));
    }
    return out;
  }

 private:
  const llm::Gateway& gateway_;
  BriefStore* store_;
  Clock clock_;
  std::atomic<std::size_t> local_seq_{0};
};

}  // namespace mindfuse
