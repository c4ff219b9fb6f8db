#pragma once

// Normalized ad records: ingestion from exported line-delimited files,
// content-hash deduplication, filtering and an append-only on-disk log.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/util/date.hpp"
#include "mindfuse/util/hash.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse {

enum class Platform { kFacebook, kInstagram, kOther };

inline std::string to_string(Platform p) {
  switch (p) {
    case Platform::kFacebook: return "facebook";
    case Platform::kInstagram: return "instagram";
    case Platform::kOther: return "other";
  }
  return "other";
}

inline std::optional<Platform> parse_platform(std::string_view s) {
  const auto lower = text::to_lower(s);
  if (lower == "facebook") return Platform::kFacebook;
  if (lower == "instagram") return Platform::kInstagram;
  if (lower == "other") return Platform::kOther;
  return std::nullopt;
}

struct AdCreative {
  std::string id;
  std::string brand;
  std::string body_text;
  std::optional<std::string> headline;
  std::vector<std::string> media_refs;
  Date first_seen;
  Date last_seen;
  Platform platform = Platform::kOther;
  std::vector<std::string> tags;

  friend bool operator==(const AdCreative&, const AdCreative&) = default;
};

/// Content hash over (brand, normalized body, sorted media refs).
inline std::string ad_content_id(std::string_view brand, std::string_view body,
                                 std::vector<std::string> media_refs) {
  std::sort(media_refs.begin(), media_refs.end());
  std::string key(brand);
  key.push_back('\x1f');
  key += text::normalize_whitespace(body);
  for (const auto& m : media_refs) {
    key.push_back('\x1f');
    key += m;
  }
  return hash::short_id(key);
}

inline nlohmann::json to_json(const AdCreative& ad) {
  nlohmann::json j = {
      {"id", ad.id},
      {"brand", ad.brand},
      {"body_text", ad.body_text},
      {"headline", ad.headline ? nlohmann::json(*ad.headline) : nlohmann::json()},
      {"media_refs", ad.media_refs},
      {"first_seen", ad.first_seen.str()},
      {"last_seen", ad.last_seen.str()},
      {"platform", to_string(ad.platform)},
      {"tags", ad.tags},
  };
  return j;
}

inline AdCreative ad_from_json(const nlohmann::json& j) {
  AdCreative ad;
  ad.id = j.at("id").get<std::string>();
  ad.brand = j.at("brand").get<std::string>();
  ad.body_text = j.at("body_text").get<std::string>();
  if (j.contains("headline") && j["headline"].is_string()) {
    ad.headline = j["headline"].get<std::string>();
  }
  ad.media_refs = j.value("media_refs", std::vector<std::string>{});
  auto first = Date::parse(j.at("first_seen").get<std::string>());
  auto last = Date::parse(j.at("last_seen").get<std::string>());
  if (!first || !last) throw Error(ErrorCode::kMalformedLine, "bad date in record");
  ad.first_seen = *first;
  ad.last_seen = *last;
  ad.platform = parse_platform(j.value("platform", "other")).value_or(Platform::kOther);
  ad.tags = j.value("tags", std::vector<std::string>{});
  return ad;
}

struct IngestReport {
  std::size_t read = 0;
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
  std::size_t rejected = 0;
  std::vector<std::pair<std::size_t, std::string>> reject_reasons;
  std::vector<std::pair<std::size_t, std::string>> warnings;
};

inline nlohmann::json to_json(const IngestReport& r) {
  nlohmann::json reasons = nlohmann::json::array();
  for (const auto& [line, reason] : r.reject_reasons) {
    reasons.push_back({{"line_no", line}, {"reason", reason}});
  }
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& [line, w] : r.warnings) {
    warnings.push_back({{"line_no", line}, {"warning", w}});
  }
  return {{"read", r.read},         {"accepted", r.accepted},
          {"duplicates", r.duplicates}, {"rejected", r.rejected},
          {"reject_reasons", reasons}, {"warnings", warnings}};
}

struct FilterSpec {
  std::optional<std::vector<std::string>> brands;
  std::optional<std::pair<Date, Date>> date_range;
  std::optional<std::vector<std::string>> keyword_any;
  std::optional<std::vector<std::string>> keyword_all;

  void validate() const {
    if (date_range && date_range->first > date_range->second) {
      throw Error(ErrorCode::kInvalidArgument, "date_range from > to");
    }
  }

  bool matches(const AdCreative& ad) const {
    if (brands) {
      const auto b = text::to_lower(ad.brand);
      auto hit = std::any_of(brands->begin(), brands->end(), [&](const auto& x) {
        return text::to_lower(x) == b;
      });
      if (!hit) return false;
    }
    if (date_range) {
      if (ad.last_seen < date_range->first || ad.first_seen > date_range->second) {
        return false;
      }
    }
    if (keyword_any || keyword_all) {
      const auto hay = text::to_lower(ad.body_text + "\n" + ad.headline.value_or(""));
      auto has = [&](const std::string& k) {
        return hay.find(text::to_lower(k)) != std::string::npos;
      };
      if (keyword_any && !std::any_of(keyword_any->begin(), keyword_any->end(), has)) {
        return false;
      }
      if (keyword_all && !std::all_of(keyword_all->begin(), keyword_all->end(), has)) {
        return false;
      }
    }
    return true;
  }
};

inline nlohmann::json to_json(const FilterSpec& f) {
  nlohmann::json j = nlohmann::json::object();
  if (f.brands) j["brands"] = *f.brands;
  if (f.date_range) {
    j["date_range"] = {f.date_range->first.str(), f.date_range->second.str()};
  }
  if (f.keyword_any) j["keyword_any"] = *f.keyword_any;
  if (f.keyword_all) j["keyword_all"] = *f.keyword_all;
  return j;
}

inline FilterSpec filter_from_json(const nlohmann::json& j) {
  FilterSpec f;
  if (j.is_null()) return f;
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "filter must be an object");
  if (j.contains("brands")) f.brands = j["brands"].get<std::vector<std::string>>();
  if (j.contains("keyword_any")) {
    f.keyword_any = j["keyword_any"].get<std::vector<std::string>>();
  }
  if (j.contains("keyword_all")) {
    f.keyword_all = j["keyword_all"].get<std::vector<std::string>>();
  }
  if (j.contains("date_range")) {
    const auto& r = j["date_range"];
    if (!r.is_array() || r.size() != 2) {
      throw Error(ErrorCode::kInvalidArgument, "date_range must be [from, to]");
    }
    auto from = Date::parse(r[0].get<std::string>());
    auto to = Date::parse(r[1].get<std::string>());
    if (!from || !to) throw Error(ErrorCode::kInvalidArgument, "bad date in date_range");
    f.date_range = std::make_pair(*from, *to);
  }
  f.validate();
  return f;
}

namespace detail {

inline const std::vector<std::string>& export_keys() {
  static const std::vector<std::string> keys = {
      "brand", "body_text", "headline", "media_refs", "first_seen", "last_seen",
      "platform"};
  return keys;
}

struct ParsedLine {
  std::optional<AdCreative> ad;
  std::string reject;
  std::vector<std::string> warnings;
};

inline ParsedLine parse_export_line(const std::string& line,
                                    const std::optional<std::string>& brand_hint) {
  ParsedLine out;
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    out.reject = "malformed record";
    return out;
  }
  const auto& keys = export_keys();
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      out.warnings.push_back("unknown key ignored: " + k);
    }
  }
  auto str_field = [&](const char* name) -> std::optional<std::string> {
    if (!j.contains(name) || j[name].is_null()) return std::nullopt;
    if (!j[name].is_string()) return std::nullopt;
    return j[name].get<std::string>();
  };

  AdCreative ad;
  auto body = str_field("body_text");
  if (!body || text::normalize_whitespace(*body).empty()) {
    out.reject = "missing body_text";
    return out;
  }
  ad.body_text = text::normalize_whitespace(*body);

  auto brand = str_field("brand");
  if (brand && !text::trim(*brand).empty()) {
    ad.brand = text::trim(*brand);
  } else if (brand_hint) {
    ad.brand = *brand_hint;
  } else {
    out.reject = "missing brand";
    return out;
  }

  if (auto h = str_field("headline")) {
    auto norm = text::normalize_whitespace(*h);
    if (!norm.empty()) ad.headline = std::move(norm);
  }

  if (j.contains("media_refs") && !j["media_refs"].is_null()) {
    if (!j["media_refs"].is_array()) {
      out.reject = "media_refs must be a list";
      return out;
    }
    for (const auto& m : j["media_refs"]) {
      if (!m.is_string()) {
        out.reject = "media_refs must be a list";
        return out;
      }
      ad.media_refs.push_back(m.get<std::string>());
    }
  }

  for (const char* name : {"first_seen", "last_seen"}) {
    auto s = str_field(name);
    if (!s) {
      out.reject = std::string("missing ") + name;
      return out;
    }
    auto d = Date::parse(*s);
    if (!d) {
      out.reject = std::string("invalid date in ") + name;
      return out;
    }
    (std::string_view(name) == "first_seen" ? ad.first_seen : ad.last_seen) = *d;
  }
  if (ad.first_seen > ad.last_seen) {
    out.reject = "first_seen after last_seen";
    return out;
  }

  if (auto p = str_field("platform")) {
    if (auto parsed = parse_platform(*p)) {
      ad.platform = *parsed;
    } else {
      out.warnings.push_back("unknown platform mapped to other: " + *p);
    }
  }

  ad.id = ad_content_id(ad.brand, ad.body_text, ad.media_refs);
  out.ad = std::move(ad);
  return out;
}

}  // namespace detail

/// Append-only ad log (`ads.jsonl` under the store directory) with an
/// in-memory id index rebuilt on open. One writer at a time; readers share.
class AdStore {
 public:
  explicit AdStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir_.string());
    reload();
  }

  const std::filesystem::path& log_path() const { return log_path_; }

  void reload() {
    std::unique_lock lock(mu_);
    log_path_ = dir_ / "ads.jsonl";
    ads_.clear();
    std::ifstream in(log_path_);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      auto ad = ad_from_json(nlohmann::json::parse(line));
      ads_.emplace(ad.id, std::move(ad));
    }
  }

  IngestReport ingest(std::istream& in,
                      const std::optional<std::string>& brand_hint = std::nullopt) {
    std::unique_lock lock(mu_);
    return ingest_locked(in, brand_hint);
  }

  IngestReport ingest_file(const std::filesystem::path& source,
                           const std::optional<std::string>& brand_hint = std::nullopt) {
    std::ifstream in(source);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open " + source.string());
    return ingest(in, brand_hint);
  }

  /// Non-blocking variant; nullopt when another ingest holds the store.
  std::optional<IngestReport> try_ingest(std::istream& in,
                                         const std::optional<std::string>& brand_hint) {
    std::unique_lock lock(mu_, std::try_to_lock);
    if (!lock.owns_lock()) return std::nullopt;
    return ingest_locked(in, brand_hint);
  }

  std::vector<AdCreative> filter(const FilterSpec& spec) const {
    spec.validate();
    std::shared_lock lock(mu_);
    std::vector<AdCreative> out;
    for (const auto& [id, ad] : ads_) {
      if (spec.matches(ad)) out.push_back(ad);
    }
    std::sort(out.begin(), out.end(), [](const AdCreative& a, const AdCreative& b) {
      return std::tie(a.brand, a.id) < std::tie(b.brand, b.id);
    });
    return out;
  }

  AdCreative get(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = ads_.find(id);
    if (it == ads_.end()) throw Error(ErrorCode::kNotFound, "ad " + id);
    return it->second;
  }

  bool contains(const std::string& id) const {
    std::shared_lock lock(mu_);
    return ads_.count(id) != 0;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return ads_.size();
  }

 private:
  IngestReport ingest_locked(std::istream& in,
                             const std::optional<std::string>& brand_hint) {
    IngestReport report;
    std::ofstream out(log_path_, std::ios::app);
    if (!out) throw Error(ErrorCode::kIoError, "cannot append " + log_path_.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      ++report.read;
      auto parsed = detail::parse_export_line(line, brand_hint);
      for (auto& w : parsed.warnings) report.warnings.emplace_back(line_no, std::move(w));
      if (!parsed.ad) {
        ++report.rejected;
        report.reject_reasons.emplace_back(line_no, parsed.reject);
        continue;
      }
      if (ads_.count(parsed.ad->id)) {
        ++report.duplicates;
        continue;
      }
      out << to_json(*parsed.ad).dump() << '\n';
      ads_.emplace(parsed.ad->id, *parsed.ad);
      ++report.accepted;
    }
    if (in.bad()) throw Error(ErrorCode::kIoError, "read failure");
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "write failure on " + log_path_.string());
    return report;
  }

  std::filesystem::path dir_;
  std::filesystem::path log_path_;
  mutable std::shared_mutex mu_;
  std::map<std::string, AdCreative> ads_;
};

}  // namespace mindfuse
