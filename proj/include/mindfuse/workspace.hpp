#pragma once

// A store directory holding every durable artifact of the pipeline, and the
// operations shared by the command-line driver and the HTTP service.
//
// Layout:
//   ads.jsonl            ad log
//   pillars.json         latest pillar table (rows and failures)
//   personas.json        latest persona mining result
//   challenges.json      latest challenge mining result
//   offerings.jsonl      offerings, append-only
//   briefs.jsonl         briefs, append-only
//   telemetry.csv        imported telemetry rows
//   annotations.jsonl    accept/dismiss decisions on recommendations
//   embeddings.bin       embedding cache
//   heatmaps/<id>.json   attention heatmaps
//   creatives/<id>.png   creative images (also .jpg/.jpeg)

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/ad_store.hpp"
#include "mindfuse/creative_optimizer.hpp"
#include "mindfuse/embedding.hpp"
#include "mindfuse/error.hpp"
#include "mindfuse/insight_mining.hpp"
#include "mindfuse/llm_gateway.hpp"
#include "mindfuse/narrative.hpp"
#include "mindfuse/pillars.hpp"
#include "mindfuse/telemetry.hpp"
#include "mindfuse/util/hash.hpp"

namespace mindfuse {

inline nlohmann::json to_json(const PillarTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) rows.push_back(to_json(r));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : t.failures) failures.push_back({{"ad_id", f.ad_id}, {"reason", f.reason}});
  return {{"rows", rows}, {"failures", failures}};
}

inline PillarTable pillar_table_from_json(const nlohmann::json& j) {
  PillarTable t;
  for (const auto& r : j.at("rows")) t.rows.push_back(pillars_from_json(r));
  for (const auto& f : j.value("failures", nlohmann::json::array())) {
    t.failures.push_back({f.at("ad_id").get<std::string>(), f.at("reason").get<std::string>()});
  }
  return t;
}

struct Annotation {
  std::string target;    // e.g. an action description hash or brief id
  std::string decision;  // "accept" or "dismiss"
  std::string note;
  std::string created_at;
};

inline nlohmann::json to_json(const Annotation& a) {
  return {{"target", a.target}, {"decision", a.decision}, {"note", a.note}, {"created_at", a.created_at}};
}

struct GapReport {
  CoverageMatrix matrix;
  std::vector<Gap> gaps;
};

inline nlohmann::json to_json(const GapReport& r) {
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : r.gaps) gaps.push_back(to_json(g));
  return {{"matrix", to_json(r.matrix)}, {"gaps", gaps}};
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct WorkspaceOptions {
  unsigned threads = 1;
  int max_retries = 2;
  Clock clock = utc_now;
};

class Workspace {
 public:
  Workspace(std::filesystem::path dir, llm::TemplateRegistry templates,
            std::shared_ptr<llm::ChatProvider> chat, std::shared_ptr<EmbeddingProvider> embedder,
            WorkspaceOptions options = {})
      : dir_(std::move(dir)),
        options_(std::move(options)),
        ads_((std::filesystem::create_directories(dir_), dir_)),
        gateway_(std::move(templates), std::move(chat), options_.max_retries),
        embedder_(std::move(embedder)),
        cache_(dir_ / "embeddings.bin"),
        briefs_(dir_ / "briefs.jsonl") {}

  const std::filesystem::path& dir() const { return dir_; }
  AdStore& ads() { return ads_; }
  const llm::Gateway& gateway() const { return gateway_; }
  EmbeddingProvider& embedder() { return *embedder_; }
  const Clock& clock() const { return options_.clock; }

  // -- ads -----------------------------------------------------------------

  IngestReport ingest(std::istream& in, const std::optional<std::string>& brand_hint = {}) {
    return ads_.ingest(in, brand_hint);
  }

  // -- pillars ---------------------------------------------------------------

  PillarTable run_pillars(const FilterSpec& filter) {
    const auto ads = ads_.filter(filter);
    if (ads.empty()) throw Error(ErrorCode::kEmptyInput, "no ads match the filter");
    auto table = batch_extract(gateway_, ads, options_.threads);
    std::lock_guard lock(mu_);
    write_atomic(dir_ / "pillars.json", to_json(table).dump(1) + "\n");
    return table;
  }

  std::optional<PillarTable> pillars() const {
    std::lock_guard lock(mu_);
    const auto path = dir_ / "pillars.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    return pillar_table_from_json(nlohmann::json::parse(read_text(path)));
  }

  // -- personas / challenges -----------------------------------------------

  /// Mines the stored pillar rows, restricted to ads matching `filter` when
  /// one is given.
  MiningResult run_mining(ArchetypeKind kind, const MiningOptions& options,
                          const std::optional<FilterSpec>& filter = std::nullopt) {
    auto table = pillars();
    if (!table || table->rows.empty()) throw Error(ErrorCode::kNotFound, "no pillars; run pillars first");
    if (filter) {
      std::set<std::string> keep;
      for (const auto& ad : ads_.filter(*filter)) keep.insert(ad.id);
      std::erase_if(table->rows, [&](const ContentPillars& r) { return !keep.count(r.ad_id); });
      if (table->rows.empty()) throw Error(ErrorCode::kEmptyInput, "no pillar rows match the filter");
    }
    auto result = mine_archetypes(kind, *table, *embedder_, &gateway_, options, &cache_);
    std::lock_guard lock(mu_);
    write_atomic(mining_path(kind), to_json(result).dump(1) + "\n");
    return result;
  }

  std::optional<MiningResult> mining(ArchetypeKind kind) const {
    std::lock_guard lock(mu_);
    const auto path = mining_path(kind);
    if (!std::filesystem::exists(path)) return std::nullopt;
    return mining_result_from_json(nlohmann::json::parse(read_text(path)));
  }

  GapReport gaps(std::size_t top_n) const {
    auto p = mining(ArchetypeKind::kPersona);
    auto c = mining(ArchetypeKind::kChallenge);
    if (!p || !c) throw Error(ErrorCode::kNotFound, "no clusterings; run personas and challenges first");
    GapReport r;
    r.matrix = coverage_matrix(p->clustering, c->clustering);
    r.gaps = detect_gaps(r.matrix, top_n);
    return r;
  }

  // -- offerings -------------------------------------------------------------

  Offering add_offering(Offering o) {
    o.name = text::normalize_whitespace(o.name);
    if (o.name.empty()) throw Error(ErrorCode::kInvalidArgument, "offering name empty");
    std::lock_guard lock(mu_);
    auto existing = load_offerings();
    if (o.offering_id.empty()) {
      o.offering_id = "offering-" + hash::sha256_hex(text::to_lower(o.brand) + '\x1f' +
                                                     text::to_lower(o.name)).substr(0, 8);
    }
    for (const auto& e : existing) {
      if (e.offering_id == o.offering_id) {
        if (e == o) return e;
        throw Error(ErrorCode::kConflict, "offering " + o.offering_id + " already exists");
      }
    }
    std::ofstream out(dir_ / "offerings.jsonl", std::ios::app);
    out << to_json(o).dump() << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "cannot append offerings");
    return o;
  }

  std::vector<Offering> offerings() const {
    std::lock_guard lock(mu_);
    return load_offerings();
  }

  Offering offering(const std::string& id) const {
    for (auto& o : offerings()) {
      if (o.offering_id == id) return o;
    }
    throw Error(ErrorCode::kNotFound, "offering " + id);
  }

  // -- briefs ----------------------------------------------------------------

  Archetype archetype(ArchetypeKind kind, const std::string& id) const {
    auto m = mining(kind);
    if (!m) throw Error(ErrorCode::kNotFound, "no " + to_string(kind) + " clustering");
    for (const auto& a : m->archetypes) {
      if (a.id == id) return a;
    }
    throw Error(ErrorCode::kNotFound, to_string(kind) + " " + id);
  }

  CampaignBrief brief(const std::string& persona_id, const std::string& challenge_id,
                      const std::string& offering_id) {
    const auto p = archetype(ArchetypeKind::kPersona, persona_id);
    const auto c = archetype(ArchetypeKind::kChallenge, challenge_id);
    const auto o = offering(offering_id);
    std::lock_guard lock(brief_mu_);
    NarrativeEngine engine(gateway_, &briefs_, options_.clock);
    return engine.generate_brief(p, c, o);
  }

  /// One brief per top-`n` gap (times `fanout` offerings).
  std::vector<CampaignBrief> briefs_from_gaps(std::size_t n, std::size_t fanout = 1) {
    auto p = mining(ArchetypeKind::kPersona);
    auto c = mining(ArchetypeKind::kChallenge);
    if (!p || !c) throw Error(ErrorCode::kNotFound, "no clusterings; run personas and challenges first");
    const auto matrix = coverage_matrix(p->clustering, c->clustering);
    std::lock_guard lock(brief_mu_);
    NarrativeEngine engine(gateway_, &briefs_, options_.clock);
    return engine.propose_briefs(matrix, p->archetypes, c->archetypes, offerings(), n,
                                 dominant_brand(), fanout);
  }

  std::vector<CampaignBrief> briefs() const { return briefs_.all(); }
  CampaignBrief get_brief(const std::string& id) const { return briefs_.get(id); }

  std::string distill(const std::string& story) const {
    NarrativeEngine engine(gateway_, nullptr, options_.clock);
    return engine.distill_insight(story);
  }

  /// Brand with the most ads; ties go to the alphabetically first.
  std::optional<std::string> dominant_brand() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& ad : ads_.filter({})) ++counts[ad.brand];
    std::optional<std::string> best;
    std::size_t best_n = 0;
    for (const auto& [brand, n] : counts) {
      if (n > best_n) {
        best = brand;
        best_n = n;
      }
    }
    return best;
  }

  // -- telemetry -------------------------------------------------------------

  /// Validates the whole file before appending any of it.
  std::size_t import_telemetry(std::istream& in) {
    auto rows = read_telemetry(in);
    std::lock_guard lock(mu_);
    const auto path = dir_ / "telemetry.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    std::string csv = telemetry_csv(rows);
    if (!fresh) csv.erase(0, csv.find('\n') + 1);
    out << csv;
    if (!out) throw Error(ErrorCode::kIoError, "cannot append telemetry");
    return rows.size();
  }

  std::vector<RawTelemetryRow> telemetry() const {
    std::lock_guard lock(mu_);
    const auto path = dir_ / "telemetry.csv";
    if (!std::filesystem::exists(path)) return {};
    return read_telemetry(path);
  }

  TrendSeries trend(Granularity g) const {
    auto rows = telemetry();
    if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "no telemetry");
    return aggregate(rows, g);
  }

  /// Image files under creatives/, sorted by name.
  std::vector<std::filesystem::path> creative_images() const {
    std::vector<std::filesystem::path> out;
    const auto d = dir_ / "creatives";
    if (!std::filesystem::is_directory(d)) return out;
    for (const auto& e : std::filesystem::directory_iterator(d)) {
      auto ext = text::to_lower(e.path().extension().string());
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // -- annotations -----------------------------------------------------------

  Annotation annotate(Annotation a) {
    if (a.target.empty()) throw Error(ErrorCode::kInvalidArgument, "annotation target empty");
    if (a.decision != "accept" && a.decision != "dismiss") {
      throw Error(ErrorCode::kInvalidArgument, "decision must be accept or dismiss");
    }
    a.created_at = options_.clock();
    std::lock_guard lock(mu_);
    std::ofstream out(dir_ / "annotations.jsonl", std::ios::app);
    out << to_json(a).dump() << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "cannot append annotations");
    return a;
  }

  std::vector<Annotation> annotations() const {
    std::lock_guard lock(mu_);
    std::vector<Annotation> out;
    std::ifstream in(dir_ / "annotations.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("target"), j.at("decision"), j.value("note", ""), j.value("created_at", "")});
    }
    return out;
  }

  // -- creatives -------------------------------------------------------------

  AttentionHeatmap heatmap(const std::string& creative_id) const {
    if (!safe_id(creative_id)) throw Error(ErrorCode::kInvalidArgument, "bad creative id");
    const auto path = dir_ / "heatmaps" / (creative_id + ".json");
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::kNotFound, "heatmap " + creative_id);
    return load_heatmap(path);
  }

  AttentionHeatmap put_heatmap(const nlohmann::json& j) {
    auto h = heatmap_from_json(j);
    if (!safe_id(h.creative_id)) throw Error(ErrorCode::kInvalidArgument, "bad creative id");
    std::lock_guard lock(mu_);
    std::filesystem::create_directories(dir_ / "heatmaps");
    write_atomic(dir_ / "heatmaps" / (h.creative_id + ".json"), j.dump() + "\n");
    return h;
  }

  /// Ids made of [A-Za-z0-9._-] that cannot escape the store directory.
  static bool safe_id(const std::string& id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
      return std::isalnum(c) || c == '-' || c == '_' || c == '.';
    });
  }

 private:
  std::filesystem::path mining_path(ArchetypeKind kind) const {
    return dir_ / (kind == ArchetypeKind::kPersona ? "personas.json" : "challenges.json");
  }

  std::vector<Offering> load_offerings() const {
    std::vector<Offering> out;
    std::ifstream in(dir_ / "offerings.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (!text::trim(line).empty()) out.push_back(offering_from_json(nlohmann::json::parse(line)));
    }
    return out;
  }

  std::filesystem::path dir_;
  WorkspaceOptions options_;
  AdStore ads_;
  llm::Gateway gateway_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  EmbeddingCache cache_;
  BriefStore briefs_;
  mutable std::mutex mu_;
  std::mutex brief_mu_;
};

}  // namespace mindfuse
