#pragma once

// Personas (Audience pillar) and challenges (Insights pillar) mined by X-Means
// over pillar embeddings, plus the persona x challenge coverage matrix and
// gap ranking that drives brief generation.

#include <algorithm>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/clustering.hpp"
#include "mindfuse/embedding.hpp"
#include "mindfuse/error.hpp"
#include "mindfuse/llm_gateway.hpp"
#include "mindfuse/pillars.hpp"

namespace mindfuse {

enum class ArchetypeKind { kPersona, kChallenge };

inline std::string to_string(ArchetypeKind k) {
  return k == ArchetypeKind::kPersona ? "persona" : "challenge";
}

inline PillarField source_field(ArchetypeKind k) {
  return k == ArchetypeKind::kPersona ? PillarField::kAudience : PillarField::kInsight;
}

/// A labelled cluster: a persona when mined from audiences, a challenge when
/// mined from insights.
struct Archetype {
  ArchetypeKind kind = ArchetypeKind::kPersona;
  std::string id;
  std::string name;
  std::string description;
  std::size_t size = 0;
  std::size_t cluster_index = 0;
  std::vector<std::string> exemplar_ad_ids;
  bool auto_labeled = false;
  std::string avatar_prompt;  // personas only; never executed

  friend bool operator==(const Archetype&, const Archetype&) = default;
};

using Persona = Archetype;
using Challenge = Archetype;

inline std::string archetype_id(ArchetypeKind kind, std::size_t cluster_index) {
  return to_string(kind) + "-" + std::to_string(cluster_index);
}

inline nlohmann::json to_json(const Archetype& a) {
  nlohmann::json j = {{"kind", to_string(a.kind)},
                      {"id", a.id},
                      {"name", a.name},
                      {"description", a.description},
                      {"size", a.size},
                      {"cluster_index", a.cluster_index},
                      {"exemplar_ad_ids", a.exemplar_ad_ids},
                      {"auto_labeled", a.auto_labeled}};
  if (!a.avatar_prompt.empty()) j["avatar_prompt"] = a.avatar_prompt;
  return j;
}

inline Archetype archetype_from_json(const nlohmann::json& j) {
  Archetype a;
  a.kind = j.at("kind").get<std::string>() == "persona" ? ArchetypeKind::kPersona
                                                        : ArchetypeKind::kChallenge;
  a.id = j.at("id").get<std::string>();
  a.name = j.at("name").get<std::string>();
  a.description = j.at("description").get<std::string>();
  a.size = j.at("size").get<std::size_t>();
  a.cluster_index = j.at("cluster_index").get<std::size_t>();
  a.exemplar_ad_ids = j.at("exemplar_ad_ids").get<std::vector<std::string>>();
  a.auto_labeled = j.value("auto_labeled", false);
  a.avatar_prompt = j.value("avatar_prompt", std::string());
  return a;
}

inline constexpr std::size_t kMaxExemplars = 5;
inline constexpr std::size_t kMaxSummaryMembers = 25;

namespace mining_detail {

inline bool is_stopword(const std::string& t) {
  static const std::set<std::string> kStop = {
      "the", "and", "for", "with", "that", "this", "from", "your", "you", "are",
      "their", "they", "who", "what", "into", "our", "but", "not", "all", "can",
      "unknown", "has", "have", "was", "were", "its", "more", "less", "than"};
  return t.size() < 3 || kStop.count(t) != 0;
}

/// Up to five most frequent content tokens; ties alphabetical.
inline std::string top_terms(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts) {
    for (const auto& tok : text::tokenize(t)) {
      if (!is_stopword(tok)) ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ranked.size() && i < 5; ++i) words.push_back(ranked[i].first);
  return words.empty() ? std::string("no recurring terms") : "Top terms: " + text::join(words, ", ");
}

}  // namespace mining_detail

/// Names and describes one cluster through the gateway. Size and exemplars
/// (members nearest the centroid, ties by ad_id) are computed locally. When
/// the gateway is absent or fails, the label falls back to "Cluster {index}"
/// with a top-terms description and auto_labeled set.
inline Archetype synthesize_archetype(const llm::Gateway* gateway, ArchetypeKind kind,
                                      std::size_t cluster_index,
                                      const std::vector<ContentPillars>& members,
                                      const std::vector<EmbeddingVector>& member_vectors = {},
                                      const Centroid& centroid = {}) {
  if (members.empty()) throw Error(ErrorCode::kInvalidArgument, "empty cluster");
  const auto field = source_field(kind);

  // Members ordered by distance to the centroid when vectors are supplied.
  std::vector<std::pair<double, std::string>> order;
  std::map<std::string, const ContentPillars*> by_id;
  for (const auto& m : members) by_id[m.ad_id] = &m;
  if (!member_vectors.empty() && !centroid.empty()) {
    for (const auto& v : member_vectors) {
      if (!by_id.count(v.ad_id)) continue;
      order.emplace_back(cluster_detail::sq_dist(v.values, centroid), v.ad_id);
    }
  }
  if (order.size() != members.size()) {
    order.clear();
    for (const auto& [id, _] : by_id) order.emplace_back(0.0, id);
  }
  std::sort(order.begin(), order.end());

  Archetype a;
  a.kind = kind;
  a.id = archetype_id(kind, cluster_index);
  a.cluster_index = cluster_index;
  a.size = members.size();
  for (std::size_t i = 0; i < order.size() && i < kMaxExemplars; ++i) {
    a.exemplar_ad_ids.push_back(order[i].second);
  }

  std::vector<std::string> texts;
  for (const auto& [_, id] : order) texts.push_back(pillar_text(*by_id[id], field));

  std::optional<nlohmann::json> labelled;
  if (gateway) {
    std::string listing;
    for (std::size_t i = 0; i < texts.size() && i < kMaxSummaryMembers; ++i) {
      listing += "- " + texts[i] + "\n";
    }
    llm::CompletionRequest req;
    req.template_id = kind == ArchetypeKind::kPersona ? "synthesize_persona"
                                                       : "synthesize_challenge";
    req.schema_id = "archetype";
    req.bindings = {{"cluster_size", std::to_string(members.size())},
                    {"member_texts", listing}};
    try {
      auto result = gateway->complete_structured(req, [](const nlohmann::json& j) {
        if (text::normalize_whitespace(j.value("name", "")).empty()) {
          return std::optional<std::string>("name empty");
        }
        return std::optional<std::string>();
      });
      labelled = std::move(result.parsed);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kProviderUnavailable && e.code() != ErrorCode::kTimeout &&
          e.code() != ErrorCode::kExtractionFailed) {
        throw;
      }
    }
  }
  if (labelled) {
    a.name = text::normalize_whitespace((*labelled)["name"].get<std::string>());
    a.description = text::normalize_whitespace(labelled->value("description", ""));
  } else {
    a.name = "Cluster " + std::to_string(cluster_index);
    a.description = mining_detail::top_terms(texts);
    a.auto_labeled = true;
  }
  if (kind == ArchetypeKind::kPersona) {
    a.avatar_prompt = "Portrait illustration of a marketing persona named \"" + a.name +
                      "\": " + a.description;
  }
  return a;
}

struct MiningOptions {
  std::uint64_t seed = 0;
  std::size_t k_min = 1;
  std::optional<std::size_t> k_max;  // default_k_max(n) when absent
};

struct MiningResult {
  ArchetypeKind kind = ArchetypeKind::kPersona;
  Clustering clustering;
  std::vector<Archetype> archetypes;
  std::string embedding_provider;

  friend bool operator==(const MiningResult&, const MiningResult&) = default;
};

inline nlohmann::json to_json(const MiningResult& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& a : r.archetypes) items.push_back(to_json(a));
  return {{"kind", to_string(r.kind)},
          {"embedding_provider", r.embedding_provider},
          {"clustering", to_json(r.clustering)},
          {"archetypes", items}};
}

inline MiningResult mining_result_from_json(const nlohmann::json& j) {
  MiningResult r;
  r.kind = j.at("kind").get<std::string>() == "persona" ? ArchetypeKind::kPersona
                                                        : ArchetypeKind::kChallenge;
  r.embedding_provider = j.value("embedding_provider", std::string());
  r.clustering = clustering_from_json(j.at("clustering"));
  for (const auto& a : j.at("archetypes")) r.archetypes.push_back(archetype_from_json(a));
  return r;
}

/// Embeds the pillar field for every row, clusters with X-Means and labels
/// each cluster.
inline MiningResult mine_archetypes(ArchetypeKind kind, const PillarTable& table,
                                    EmbeddingProvider& embedder, const llm::Gateway* gateway,
                                    const MiningOptions& options,
                                    EmbeddingCache* cache = nullptr) {
  if (table.rows.empty()) throw Error(ErrorCode::kTooFewPoints, "no pillar rows");
  const auto field = source_field(kind);
  std::vector<std::pair<std::string, std::string>> texts;
  for (const auto& row : table.rows) texts.emplace_back(row.ad_id, pillar_text(row, field));
  const auto vectors = embed_texts(embedder, texts, cache);

  MiningResult r;
  r.kind = kind;
  r.embedding_provider = embedder.id();
  const auto k_max = options.k_max.value_or(default_k_max(vectors.size()));
  r.clustering = xmeans(vectors, std::min(options.k_min, k_max), k_max, options.seed);

  std::map<std::string, const ContentPillars*> rows;
  for (const auto& row : table.rows) rows[row.ad_id] = &row;
  std::map<std::string, const EmbeddingVector*> vecs;
  for (const auto& v : vectors) vecs[v.ad_id] = &v;
  for (std::size_t c = 0; c < r.clustering.k; ++c) {
    std::vector<ContentPillars> members;
    std::vector<EmbeddingVector> member_vectors;
    for (const auto& id : r.clustering.members(c)) {
      members.push_back(*rows.at(id));
      member_vectors.push_back(*vecs.at(id));
    }
    r.archetypes.push_back(synthesize_archetype(gateway, kind, c, members, member_vectors,
                                                r.clustering.centroids[c]));
  }
  return r;
}

struct CoverageMatrix {
  std::vector<std::string> personas;    // ids, in cluster order
  std::vector<std::string> challenges;  // ids, in cluster order
  std::vector<std::vector<std::size_t>> counts;
  std::size_t common_ads = 0;
  std::size_t persona_only = 0;
  std::size_t challenge_only = 0;

  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& row : counts) {
      for (auto c : row) s += c;
    }
    return s;
  }
};

inline nlohmann::json to_json(const CoverageMatrix& m) {
  return {{"personas", m.personas},
          {"challenges", m.challenges},
          {"counts", m.counts},
          {"common_ads", m.common_ads},
          {"persona_only", m.persona_only},
          {"challenge_only", m.challenge_only}};
}

/// counts[p][c] = number of ads assigned to persona cluster p and challenge
/// cluster c, over the ads both clusterings share.
inline CoverageMatrix coverage_matrix(const Clustering& personas, const Clustering& challenges) {
  CoverageMatrix m;
  for (std::size_t p = 0; p < personas.k; ++p) {
    m.personas.push_back(archetype_id(ArchetypeKind::kPersona, p));
  }
  for (std::size_t c = 0; c < challenges.k; ++c) {
    m.challenges.push_back(archetype_id(ArchetypeKind::kChallenge, c));
  }
  m.counts.assign(personas.k, std::vector<std::size_t>(challenges.k, 0));
  for (const auto& [id, p] : personas.assignments) {
    auto it = challenges.assignments.find(id);
    if (it == challenges.assignments.end()) {
      ++m.persona_only;
      continue;
    }
    ++m.counts.at(p).at(it->second);
    ++m.common_ads;
  }
  m.challenge_only = challenges.assignments.size() - m.common_ads;
  if (m.common_ads == 0) {
    throw Error(ErrorCode::kDisjointUniverses, "persona and challenge clusterings share no ads");
  }
  return m;
}

struct Gap {
  std::size_t rank = 0;  // 1-based
  std::size_t persona_index = 0;
  std::size_t challenge_index = 0;
  std::string persona;
  std::string challenge;
  std::size_t count = 0;
};

inline nlohmann::json to_json(const Gap& g) {
  return {{"rank", g.rank},
          {"persona_index", g.persona_index},
          {"challenge_index", g.challenge_index},
          {"persona", g.persona},
          {"challenge", g.challenge},
          {"count", g.count}};
}

/// Cells by ascending count, ties by (persona index, challenge index).
inline std::vector<Gap> detect_gaps(const CoverageMatrix& m, std::size_t top_n) {
  if (m.counts.empty() || m.counts.front().empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty coverage matrix");
  }
  std::vector<Gap> cells;
  for (std::size_t p = 0; p < m.counts.size(); ++p) {
    for (std::size_t c = 0; c < m.counts[p].size(); ++c) {
      Gap g;
      g.persona_index = p;
      g.challenge_index = c;
      g.persona = p < m.personas.size() ? m.personas[p] : std::to_string(p);
      g.challenge = c < m.challenges.size() ? m.challenges[c] : std::to_string(c);
      g.count = m.counts[p][c];
      cells.push_back(std::move(g));
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const Gap& a, const Gap& b) { return a.count < b.count; });
  cells.resize(std::min(top_n, cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].rank = i + 1;
  return cells;
}

}  // namespace mindfuse
