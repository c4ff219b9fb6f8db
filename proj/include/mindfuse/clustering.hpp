#pragma once

// k-means (k-means++ seeding, Lloyd iterations), BIC under identical
// spherical Gaussians, and X-Means model selection over embedding vectors.
//
// Points are always processed in ad_id order and every random draw is keyed
// on (seed, member ids), so results do not depend on input order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/embedding.hpp"
#include "mindfuse/error.hpp"
#include "mindfuse/util/hash.hpp"

namespace mindfuse {

using Centroid = std::vector<double>;

struct Clustering {
  std::size_t k = 0;
  std::vector<Centroid> centroids;
  std::map<std::string, std::size_t> assignments;
  double bic = 0.0;
  bool bic_degenerate = false;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  double inertia = 0.0;

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (const auto& [id, c] : assignments) ++s.at(c);
    return s;
  }

  std::vector<std::string> members(std::size_t cluster) const {
    std::vector<std::string> out;
    for (const auto& [id, c] : assignments) {
      if (c == cluster) out.push_back(id);
    }
    return out;
  }

  friend bool operator==(const Clustering&, const Clustering&) = default;
};

inline nlohmann::json to_json(const Clustering& c) {
  nlohmann::json assignments = nlohmann::json::object();
  for (const auto& [id, idx] : c.assignments) assignments[id] = idx;
  return {{"k", c.k},
          {"seed", c.seed},
          {"bic", c.bic_degenerate ? nlohmann::json("inf") : nlohmann::json(c.bic)},
          {"bic_degenerate", c.bic_degenerate},
          {"iterations", c.iterations},
          {"inertia", c.inertia},
          {"sizes", c.sizes()},
          {"centroids", c.centroids},
          {"assignments", assignments}};
}

inline Clustering clustering_from_json(const nlohmann::json& j) {
  Clustering c;
  c.k = j.at("k").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.bic_degenerate = j.value("bic_degenerate", false);
  c.bic = c.bic_degenerate ? std::numeric_limits<double>::infinity()
                           : j.at("bic").get<double>();
  c.iterations = j.value("iterations", std::size_t{0});
  c.inertia = j.value("inertia", 0.0);
  c.centroids = j.at("centroids").get<std::vector<Centroid>>();
  for (const auto& [id, idx] : j.at("assignments").items()) {
    c.assignments[id] = idx.get<std::size_t>();
  }
  return c;
}

struct BicScore {
  double value = 0.0;
  double log_likelihood = 0.0;
  double penalty = 0.0;
  std::size_t free_parameters = 0;
  bool degenerate = false;
};

namespace cluster_detail {

/// Row-major points sorted by id.
struct Dataset {
  std::vector<std::string> ids;
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * dim, dim};
  }
};

inline Dataset make_dataset(const std::vector<EmbeddingVector>& vectors) {
  if (vectors.empty()) throw Error(ErrorCode::kTooFewPoints, "no vectors");
  std::vector<const EmbeddingVector*> sorted;
  sorted.reserve(vectors.size());
  for (const auto& v : vectors) sorted.push_back(&v);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->ad_id < b->ad_id; });
  Dataset ds;
  ds.dim = sorted.front()->dim();
  if (ds.dim == 0) throw Error(ErrorCode::kInvalidArgument, "zero-dimensional vectors");
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i && sorted[i]->ad_id == sorted[i - 1]->ad_id) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate ad_id " + sorted[i]->ad_id);
    }
    if (sorted[i]->dim() != ds.dim) {
      throw Error(ErrorCode::kInvalidArgument, "dimension mismatch at " + sorted[i]->ad_id);
    }
    ds.ids.push_back(sorted[i]->ad_id);
    ds.data.insert(ds.data.end(), sorted[i]->values.begin(), sorted[i]->values.end());
  }
  return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.dim = ds.dim;
  for (auto r : rows) {
    out.ids.push_back(ds.ids[r]);
    auto row = ds.row(r);
    out.data.insert(out.data.end(), row.begin(), row.end());
  }
  return out;
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t distinct_points(const Dataset& ds) {
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = ds.row(i);
    seen.emplace(r.begin(), r.end());
  }
  return seen.size();
}

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// RNG seed derived from the user seed and the (sorted) member ids.
inline std::uint64_t content_seed(std::uint64_t seed, const Dataset& ds) {
  std::string key;
  for (const auto& id : ds.ids) {
    key += id;
    key.push_back('\x1f');
  }
  return splitmix(seed ^ splitmix(hash::fnv1a64(key)));
}

inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::vector<Centroid> kmeanspp_init(const Dataset& ds, std::size_t k,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(content_seed(seed, ds));
  const std::size_t n = ds.size();
  std::vector<Centroid> centroids;
  auto first = static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(n));
  first = std::min(first, n - 1);
  centroids.emplace_back(ds.row(first).begin(), ds.row(first).end());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(ds.row(i), centroids[0]);
  while (centroids.size() < k) {
    double total = 0.0;
    for (double x : d2) total += x;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) throw Error(ErrorCode::kTooFewPoints, "not enough distinct points");
    centroids.emplace_back(ds.row(pick).begin(), ds.row(pick).end());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(ds.row(i), centroids.back()));
    }
  }
  return centroids;
}

inline std::size_t nearest(std::span<const double> p, const std::vector<Centroid>& cs) {
  std::size_t best = 0;
  double best_d = sq_dist(p, cs[0]);
  for (std::size_t c = 1; c < cs.size(); ++c) {
    const double d = sq_dist(p, cs[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

struct LloydResult {
  std::vector<Centroid> centroids;
  std::vector<std::size_t> labels;
  std::size_t iterations = 0;
  double inertia = 0.0;
};

inline double inertia_of(const Dataset& ds, const std::vector<std::size_t>& labels,
                         const std::vector<Centroid>& cs) {
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) s += sq_dist(ds.row(i), cs[labels[i]]);
  return s;
}

inline std::vector<Centroid> means(const Dataset& ds, const std::vector<std::size_t>& labels,
                                   std::size_t k) {
  std::vector<Centroid> cs(k, Centroid(ds.dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = ds.row(i);
    auto& c = cs[labels[i]];
    for (std::size_t d = 0; d < ds.dim; ++d) c[d] += r[d];
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (double& x : cs[c]) x /= static_cast<double>(counts[c]);
  }
  return cs;
}

/// Assigns every point to its nearest centroid, then fills each empty cluster
/// with the point farthest from its own centroid (taken from a cluster with
/// more than one member), moving that cluster's centroid onto the point.
/// Returns true when a repair happened.
inline bool assign(const Dataset& ds, std::vector<Centroid>& cs,
                   std::vector<std::size_t>& labels) {
  const std::size_t k = cs.size();
  labels.resize(ds.size());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    labels[i] = nearest(ds.row(i), cs);
    ++counts[labels[i]];
  }
  bool repaired = false;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = ds.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (counts[labels[i]] < 2) continue;
      const double d = sq_dist(ds.row(i), cs[labels[i]]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == ds.size()) throw Error(ErrorCode::kTooFewPoints, "cannot repair empty cluster");
    --counts[labels[far]];
    labels[far] = c;
    counts[c] = 1;
    cs[c].assign(ds.row(far).begin(), ds.row(far).end());
    repaired = true;
  }
  return repaired;
}

/// Lloyd iterations from `init` until the assignment is a fixpoint or
/// max_iter is reached. An iteration that needed empty-cluster repair is never
/// the last one, so on return every label is the nearest centroid.
inline LloydResult lloyd(const Dataset& ds, std::vector<Centroid> init, std::size_t max_iter,
                         std::vector<double>* inertia_trace = nullptr) {
  LloydResult r;
  r.centroids = std::move(init);
  bool repaired = assign(ds, r.centroids, r.labels);
  if (inertia_trace) inertia_trace->push_back(inertia_of(ds, r.labels, r.centroids));
  std::vector<std::size_t> next;
  for (;;) {
    if (r.iterations >= max_iter && !repaired) break;
    r.centroids = means(ds, r.labels, r.centroids.size());
    repaired = assign(ds, r.centroids, next);
    ++r.iterations;
    if (inertia_trace) inertia_trace->push_back(inertia_of(ds, next, r.centroids));
    const bool fixpoint = next == r.labels;
    r.labels.swap(next);
    if (fixpoint && !repaired) break;
  }
  r.inertia = inertia_of(ds, r.labels, r.centroids);
  return r;
}

/// Pelleg-Moore log-likelihood with pooled per-dimension variance
/// sse / (dim * (n - k)) and free parameters k * (dim + 1).
inline BicScore bic(const Dataset& ds, const std::vector<std::size_t>& labels,
                    const std::vector<Centroid>& cs) {
  const std::size_t k = cs.size();
  const auto n = static_cast<double>(ds.size());
  const auto dim = static_cast<double>(ds.dim);
  BicScore s;
  s.free_parameters = k * (ds.dim + 1);
  s.penalty = static_cast<double>(s.free_parameters) / 2.0 * std::log(n);
  const double sse = inertia_of(ds, labels, cs);
  if (ds.size() <= k || !(sse > 0.0)) {
    s.degenerate = true;
    s.value = std::numeric_limits<double>::infinity();
    s.log_likelihood = std::numeric_limits<double>::infinity();
    return s;
  }
  const double variance = sse / (dim * (n - static_cast<double>(k)));
  std::vector<std::size_t> counts(k, 0);
  for (auto l : labels) ++counts[l];
  double ll = 0.0;
  for (auto rj : counts) {
    if (rj == 0) continue;
    const auto r = static_cast<double>(rj);
    ll += r * std::log(r / n);
  }
  ll -= n * dim / 2.0 * std::log(2.0 * std::numbers::pi * variance);
  ll -= dim * (n - static_cast<double>(k)) / 2.0;
  s.log_likelihood = ll;
  s.value = ll - s.penalty;
  return s;
}

inline std::vector<std::size_t> labels_for(const Dataset& ds, const Clustering& c) {
  std::vector<std::size_t> labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto it = c.assignments.find(ds.ids[i]);
    if (it == c.assignments.end()) {
      throw Error(ErrorCode::kInvalidArgument, "clustering lacks " + ds.ids[i]);
    }
    if (it->second >= c.k) throw Error(ErrorCode::kInvalidArgument, "label out of range");
    labels[i] = it->second;
  }
  return labels;
}

inline Clustering to_clustering(const Dataset& ds, const LloydResult& r, std::uint64_t seed,
                                std::size_t iterations) {
  Clustering c;
  c.k = r.centroids.size();
  c.centroids = r.centroids;
  for (std::size_t i = 0; i < ds.size(); ++i) c.assignments[ds.ids[i]] = r.labels[i];
  const auto b = bic(ds, r.labels, r.centroids);
  c.bic = b.value;
  c.bic_degenerate = b.degenerate;
  c.seed = seed;
  c.iterations = iterations;
  c.inertia = r.inertia;
  return c;
}

inline void require_points(const Dataset& ds, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (ds.size() < k) {
    throw Error(ErrorCode::kTooFewPoints,
                std::to_string(ds.size()) + " points for k=" + std::to_string(k));
  }
  if (distinct_points(ds) < k) {
    throw Error(ErrorCode::kTooFewPoints, "fewer distinct points than k=" + std::to_string(k));
  }
}

}  // namespace cluster_detail

inline constexpr std::size_t kDefaultMaxIter = 300;

/// Lloyd's k-means from k-means++ seeding.
inline Clustering kmeans(const std::vector<EmbeddingVector>& vectors, std::size_t k,
                         std::uint64_t seed, std::size_t max_iter = kDefaultMaxIter,
                         std::vector<double>* inertia_trace = nullptr) {
  using namespace cluster_detail;
  const auto ds = make_dataset(vectors);
  require_points(ds, k);
  auto r = lloyd(ds, kmeanspp_init(ds, k, seed), max_iter, inertia_trace);
  return to_clustering(ds, r, seed, r.iterations);
}

/// BIC of `clustering` over `vectors` using the clustering's own centroids;
/// larger is better. Zero pooled variance yields +inf with `degenerate` set.
inline BicScore bic_score(const std::vector<EmbeddingVector>& vectors,
                          const Clustering& clustering) {
  using namespace cluster_detail;
  const auto ds = make_dataset(vectors);
  if (clustering.centroids.size() != clustering.k || clustering.k == 0) {
    throw Error(ErrorCode::kInvalidArgument, "clustering has inconsistent k");
  }
  return bic(ds, labels_for(ds, clustering), clustering.centroids);
}

inline std::size_t default_k_max(std::size_t n) {
  return std::max<std::size_t>(
      1, std::min<std::size_t>(20, static_cast<std::size_t>(std::sqrt(static_cast<double>(n)))));
}

/// X-Means: from a k_min-means start, tries a 2-means split of every cluster,
/// accepts the split whose local BIC gain over the parent is largest (if any
/// is positive), refines globally with Lloyd, and repeats until no split
/// improves or k_max is reached. Splitting one cluster per round keeps an
/// early cut through a small group from leaving two centroids inside it.
inline Clustering xmeans(const std::vector<EmbeddingVector>& vectors, std::size_t k_min,
                         std::size_t k_max, std::uint64_t seed,
                         std::size_t max_iter = kDefaultMaxIter) {
  using namespace cluster_detail;
  const auto ds = make_dataset(vectors);
  if (k_min < 1 || k_min > k_max) {
    throw Error(ErrorCode::kInvalidArgument, "need 1 <= k_min <= k_max");
  }
  if (k_max > ds.size()) {
    throw Error(ErrorCode::kTooFewPoints,
                std::to_string(ds.size()) + " points for k_max=" + std::to_string(k_max));
  }
  require_points(ds, k_min);

  auto current = lloyd(ds, kmeanspp_init(ds, k_min, seed), max_iter);
  std::size_t iterations = current.iterations;

  struct Split {
    double gain;
    std::size_t cluster;
    std::vector<Centroid> children;
  };

  while (current.centroids.size() < k_max) {
    const std::size_t k = current.centroids.size();
    std::vector<std::vector<std::size_t>> rows(k);
    for (std::size_t i = 0; i < ds.size(); ++i) rows[current.labels[i]].push_back(i);

    std::vector<Split> splits;
    for (std::size_t c = 0; c < k; ++c) {
      if (rows[c].size() < 2) continue;
      const auto local = subset(ds, rows[c]);
      if (distinct_points(local) < 2) continue;
      const std::vector<std::size_t> one(local.size(), 0);
      const auto parent = bic(local, one, means(local, one, 1));
      if (parent.degenerate) continue;
      auto child = lloyd(local, kmeanspp_init(local, 2, seed), max_iter);
      iterations += child.iterations;
      const auto children = bic(local, child.labels, child.centroids);
      if (children.value > parent.value) {
        splits.push_back({children.value - parent.value, c, std::move(child.centroids)});
      }
    }
    if (splits.empty()) break;
    // One split per round, the largest gain (ties: lowest cluster index).
    const auto best = std::max_element(
        splits.begin(), splits.end(), [](const Split& a, const Split& b) { return a.gain < b.gain; });

    std::vector<Centroid> next = current.centroids;
    next[best->cluster] = best->children[0];
    next.push_back(best->children[1]);
    current = lloyd(ds, std::move(next), max_iter);
    iterations += current.iterations;
  }

  // Final global refinement; a no-op when the last round already converged.
  current = lloyd(ds, current.centroids, max_iter);
  iterations += current.iterations;
  return to_clustering(ds, current, seed, iterations);
}

/// Checks the Clustering invariants over every point: one in-range label per
/// id, no empty cluster, and each point's label is its nearest centroid with
/// ties going to the lowest index. Returns the list of violations.
inline std::vector<std::string> validate_clustering(const std::vector<EmbeddingVector>& vectors,
                                                    const Clustering& c) {
  std::vector<std::string> problems;
  if (c.centroids.size() != c.k) problems.push_back("centroid count != k");
  if (c.assignments.size() != vectors.size()) problems.push_back("assignment count != points");
  std::vector<std::size_t> counts(c.k, 0);
  for (const auto& v : vectors) {
    auto it = c.assignments.find(v.ad_id);
    if (it == c.assignments.end()) {
      problems.push_back("unassigned " + v.ad_id);
      continue;
    }
    if (it->second >= c.k) {
      problems.push_back("label out of range for " + v.ad_id);
      continue;
    }
    ++counts[it->second];
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.centroids.size(); ++j) {
      double d = 0.0;
      for (std::size_t x = 0; x < v.values.size(); ++x) {
        d += (v.values[x] - c.centroids[j][x]) * (v.values[x] - c.centroids[j][x]);
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best != it->second) problems.push_back("not nearest centroid: " + v.ad_id);
  }
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) problems.push_back("empty cluster " + std::to_string(j));
  }
  return problems;
}

/// Hubert-Arabie adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(const std::vector<std::size_t>& a,
                                  const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kInvalidArgument, "label length mismatch");
  const auto n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows;
  std::map<std::size_t, double> cols;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2.0; };
  double index = 0;
  for (const auto& [_, v] : table) index += c2(v);
  double sa = 0;
  for (const auto& [_, v] : rows) sa += c2(v);
  double sb = 0;
  for (const auto& [_, v] : cols) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_index = (sa + sb) / 2.0;
  if (max_index == expected) return index == expected ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace mindfuse
