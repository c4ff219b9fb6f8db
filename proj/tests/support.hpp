#pragma once

// Test-only generators and oracles. Nothing here calls into the code paths
// it is used to check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mindfuse/embedding.hpp"

namespace mindfuse::testing {

inline std::filesystem::path data_path(const std::string& rel) {
  return std::filesystem::path(MINDFUSE_TEST_DATA) / rel;
}

inline std::filesystem::path golden_path(const std::string& rel) {
  return std::filesystem::path(MINDFUSE_TEST_DATA).parent_path() / "golden" / rel;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("mindfuse_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Portable standard normal draws (Box-Muller over mt19937_64).
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Blobs {
  std::vector<EmbeddingVector> points;
  std::map<std::string, std::size_t> truth;
};

/// Gaussian blobs (sigma = 1) with collinear centres `separation` apart along
/// the first axis; remaining dimensions are pure noise.
inline Blobs make_blobs(const std::vector<std::size_t>& sizes, double separation,
                        std::size_t dim, std::uint64_t seed) {
  Blobs b;
  Normal normal(seed);
  std::size_t next_id = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      EmbeddingVector v;
      char id[32];
      std::snprintf(id, sizeof id, "p%05zu", next_id++);
      v.ad_id = id;
      v.provider_id = "synthetic";
      v.values.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) v.values[d] = normal();
      v.values[0] += separation * static_cast<double>(c);
      b.truth[v.ad_id] = c;
      b.points.push_back(std::move(v));
    }
  }
  return b;
}

/// BIC from per-point log densities of the fitted mixture: mixing weight
/// R_j/R times an isotropic Gaussian with pooled per-dimension variance
/// sse/(dim*(R-k)), minus k*(dim+1)/2*log R.
inline double brute_force_bic(const std::vector<std::vector<double>>& points,
                              const std::vector<std::size_t>& labels, std::size_t k) {
  const std::size_t n = points.size();
  const std::size_t dim = points[0].size();
  std::vector<std::vector<double>> mu(k, std::vector<double>(dim, 0.0));
  std::vector<double> count(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    count[labels[i]] += 1.0;
    for (std::size_t d = 0; d < dim; ++d) mu[labels[i]][d] += points[i][d];
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (auto& x : mu[j]) x /= count[j];
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      sse += std::pow(points[i][d] - mu[labels[i]][d], 2);
    }
  }
  const double var = sse / static_cast<double>(dim * (n - k));
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double log_density = std::log(count[labels[i]] / static_cast<double>(n));
    for (std::size_t d = 0; d < dim; ++d) {
      const double z = points[i][d] - mu[labels[i]][d];
      log_density += -0.5 * std::log(2.0 * std::numbers::pi * var) - z * z / (2.0 * var);
    }
    ll += log_density;
  }
  return ll - static_cast<double>(k * (dim + 1)) / 2.0 * std::log(static_cast<double>(n));
}

inline std::vector<EmbeddingVector> as_vectors(const std::vector<std::vector<double>>& pts) {
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "x%03zu", i);
    out.push_back({id, pts[i], "test"});
  }
  return out;
}

}  // namespace mindfuse::testing
