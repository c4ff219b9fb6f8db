#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mindfuse/error.hpp"
#include "mindfuse/util/hash.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse {

struct EmbeddingVector {
  std::string ad_id;
  std::vector<double> values;
  std::string provider_id;

  std::size_t dim() const { return values.size(); }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

/// Hashed bag of character 3-grams. Each lowercase alphanumeric token
/// contributes its 3-grams (a token shorter than 3 contributes itself);
/// gram counts land in bucket fnv1a64(gram) % dim and the result is
/// L2-normalized.
class OfflineEmbedder : public EmbeddingProvider {
 public:
  explicit OfflineEmbedder(std::size_t dim = 256) : dim_(dim) {
    if (dim_ == 0) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be > 0");
  }

  std::string id() const override { return "offline-3gram-" + std::to_string(dim_); }
  std::size_t dim() const { return dim_; }

  std::vector<double> embed(const std::string& input) override {
    std::vector<double> v(dim_, 0.0);
    for (const auto& token : text::tokenize(input)) {
      if (token.size() < 3) {
        v[hash::fnv1a64(token) % dim_] += 1.0;
        continue;
      }
      for (std::size_t i = 0; i + 3 <= token.size(); ++i) {
        v[hash::fnv1a64(std::string_view(token).substr(i, 3)) % dim_] += 1.0;
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
    return v;
  }

 private:
  std::size_t dim_;
};

/// Binary sidecar keyed by (provider_id, sha256(text)). Records are appended:
/// u32 key length, key bytes, u32 dim, dim doubles in host byte order.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    while (in) {
      std::uint32_t key_len = 0;
      if (!in.read(reinterpret_cast<char*>(&key_len), sizeof key_len)) break;
      std::string key(key_len, '\0');
      std::uint32_t dim = 0;
      if (!in.read(key.data(), key_len) ||
          !in.read(reinterpret_cast<char*>(&dim), sizeof dim)) {
        break;
      }
      std::vector<double> values(dim);
      if (!in.read(reinterpret_cast<char*>(values.data()),
                   static_cast<std::streamsize>(dim * sizeof(double)))) {
        break;  // truncated tail record
      }
      entries_[std::move(key)] = std::move(values);
    }
  }

  static std::string key(const std::string& provider_id, const std::string& text) {
    return provider_id + '\x1f' + hash::sha256_hex(text);
  }

  std::optional<std::vector<double>> get(const std::string& provider_id,
                                         const std::string& text) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key(provider_id, text));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& provider_id, const std::string& text,
           const std::vector<double>& values) {
    std::lock_guard lock(mu_);
    auto k = key(provider_id, text);
    if (entries_.count(k)) return;
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      const auto key_len = static_cast<std::uint32_t>(k.size());
      const auto dim = static_cast<std::uint32_t>(values.size());
      out.write(reinterpret_cast<const char*>(&key_len), sizeof key_len);
      out.write(k.data(), key_len);
      out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path_.string());
    }
    entries_.emplace(std::move(k), values);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<double>> entries_;
};

/// One vector per input, in input order. Work is split across `threads`
/// workers; results are placed by index so the schedule cannot reorder them.
inline std::vector<EmbeddingVector> embed_texts(
    EmbeddingProvider& provider,
    const std::vector<std::pair<std::string, std::string>>& texts,
    EmbeddingCache* cache = nullptr, unsigned threads = 1) {
  if (texts.empty()) throw Error(ErrorCode::kInvalidArgument, "no texts to embed");
  for (const auto& [ad_id, t] : texts) {
    if (text::normalize_whitespace(t).empty()) throw Error(ErrorCode::kEmptyText, ad_id);
  }
  const auto provider_id = provider.id();
  std::vector<EmbeddingVector> out(texts.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& [ad_id, t] = texts[i];
      std::optional<std::vector<double>> values;
      if (cache) values = cache->get(provider_id, t);
      if (!values) {
        values = provider.embed(t);
        if (cache) cache->put(provider_id, t, *values);
      }
      out[i] = EmbeddingVector{ad_id, std::move(*values), provider_id};
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(texts.size())));
  if (threads == 1) {
    work(0, texts.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (texts.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < texts.size(); b += chunk) {
      jobs.push_back(std::async(std::launch::async, work, b, std::min(texts.size(), b + chunk)));
    }
    for (auto& j : jobs) j.get();
  }
  const auto dim = out.front().dim();
  for (const auto& v : out) {
    if (v.dim() != dim || dim == 0) {
      throw Error(ErrorCode::kInvalidArgument, "inconsistent embedding dim for " + v.ad_id);
    }
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    if (!(norm > 0.0)) throw Error(ErrorCode::kEmptyText, v.ad_id + " (zero vector)");
  }
  return out;
}

}  // namespace mindfuse
