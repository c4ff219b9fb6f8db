#pragma once

// OpenAI-compatible chat-completion and embedding providers over HTTP(S).
// Needs cpp-httplib with OpenSSL (link mindfuse::http).

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "mindfuse/embedding.hpp"
#include "mindfuse/error.hpp"
#include "mindfuse/llm_gateway.hpp"

namespace mindfuse::llm {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "bad url " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

namespace http_detail {

inline std::unique_ptr<httplib::Client> client(const Url& url, double timeout_s) {
  auto c = std::make_unique<httplib::Client>(url.origin);
  const auto t = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_s));
  c->set_connection_timeout(t);
  c->set_read_timeout(t);
  c->set_write_timeout(t);
  return c;
}

inline httplib::Headers auth_headers() {
  httplib::Headers h;
  if (const char* key = std::getenv(GatewayConfig::kApiKeyEnv); key && *key) {
    h.emplace("Authorization", std::string("Bearer ") + key);
  }
  return h;
}

inline json post_json(httplib::Client& c, const Url& url, const json& body) {
  auto res = c.Post(url.path, auth_headers(), body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
        err == httplib::Error::Write) {
      throw Error(ErrorCode::kTimeout, url.origin + url.path + ": " + httplib::to_string(err));
    }
    throw Error(ErrorCode::kProviderUnavailable, url.origin + ": " + httplib::to_string(err));
  }
  if (res->status == 408 || res->status == 504) {
    throw Error(ErrorCode::kTimeout, "HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kProviderUnavailable,
                "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  auto j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kProviderUnavailable, "response is not JSON");
  return j;
}

}  // namespace http_detail

/// POSTs {model, messages} to the endpoint and returns
/// choices[0].message.content. Images go in as data-URI image_url parts.
class HttpChatProvider : public ChatProvider {
 public:
  HttpChatProvider(std::string endpoint, std::string model, double timeout_s = 30.0,
                   double requests_per_second = 2.0)
      : url_(split_url(endpoint)), model_(std::move(model)), timeout_s_(timeout_s),
        bucket_(requests_per_second, std::max(1.0, requests_per_second)) {}

  std::string id() const override { return "http:" + model_; }

  std::string complete(const ProviderCall& call) override {
    json content;
    if (call.image_refs.empty()) {
      content = call.prompt;
    } else {
      content = json::array({{{"type", "text"}, {"text", call.prompt}}});
      for (const auto& ref : call.image_refs) {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", ref}}}});
      }
    }
    json body{{"model", model_},
              {"temperature", 0},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    bucket_.acquire();
    auto c = http_detail::client(url_, timeout_s_);
    const auto j = http_detail::post_json(*c, url_, body);
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kProviderUnavailable, "unexpected completion payload");
    }
  }

 private:
  Url url_;
  std::string model_;
  double timeout_s_;
  TokenBucket bucket_;
};

/// POSTs {model, input} and reads data[0].embedding.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string endpoint, std::string model, double timeout_s = 30.0,
                        double requests_per_second = 5.0)
      : url_(split_url(endpoint)), model_(std::move(model)), timeout_s_(timeout_s),
        bucket_(requests_per_second, std::max(1.0, requests_per_second)) {}

  std::string id() const override { return "http:" + model_; }

  std::vector<double> embed(const std::string& text) override {
    bucket_.acquire();
    auto c = http_detail::client(url_, timeout_s_);
    const auto j = http_detail::post_json(*c, url_, {{"model", model_}, {"input", text}});
    try {
      return j.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kProviderUnavailable, "unexpected embedding payload");
    }
  }

 private:
  Url url_;
  std::string model_;
  double timeout_s_;
  TokenBucket bucket_;
};

/// Chat provider for a config: mock (with fixtures) or HTTP.
inline std::shared_ptr<ChatProvider> make_chat_provider(const GatewayConfig& config) {
  if (config.provider == ProviderKind::kMock) {
    return std::make_shared<MockProvider>(config.fixtures_dir);
  }
  return std::make_shared<HttpChatProvider>(config.endpoint, config.model, config.timeout_s);
}

/// The offline embedder unless the config names an embedding endpoint.
inline std::shared_ptr<EmbeddingProvider> make_embedding_provider(const GatewayConfig& config) {
  if (config.provider == ProviderKind::kHttp && !config.embedding_endpoint.empty()) {
    return std::make_shared<HttpEmbeddingProvider>(config.embedding_endpoint,
                                                   config.embedding_model, config.timeout_s);
  }
  return std::make_shared<OfflineEmbedder>();
}

}  // namespace mindfuse::llm
