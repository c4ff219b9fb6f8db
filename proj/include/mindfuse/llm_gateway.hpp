#pragma once

// Provider-neutral chat/structured-output gateway: prompt templates, flat
// output schemas, output validation, retry policy and an offline mock.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/util/hash.hpp"
#include "mindfuse/util/text.hpp"

namespace mindfuse::llm {

using Bindings = std::map<std::string, std::string>;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Templates

struct Placeholder {
  std::string name;
  bool optional = false;
};

/// Template text is a sequence of `## Name` sections containing `{{name}}`
/// (required) or `{{name?}}` (optional) markers. Lines before the first
/// section of the form `# key: value` are metadata.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(std::string id, std::vector<std::pair<std::string, std::string>> sections,
                 std::string version = "1")
      : id_(std::move(id)), version_(std::move(version)), sections_(std::move(sections)) {
    scan();
  }

  static PromptTemplate parse(std::string id, std::string_view source) {
    std::vector<std::pair<std::string, std::string>> sections;
    std::string version = "1";
    std::istringstream in{std::string(source)};
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("## ", 0) == 0) {
        sections.emplace_back(text::trim(line.substr(3)), std::string());
        continue;
      }
      if (sections.empty()) {
        if (line.rfind("# version:", 0) == 0) version = text::trim(line.substr(10));
        continue;
      }
      auto& body = sections.back().second;
      body += line;
      body.push_back('\n');
    }
    for (auto& [name, body] : sections) {
      while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
    }
    return PromptTemplate(std::move(id), std::move(sections), std::move(version));
  }

  const std::string& id() const { return id_; }
  const std::string& version() const { return version_; }
  const std::vector<std::pair<std::string, std::string>>& sections() const {
    return sections_;
  }
  const std::vector<Placeholder>& placeholders() const { return placeholders_; }

  std::vector<std::string> required_bindings() const {
    std::vector<std::string> out;
    for (const auto& p : placeholders_) {
      if (!p.optional) out.push_back(p.name);
    }
    return out;
  }

  std::string render(const Bindings& bindings) const {
    for (const auto& p : placeholders_) {
      if (!p.optional && !bindings.count(p.name)) {
        throw Error(ErrorCode::kMissingBinding, p.name);
      }
    }
    std::string out;
    for (std::size_t i = 0; i < sections_.size(); ++i) {
      if (i) out.push_back('\n');
      out += "## " + sections_[i].first + "\n";
      out += substitute(sections_[i].second, bindings);
      out.push_back('\n');
    }
    return out;
  }

 private:
  // Single left-to-right pass; substituted values are never re-scanned.
  static std::string substitute(const std::string& body, const Bindings& bindings) {
    std::string out;
    std::size_t pos = 0;
    for (;;) {
      auto open = body.find("{{", pos);
      if (open == std::string::npos) break;
      auto close = body.find("}}", open + 2);
      if (close == std::string::npos) break;
      out.append(body, pos, open - pos);
      auto name = body.substr(open + 2, close - open - 2);
      if (!name.empty() && name.back() == '?') name.pop_back();
      if (auto it = bindings.find(name); it != bindings.end()) out += it->second;
      pos = close + 2;
    }
    out.append(body, pos, std::string::npos);
    return out;
  }

  void scan() {
    std::set<std::string> seen;
    for (const auto& [name, body] : sections_) {
      std::size_t pos = 0;
      for (;;) {
        auto open = body.find("{{", pos);
        if (open == std::string::npos) break;
        auto close = body.find("}}", open + 2);
        if (close == std::string::npos) break;
        std::string ph = body.substr(open + 2, close - open - 2);
        bool optional = !ph.empty() && ph.back() == '?';
        if (optional) ph.pop_back();
        if (ph.empty() || !std::all_of(ph.begin(), ph.end(), [](unsigned char c) {
              return std::isalnum(c) || c == '_';
            })) {
          throw Error(ErrorCode::kInvalidArgument,
                      "template " + id_ + ": bad placeholder '" + ph + "'");
        }
        if (seen.insert(ph).second) placeholders_.push_back({ph, optional});
        pos = close + 2;
      }
    }
  }

  std::string id_;
  std::string version_ = "1";
  std::vector<std::pair<std::string, std::string>> sections_;
  std::vector<Placeholder> placeholders_;
};

// ---------------------------------------------------------------------------
// Schemas and validation

enum class FieldKind { kString, kStringList, kNumber };

inline std::string to_string(FieldKind k) {
  switch (k) {
    case FieldKind::kString: return "string";
    case FieldKind::kStringList: return "string_list";
    case FieldKind::kNumber: return "number";
  }
  return "string";
}

struct SchemaField {
  std::string name;
  FieldKind kind = FieldKind::kString;
  bool required = true;
};

class StructuredSchema {
 public:
  StructuredSchema() = default;
  StructuredSchema(std::string id, std::vector<SchemaField> fields)
      : id_(std::move(id)), fields_(std::move(fields)) {
    std::set<std::string> names;
    for (const auto& f : fields_) {
      if (!names.insert(f.name).second) {
        throw Error(ErrorCode::kInvalidArgument,
                    "schema " + id_ + ": duplicate field " + f.name);
      }
    }
  }

  /// Lines of `name: kind` with an optional trailing `optional`; `#` comments.
  static StructuredSchema parse(std::string id, std::string_view source) {
    std::vector<SchemaField> fields;
    std::istringstream in{std::string(source)};
    std::string line;
    while (std::getline(in, line)) {
      auto t = text::trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto colon = t.find(':');
      if (colon == std::string::npos) {
        throw Error(ErrorCode::kInvalidArgument, "schema " + id + ": bad line " + t);
      }
      SchemaField f;
      f.name = text::trim(t.substr(0, colon));
      std::istringstream rest(t.substr(colon + 1));
      std::string kind;
      std::string flag;
      rest >> kind >> flag;
      if (kind == "string") {
        f.kind = FieldKind::kString;
      } else if (kind == "string_list") {
        f.kind = FieldKind::kStringList;
      } else if (kind == "number") {
        f.kind = FieldKind::kNumber;
      } else {
        throw Error(ErrorCode::kInvalidArgument, "schema " + id + ": unknown kind " + kind);
      }
      f.required = flag != "optional";
      fields.push_back(std::move(f));
    }
    return StructuredSchema(std::move(id), std::move(fields));
  }

  const std::string& id() const { return id_; }
  const std::vector<SchemaField>& fields() const { return fields_; }

 private:
  std::string id_;
  std::vector<SchemaField> fields_;
};

/// Returns the first balanced `{...}` span of raw_text that parses as a JSON
/// object. Braces inside string literals are ignored while balancing.
inline std::optional<json> extract_first_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos;
       start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escape) {
          escape = false;
        } else if (c == '\\') {
          escape = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        auto j = json::parse(raw.substr(start, i - start + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
        break;
      }
    }
  }
  return std::nullopt;
}

struct ValidationResult {
  std::optional<json> parsed;
  std::vector<std::string> errors;

  bool ok() const { return parsed.has_value() && errors.empty(); }
};

inline bool kind_matches(const json& v, FieldKind kind) {
  switch (kind) {
    case FieldKind::kString: return v.is_string();
    case FieldKind::kNumber: return v.is_number();
    case FieldKind::kStringList:
      return v.is_array() &&
             std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  return false;
}

/// Never throws; problems are reported in `errors` and `parsed` is left empty.
inline ValidationResult validate_output(std::string_view raw_text,
                                        const StructuredSchema& schema) {
  ValidationResult result;
  auto obj = extract_first_object(raw_text);
  if (!obj) {
    result.errors.push_back("no object found");
    return result;
  }
  for (const auto& f : schema.fields()) {
    if (!obj->contains(f.name) || (*obj)[f.name].is_null()) {
      if (f.required) result.errors.push_back("missing: " + f.name);
      continue;
    }
    if (!kind_matches((*obj)[f.name], f.kind)) {
      result.errors.push_back("wrong kind: " + f.name + " (expected " +
                              to_string(f.kind) + ")");
    }
  }
  if (result.errors.empty()) result.parsed = std::move(*obj);
  return result;
}

// ---------------------------------------------------------------------------
// Providers

struct ProviderCall {
  std::string template_id;
  std::string schema_id;
  std::string prompt;
  Bindings bindings;
  std::vector<std::string> image_refs;
  const StructuredSchema* schema = nullptr;
  int attempt = 1;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string id() const = 0;
  /// Throws Error(kProviderUnavailable) or Error(kTimeout).
  virtual std::string complete(const ProviderCall& call) = 0;
};

/// Offline provider. Responses come from `<fixtures>/<key>.txt` where key is
/// MockProvider::key_for(prompt); unknown prompts get a synthesized object
/// that satisfies the call's schema and echoes the binding values.
class MockProvider : public ChatProvider {
 public:
  MockProvider() = default;
  explicit MockProvider(const std::filesystem::path& fixtures_dir) {
    if (fixtures_dir.empty() || !std::filesystem::is_directory(fixtures_dir)) return;
    for (const auto& entry : std::filesystem::directory_iterator(fixtures_dir)) {
      if (entry.path().extension() != ".txt") continue;
      std::ifstream in(entry.path());
      std::stringstream ss;
      ss << in.rdbuf();
      canned_[entry.path().stem().string()] = ss.str();
    }
  }

  static std::string key_for(std::string_view prompt) { return hash::short_id(prompt); }

  void add_fixture(std::string_view prompt, std::string response) {
    std::lock_guard lock(mu_);
    canned_[key_for(prompt)] = std::move(response);
  }

  std::string id() const override { return "mock"; }

  std::string complete(const ProviderCall& call) override {
    {
      std::lock_guard lock(mu_);
      if (auto it = canned_.find(key_for(call.prompt)); it != canned_.end()) {
        return it->second;
      }
    }
    return synthesize(call);
  }

  static std::string synthesize(const ProviderCall& call) {
    std::vector<std::string> values;
    for (const auto& [name, value] : call.bindings) {
      auto v = text::normalize_whitespace(value);
      if (!v.empty()) values.push_back(std::move(v));
    }
    std::string echo = text::join(values, " | ");
    for (char& c : echo) {
      if (c == '.' || c == '!' || c == '?') c = ',';
    }
    if (echo.size() > 200) {
      echo.resize(200);
      while (!echo.empty() && (static_cast<unsigned char>(echo.back()) & 0xC0) == 0x80) {
        echo.pop_back();
      }
      if (!echo.empty() && static_cast<unsigned char>(echo.back()) >= 0xC0) echo.pop_back();
    }
    if (echo.empty()) echo = call.template_id;
    json out = json::object();
    if (call.schema) {
      for (const auto& f : call.schema->fields()) {
        switch (f.kind) {
          case FieldKind::kString: out[f.name] = f.name + ": " + echo; break;
          case FieldKind::kStringList: out[f.name] = json::array({f.name + ": " + echo}); break;
          case FieldKind::kNumber: out[f.name] = 0; break;
        }
      }
    } else {
      out["text"] = echo;
    }
    return out.dump();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::string> canned_;
};

/// Provider driven by a callback; the building block for scripted tests and
/// for adapting other backends.
class ScriptedProvider : public ChatProvider {
 public:
  using Script = std::function<std::string(const ProviderCall&)>;

  ScriptedProvider(std::string id, Script script)
      : id_(std::move(id)), script_(std::move(script)) {}

  /// Returns `responses` in order, repeating the last one once exhausted.
  static std::shared_ptr<ScriptedProvider> sequence(std::vector<std::string> responses) {
    auto state = std::make_shared<std::pair<std::mutex, std::size_t>>();
    return std::make_shared<ScriptedProvider>(
        "scripted", [state, responses = std::move(responses)](const ProviderCall&) {
          std::lock_guard lock(state->first);
          const auto i = std::min(state->second++, responses.size() - 1);
          return responses.at(i);
        });
  }

  std::string id() const override { return id_; }
  std::string complete(const ProviderCall& call) override { return script_(call); }

 private:
  std::string id_;
  Script script_;
};

/// Serialized token bucket: `acquire` blocks until a token is available.
class TokenBucket {
 public:
  TokenBucket(double rate_per_s, double capacity)
      : rate_(rate_per_s), capacity_(capacity), tokens_(capacity),
        last_(std::chrono::steady_clock::now()) {}

  void acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

  bool try_acquire() {
    std::lock_guard lock(mu_);
    refill();
    if (tokens_ < 1.0) return false;
    tokens_ -= 1.0;
    return true;
  }

 private:
  void refill() {
    const auto now = std::chrono::steady_clock::now();
    const double dt = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(capacity_, tokens_ + dt * rate_);
  }

  std::mutex mu_;
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

// ---------------------------------------------------------------------------
// Registry and gateway

class TemplateRegistry {
 public:
  /// Loads every `*.tmpl` and `*.schema` file in `dir`; ids are file stems.
  static TemplateRegistry load_dir(const std::filesystem::path& dir) {
    TemplateRegistry reg;
    if (!std::filesystem::is_directory(dir)) {
      throw Error(ErrorCode::kIoError, "templates dir not found: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto ext = entry.path().extension();
      if (ext != ".tmpl" && ext != ".schema") continue;
      std::ifstream in(entry.path());
      std::stringstream ss;
      ss << in.rdbuf();
      const auto id = entry.path().stem().string();
      if (ext == ".tmpl") {
        reg.add(PromptTemplate::parse(id, ss.str()));
      } else {
        reg.add(StructuredSchema::parse(id, ss.str()));
      }
    }
    return reg;
  }

  void add(PromptTemplate t) { templates_[t.id()] = std::move(t); }
  void add(StructuredSchema s) { schemas_[s.id()] = std::move(s); }

  const PromptTemplate& get_template(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error(ErrorCode::kUnknownTemplate, id);
    return it->second;
  }

  const StructuredSchema& get_schema(const std::string& id) const {
    auto it = schemas_.find(id);
    if (it == schemas_.end()) throw Error(ErrorCode::kUnknownTemplate, "schema " + id);
    return it->second;
  }

  std::string render(const std::string& template_id, const Bindings& bindings) const {
    return get_template(template_id).render(bindings);
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
  std::map<std::string, StructuredSchema> schemas_;
};

struct CompletionRequest {
  std::string template_id;
  Bindings bindings;
  std::string schema_id;
  std::vector<std::string> image_refs;
};

struct CompletionResult {
  std::string raw_text;
  std::optional<json> parsed;
  std::string provider_id;
  int attempt_count = 0;
  bool validation_failed = false;
  std::vector<std::string> errors;
};

/// Semantic check run after schema validation; returns an error message to
/// reject (and retry) a schema-valid object.
using AcceptCheck = std::function<std::optional<std::string>(const json&)>;

inline constexpr const char* kCorrectiveInstruction = "Return only the structured object.";

class Gateway {
 public:
  Gateway(TemplateRegistry registry, std::shared_ptr<ChatProvider> provider,
          int max_retries = 2)
      : registry_(std::move(registry)), provider_(std::move(provider)),
        max_retries_(max_retries) {}

  const TemplateRegistry& registry() const { return registry_; }
  std::string provider_id() const { return provider_->id(); }
  int max_retries() const { return max_retries_; }

  std::string render_prompt(const std::string& template_id, const Bindings& bindings) const {
    return registry_.render(template_id, bindings);
  }

  /// Renders, calls the provider and validates; on validation failure the
  /// prompt is re-sent with a corrective instruction up to max_retries times.
  CompletionResult complete_structured(const CompletionRequest& request,
                                       const AcceptCheck& accept = {}) const {
    const auto& schema = registry_.get_schema(request.schema_id);
    const std::string prompt = render_prompt(request.template_id, request.bindings);

    CompletionResult result;
    result.provider_id = provider_->id();
    std::vector<std::string> last_errors;
    for (int attempt = 1; attempt <= max_retries_ + 1; ++attempt) {
      ProviderCall call;
      call.template_id = request.template_id;
      call.schema_id = request.schema_id;
      call.bindings = request.bindings;
      call.image_refs = request.image_refs;
      call.schema = &schema;
      call.attempt = attempt;
      call.prompt = prompt;
      if (attempt > 1) {
        call.prompt += "\n" + std::string(kCorrectiveInstruction);
        call.prompt += " Problems with the previous reply: " + text::join(last_errors, "; ") + "\n";
      }
      result.raw_text = provider_->complete(call);
      result.attempt_count = attempt;
      auto v = validate_output(result.raw_text, schema);
      if (v.ok() && accept) {
        if (auto problem = accept(*v.parsed)) v.errors.push_back(*problem);
      }
      if (v.errors.empty()) {
        result.parsed = std::move(v.parsed);
        result.errors.clear();
        return result;
      }
      last_errors = v.errors;
      result.errors = v.errors;
    }
    result.validation_failed = true;
    return result;
  }

 private:
  TemplateRegistry registry_;
  std::shared_ptr<ChatProvider> provider_;
  int max_retries_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class ProviderKind { kMock, kHttp };

struct GatewayConfig {
  ProviderKind provider = ProviderKind::kMock;
  std::string endpoint;
  std::string model;
  int max_retries = 2;
  double timeout_s = 30.0;
  std::string embedding_endpoint;
  std::string embedding_model;
  std::filesystem::path fixtures_dir;

  static constexpr const char* kApiKeyEnv = "MINDFUSE_API_KEY";

  static GatewayConfig from_json(const json& j) {
    GatewayConfig c;
    const auto kind = j.value("provider", std::string("mock"));
    if (kind == "mock") {
      c.provider = ProviderKind::kMock;
    } else if (kind == "http") {
      c.provider = ProviderKind::kHttp;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown provider kind " + kind);
    }
    c.endpoint = j.value("endpoint", std::string());
    c.model = j.value("model", std::string());
    c.max_retries = j.value("max_retries", 2);
    c.timeout_s = j.value("timeout_s", 30.0);
    c.embedding_endpoint = j.value("embedding_endpoint", std::string());
    c.embedding_model = j.value("embedding_model", std::string());
    c.fixtures_dir = j.value("fixtures_dir", std::string());
    if (c.max_retries < 0) throw Error(ErrorCode::kInvalidArgument, "max_retries < 0");
    if (c.provider == ProviderKind::kHttp && c.endpoint.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "http provider needs endpoint");
    }
    return c;
  }

  static GatewayConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open config " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "config is not JSON");
    return from_json(j);
  }
};

}  // namespace mindfuse::llm
