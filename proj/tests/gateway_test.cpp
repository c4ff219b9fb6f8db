#include "mindfuse/llm_gateway.hpp"
#include "mindfuse/http_provider.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "support.hpp"

namespace mindfuse::llm {
namespace {

using mindfuse::testing::golden_path;
using mindfuse::testing::read_file;
using mindfuse::testing::scratch_dir;

TemplateRegistry shipped() { return TemplateRegistry::load_dir(MINDFUSE_TEMPLATES_DIR); }

StructuredSchema pillar_schema() { return shipped().get_schema("pillars"); }

const char* kValidPillars =
    R"({"audience":"finance decision-makers","insight":"expense reports eat the month-end",)"
    R"("need":"control","product":"corporate ride-hailing","value_proposition":"one invoice",)"
    R"("emotional_appeal":"relief","tone":"brisk","archetype":"ruler"})";

TEST(Template, NoPlaceholdersRendersVerbatim) {
  const auto t = PromptTemplate::parse("plain", "## A\nfirst line\nsecond line\n\n## B\nlast\n");
  EXPECT_TRUE(t.placeholders().empty());
  EXPECT_EQ(t.render({}), "## A\nfirst line\nsecond line\n\n## B\nlast\n");
}

TEST(Template, MissingBindingNamesThePlaceholder) {
  const auto reg = shipped();
  try {
    reg.render("brief_story", {{"challenge_name", "c"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingBinding);
    EXPECT_EQ(e.detail(), "persona_name");
  }
}

TEST(Template, UnknownTemplate) {
  try {
    shipped().render("no_such_template", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownTemplate);
  }
}

TEST(Template, OptionalPlaceholderMayBeAbsent) {
  const auto reg = shipped();
  const auto out = reg.render("extract_pillars", {{"brand", "Gojek"}, {"body_text", "Body."}});
  EXPECT_NE(out.find("Headline: \n"), std::string::npos);
  EXPECT_EQ(out.find("{{"), std::string::npos);
}

TEST(Template, MetadataVersionIsRead) {
  EXPECT_EQ(shipped().get_template("extract_pillars").version(), "1");
  EXPECT_EQ(PromptTemplate::parse("x", "## S\nbody").version(), "1");
  EXPECT_EQ(PromptTemplate::parse("x", "# version: 3\n## S\nbody").version(), "3");
}

TEST(Template, BadPlaceholderIsRejected) {
  EXPECT_THROW(PromptTemplate::parse("x", "## S\n{{not ok}}"), Error);
}

TEST(Template, SubstitutedValuesAreNotRescanned) {
  const auto t = PromptTemplate::parse("x", "## S\n{{a}} {{b}}");
  EXPECT_EQ(t.render({{"a", "{{b}}"}, {"b", "B"}}), "## S\n{{b}} B\n");
}

TEST(TemplateGolden, ExtractPillars) {
  const auto out = shipped().render(
      "extract_pillars",
      {{"brand", "Gojek"},
       {"headline", "Corporate rides, one invoice"},
       {"body_text", "Give your team GoCorp and close the books faster."}});
  EXPECT_EQ(out, read_file(golden_path("extract_pillars.txt")));
}

TEST(TemplateGolden, BriefStory) {
  const auto out = shipped().render(
      "brief_story", {{"persona_name", "Efficiency Enthusiasts"},
                      {"persona_description", "Owners who count every minute of the workday."},
                      {"challenge_name", "Streamlining Work Transport Processes"},
                      {"challenge_description", "Staff travel is booked and reimbursed by hand."},
                      {"offering_name", "Corporate Car Hailing"},
                      {"brand", "Gojek"},
                      {"offering_description", "Company-billed rides with one monthly invoice."}});
  EXPECT_EQ(out, read_file(golden_path("brief_story.txt")));
}

// Every shipped template renders with no marker left once all placeholders
// are bound.
TEST(TemplateProperty, FullBindingLeavesNoMarkers) {
  const auto reg = TemplateRegistry::load_dir(MINDFUSE_TEMPLATES_DIR);
  std::mt19937_64 rng(5);
  for (const auto* id : {"extract_pillars", "synthesize_persona", "synthesize_challenge",
                         "brief_story", "distill_insight", "telemetry_analysis"}) {
    const auto& t = reg.get_template(id);
    for (int trial = 0; trial < 200; ++trial) {
      Bindings b;
      for (const auto& p : t.placeholders()) {
        if (p.optional && rng() % 2) continue;
        std::string v;
        for (std::size_t i = 0, n = rng() % 12; i < n; ++i) v.push_back("ab {}?\n"[rng() % 7]);
        b[p.name] = v;
      }
      const auto out = t.render(b);
      ASSERT_EQ(out, t.render(b));
      // A value may legitimately contain braces; check the template's own
      // markers are gone by rendering with brace-free values.
      Bindings clean;
      for (const auto& [k, v] : b) clean[k] = "v";
      ASSERT_EQ(t.render(clean).find("{{"), std::string::npos) << id;
    }
  }
}

TEST(Schema, ParseKindsAndOptional) {
  const auto s = StructuredSchema::parse("s", "# comment\na: string\nb: string_list optional\nc: number\n");
  ASSERT_EQ(s.fields().size(), 3u);
  EXPECT_EQ(s.fields()[1].kind, FieldKind::kStringList);
  EXPECT_FALSE(s.fields()[1].required);
  EXPECT_TRUE(s.fields()[2].required);
}

TEST(Schema, DuplicateFieldAndUnknownKindRejected) {
  EXPECT_THROW(StructuredSchema::parse("s", "a: string\na: number\n"), Error);
  EXPECT_THROW(StructuredSchema::parse("s", "a: blob\n"), Error);
}

TEST(Validate, ExactObject) {
  const auto v = validate_output(kValidPillars, pillar_schema());
  EXPECT_TRUE(v.ok());
  EXPECT_TRUE(v.errors.empty());
}

TEST(Validate, ObjectInsideProse) {
  const auto v = validate_output(std::string("Here is the analysis: ") + kValidPillars +
                                     "\nHope this helps {not json}.",
                                 pillar_schema());
  ASSERT_TRUE(v.ok());
  EXPECT_EQ((*v.parsed)["audience"], "finance decision-makers");
}

TEST(Validate, MissingRequiredField) {
  const auto v = validate_output(R"({"insight":"x"})", pillar_schema());
  EXPECT_FALSE(v.parsed);
  EXPECT_EQ(v.errors, std::vector<std::string>{"missing: audience"});
}

TEST(Validate, WrongKindAndNoObject) {
  const auto v = validate_output(R"({"audience":3,"insight":"x"})", pillar_schema());
  ASSERT_EQ(v.errors.size(), 1u);
  EXPECT_EQ(v.errors[0].rfind("wrong kind: audience", 0), 0u);
  EXPECT_EQ(validate_output("no braces at all", pillar_schema()).errors,
            std::vector<std::string>{"no object found"});
}

TEST(Validate, BracesInsideStringsDoNotConfuseBalancing) {
  const auto v =
      validate_output(R"(note {x} then {"audience":"a } b","insight":"{c}"})", pillar_schema());
  ASSERT_TRUE(v.ok());
  EXPECT_EQ((*v.parsed)["audience"], "a } b");
}

// validate_output(serialize(m)) == m for schema-valid maps.
TEST(ValidateProperty, SerializeRoundTrip) {
  const StructuredSchema schema("mixed", {{"s", FieldKind::kString, true},
                                          {"l", FieldKind::kStringList, true},
                                          {"n", FieldKind::kNumber, true},
                                          {"o", FieldKind::kString, false}});
  std::mt19937_64 rng(21);
  auto word = [&] {
    std::string w;
    for (std::size_t i = 0, n = rng() % 10; i < n; ++i) w.push_back("xyz{}\"\\ \n:,"[rng() % 12]);
    return w;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    json m = {{"s", word()}, {"n", static_cast<double>(rng() % 100000) / 7.0}};
    json list = json::array();
    for (std::size_t i = 0, n = rng() % 4; i < n; ++i) list.push_back(word());
    m["l"] = list;
    if (rng() % 2) m["o"] = word();
    const auto v = validate_output(m.dump(), schema);
    ASSERT_TRUE(v.ok()) << m.dump();
    ASSERT_EQ(*v.parsed, m);
  }
}

// Arbitrary text never makes validate_output throw.
TEST(ValidateProperty, NeverThrowsOnNoise) {
  std::mt19937_64 rng(8);
  const std::string alphabet = "{}[]\":,\\ abc123\n";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    for (std::size_t i = 0, n = rng() % 40; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    ValidationResult v;
    ASSERT_NO_THROW(v = validate_output(s, pillar_schema())) << s;
    ASSERT_EQ(v.parsed.has_value(), v.errors.empty());
  }
}

CompletionRequest pillar_request() {
  return {"extract_pillars", {{"brand", "Gojek"}, {"body_text", "Corporate rides, one invoice."}},
          "pillars", {}};
}

TEST(Complete, MockFixtureHitOnFirstAttempt) {
  const auto reg = shipped();
  const auto prompt = reg.render("extract_pillars", pillar_request().bindings);
  const auto dir = scratch_dir("mock_fixtures");
  {
    std::ofstream(dir / (MockProvider::key_for(prompt) + ".txt")) << kValidPillars;
    std::ofstream(dir / "ignored.json") << "{}";
  }
  Gateway gw(reg, std::make_shared<MockProvider>(dir));
  const auto r = gw.complete_structured(pillar_request());
  ASSERT_TRUE(r.parsed);
  EXPECT_EQ(r.attempt_count, 1);
  EXPECT_EQ(r.provider_id, "mock");
  EXPECT_EQ((*r.parsed)["product"], "corporate ride-hailing");
  EXPECT_FALSE(r.validation_failed);
}

TEST(Complete, MalformedTwiceThenValid) {
  std::vector<std::string> prompts;
  auto provider = std::make_shared<ScriptedProvider>("scripted", [&](const ProviderCall& c) {
    prompts.push_back(c.prompt);
    return c.attempt < 3 ? std::string("sorry, no object") : std::string(kValidPillars);
  });
  Gateway gw(shipped(), provider);
  const auto r = gw.complete_structured(pillar_request());
  ASSERT_TRUE(r.parsed);
  EXPECT_EQ(r.attempt_count, 3);
  ASSERT_EQ(prompts.size(), 3u);
  EXPECT_EQ(prompts[0].find(kCorrectiveInstruction), std::string::npos);
  EXPECT_NE(prompts[1].find(kCorrectiveInstruction), std::string::npos);
  EXPECT_NE(prompts[1].find("no object found"), std::string::npos);
  EXPECT_EQ(prompts[1].rfind(prompts[0], 0), 0u);
}

TEST(Complete, AlwaysMalformedExhaustsRetries) {
  Gateway gw(shipped(), ScriptedProvider::sequence({"{\"insight\":\"x\"}"}), 2);
  const auto r = gw.complete_structured(pillar_request());
  EXPECT_FALSE(r.parsed);
  EXPECT_TRUE(r.validation_failed);
  EXPECT_EQ(r.attempt_count, 3);
  EXPECT_EQ(r.raw_text, "{\"insight\":\"x\"}");
  EXPECT_EQ(r.errors, std::vector<std::string>{"missing: audience"});
}

TEST(Complete, AcceptCheckTriggersRetry) {
  Gateway gw(shipped(), ScriptedProvider::sequence({R"({"audience":"","insight":"i"})", kValidPillars}));
  const auto r = gw.complete_structured(pillar_request(), [](const json& j) {
    return j["audience"] == "" ? std::optional<std::string>("audience empty") : std::nullopt;
  });
  ASSERT_TRUE(r.parsed);
  EXPECT_EQ(r.attempt_count, 2);
}

TEST(Complete, ProviderErrorsPropagate) {
  auto down = std::make_shared<ScriptedProvider>("down", [](const ProviderCall&) -> std::string {
    throw Error(ErrorCode::kProviderUnavailable, "connection refused");
  });
  Gateway gw(shipped(), down);
  try {
    gw.complete_structured(pillar_request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProviderUnavailable);
  }
}

TEST(Mock, SynthesizedOutputSatisfiesSchemaAndIsDeterministic) {
  Gateway gw(shipped(), std::make_shared<MockProvider>());
  const auto a = gw.complete_structured(pillar_request());
  const auto b = gw.complete_structured(pillar_request());
  ASSERT_TRUE(a.parsed);
  EXPECT_EQ(a.raw_text, b.raw_text);
  EXPECT_NE((*a.parsed)["audience"].get<std::string>().find("Corporate rides"), std::string::npos);
}

TEST(Mock, GatewayIsShareableAcrossThreads) {
  Gateway gw(shipped(), std::make_shared<MockProvider>());
  std::vector<std::thread> threads;
  std::vector<std::string> outs(8);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    threads.emplace_back([&, i] { outs[i] = gw.complete_structured(pillar_request()).raw_text; });
  }
  for (auto& t : threads) t.join();
  for (const auto& o : outs) EXPECT_EQ(o, outs[0]);
}

TEST(TokenBucket, CapacityThenEmpty) {
  TokenBucket bucket(0.001, 2);
  EXPECT_TRUE(bucket.try_acquire());
  EXPECT_TRUE(bucket.try_acquire());
  EXPECT_FALSE(bucket.try_acquire());
}

TEST(Config, ParsesAndValidates) {
  const auto c = GatewayConfig::from_json(
      {{"provider", "http"}, {"endpoint", "http://localhost:1/v1/chat"}, {"model", "m"},
       {"max_retries", 1}, {"timeout_s", 5}});
  EXPECT_EQ(c.provider, ProviderKind::kHttp);
  EXPECT_EQ(c.max_retries, 1);
  EXPECT_DOUBLE_EQ(c.timeout_s, 5.0);
  EXPECT_EQ(GatewayConfig::from_json(json::object()).provider, ProviderKind::kMock);
  EXPECT_THROW(GatewayConfig::from_json({{"provider", "http"}}), Error);
  EXPECT_THROW(GatewayConfig::from_json({{"provider", "carrier-pigeon"}}), Error);
  EXPECT_THROW(GatewayConfig::from_json({{"max_retries", -1}}), Error);
}

TEST(Url, Split) {
  const auto u = split_url("https://api.example.com:8443/v1/chat/completions");
  EXPECT_EQ(u.origin, "https://api.example.com:8443");
  EXPECT_EQ(u.path, "/v1/chat/completions");
  EXPECT_EQ(split_url("http://h").path, "/");
  EXPECT_THROW(split_url("nota-url"), Error);
}

class StubServer {
 public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpProvider, ChatRoundTripWithImagesAndAuth) {
  StubServer stub;
  json seen;
  std::string auth;
  stub.server().Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(json{{"choices", {{{"message", {{"content", kValidPillars}}}}}}}.dump(),
                    "application/json");
  });
  ::setenv(GatewayConfig::kApiKeyEnv, "sk-test", 1);
  HttpChatProvider provider(stub.url("/v1/chat"), "gpt-test", 5.0, 100.0);
  ProviderCall call;
  call.prompt = "hello";
  call.image_refs = {"data:image/png;base64,AAAA"};
  EXPECT_EQ(provider.complete(call), kValidPillars);
  ::unsetenv(GatewayConfig::kApiKeyEnv);
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["model"], "gpt-test");
  const auto& content = seen["messages"][0]["content"];
  ASSERT_TRUE(content.is_array());
  EXPECT_EQ(content[0]["text"], "hello");
  EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,AAAA");
  EXPECT_EQ(provider.id(), "http:gpt-test");
}

TEST(HttpProvider, ErrorMapping) {
  StubServer stub;
  stub.server().Post("/busy", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
  });
  stub.server().Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    res.status = 504;
  });
  stub.server().Post("/odd", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"nothing\":1}", "application/json");
  });
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  ProviderCall call;
  call.prompt = "p";
  EXPECT_EQ(code_of([&] { HttpChatProvider(stub.url("/busy"), "m", 5).complete(call); }),
            ErrorCode::kProviderUnavailable);
  EXPECT_EQ(code_of([&] { HttpChatProvider(stub.url("/slow"), "m", 5).complete(call); }),
            ErrorCode::kTimeout);
  EXPECT_EQ(code_of([&] { HttpChatProvider(stub.url("/odd"), "m", 5).complete(call); }),
            ErrorCode::kProviderUnavailable);
  EXPECT_EQ(code_of([&] { HttpChatProvider("http://127.0.0.1:1/x", "m", 2).complete(call); }),
            ErrorCode::kProviderUnavailable);
}

TEST(HttpProvider, ReadTimeout) {
  StubServer stub;
  stub.server().Post("/stall", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content("{}", "application/json");
  });
  ProviderCall call;
  call.prompt = "p";
  try {
    HttpChatProvider(stub.url("/stall"), "m", 0.3).complete(call);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTimeout);
  }
}

TEST(HttpProvider, Embedding) {
  StubServer stub;
  stub.server().Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    res.set_content(json{{"data", {{{"embedding", {1.0, 2.0, body["input"].get<std::string>().size()}}}}}}.dump(),
                    "application/json");
  });
  HttpEmbeddingProvider e(stub.url("/v1/embeddings"), "emb", 5, 100);
  EXPECT_EQ(e.embed("abcd"), (std::vector<double>{1.0, 2.0, 4.0}));

  GatewayConfig cfg;
  EXPECT_EQ(make_embedding_provider(cfg)->id(), "offline-3gram-256");
  cfg.provider = ProviderKind::kHttp;
  cfg.endpoint = stub.url("/v1/chat");
  cfg.embedding_endpoint = stub.url("/v1/embeddings");
  cfg.embedding_model = "emb";
  EXPECT_EQ(make_embedding_provider(cfg)->id(), "http:emb");
}

}  // namespace
}  // namespace mindfuse::llm
