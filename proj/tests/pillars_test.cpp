#include "mindfuse/pillars.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"

namespace mindfuse {
namespace {

llm::TemplateRegistry shipped() { return llm::TemplateRegistry::load_dir(MINDFUSE_TEMPLATES_DIR); }

AdCreative make_ad(const std::string& brand, const std::string& body,
                   std::optional<std::string> headline = std::nullopt) {
  AdCreative ad;
  ad.brand = brand;
  ad.body_text = body;
  ad.headline = std::move(headline);
  ad.first_seen = *Date::parse("2023-10-01");
  ad.last_seen = *Date::parse("2023-10-31");
  ad.id = ad_content_id(brand, body, {});
  return ad;
}

std::vector<AdCreative> ten_ads() {
  std::vector<AdCreative> ads;
  for (int i = 0; i < 10; ++i) {
    ads.push_back(make_ad(i % 2 ? "Grab" : "Gojek", "Ad body number " + std::to_string(i) +
                                                        " about rides for teams."));
  }
  return ads;
}

const char* kCanned =
    R"(Sure. {"audience":"finance decision-makers","insight":"Month-end closes stall on a pile of ride receipts",)"
    R"("need":"control over company travel spend","product":"corporate ride-hailing",)"
    R"("value_proposition":"every trip on one monthly invoice","emotional_appeal":"relief",)"
    R"("tone":"brisk and practical","archetype":"ruler"})";

TEST(Extract, CannedRecordFromMockFixture) {
  const auto reg = shipped();
  const auto ad = make_ad("Gojek", "Give your team GoCorp and close the books faster.",
                          "Corporate rides, one invoice");
  auto mock = std::make_shared<llm::MockProvider>();
  mock->add_fixture(reg.render(kPillarTemplate, {{"brand", "Gojek"},
                                                 {"headline", "Corporate rides, one invoice"},
                                                 {"body_text", ad.body_text}}),
                    kCanned);
  llm::Gateway gw(reg, mock);
  const auto p = extract_pillars(gw, ad);
  const ContentPillars expected{ad.id,
                                "finance decision-makers",
                                "Month-end closes stall on a pile of ride receipts",
                                "control over company travel spend",
                                "corporate ride-hailing",
                                "every trip on one monthly invoice",
                                "relief",
                                "brisk and practical",
                                "ruler"};
  EXPECT_EQ(p, expected);
}

TEST(Extract, EmptyHeadlineUsesBodyAlone) {
  llm::Bindings seen;
  auto provider = std::make_shared<llm::ScriptedProvider>("s", [&](const llm::ProviderCall& c) {
    seen = c.bindings;
    return std::string(R"({"audience":"a","insight":"b"})");
  });
  llm::Gateway gw(shipped(), provider);
  const auto p = extract_pillars(gw, make_ad("Grab", "Only a body.", std::string()));
  EXPECT_FALSE(seen.count("headline"));
  EXPECT_EQ(seen.at("body_text"), "Only a body.");
  EXPECT_EQ(p.audience, "a");
  // Optional fields the model left out become "unknown".
  EXPECT_EQ(p.need, kUnknown);
  EXPECT_EQ(p.archetype, kUnknown);
}

TEST(Extract, EmptyAudienceFails) {
  llm::Gateway gw(shipped(), llm::ScriptedProvider::sequence({R"({"audience":"  ","insight":"b"})"}));
  try {
    extract_pillars(gw, make_ad("Grab", "Body."));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExtractionFailed);
    EXPECT_EQ(e.detail(), "audience empty");
  }
}

TEST(Extract, ValidationExhaustionFails) {
  llm::Gateway gw(shipped(), llm::ScriptedProvider::sequence({"not an object"}));
  try {
    extract_pillars(gw, make_ad("Grab", "Body."));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExtractionFailed);
  }
}

TEST(Batch, EmptyInput) {
  llm::Gateway gw(shipped(), std::make_shared<llm::MockProvider>());
  const auto t = batch_extract(gw, {});
  EXPECT_TRUE(t.rows.empty());
  EXPECT_TRUE(t.failures.empty());
}

std::shared_ptr<llm::ScriptedProvider> failing_on(std::set<std::string> bodies) {
  return std::make_shared<llm::ScriptedProvider>("s", [bodies](const llm::ProviderCall& c) {
    if (bodies.count(c.bindings.at("body_text"))) return std::string("{}");
    return llm::MockProvider::synthesize(c);
  });
}

TEST(Batch, OneScriptedFailure) {
  const auto ads = ten_ads();
  llm::Gateway gw(shipped(), failing_on({ads[3].body_text}));
  const auto t = batch_extract(gw, ads);
  EXPECT_EQ(t.rows.size(), 9u);
  ASSERT_EQ(t.failures.size(), 1u);
  EXPECT_EQ(t.failures[0].ad_id, ads[3].id);
  EXPECT_TRUE(std::is_sorted(t.rows.begin(), t.rows.end(),
                             [](const auto& a, const auto& b) { return a.ad_id < b.ad_id; }));
}

TEST(Batch, DeterministicAndScheduleIndependent) {
  const auto ads = ten_ads();
  llm::Gateway gw(shipped(), std::make_shared<llm::MockProvider>());
  const auto a = batch_extract(gw, ads);
  const auto b = batch_extract(gw, ads);
  EXPECT_EQ(a, b);
  auto reversed = ads;
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_EQ(batch_extract(gw, reversed, 4), a);
  EXPECT_EQ(export_pillars(a), export_pillars(batch_extract(gw, ads, 3)));
}

TEST(Batch, DuplicateIdsRejected) {
  auto ads = ten_ads();
  ads.push_back(ads[0]);
  llm::Gateway gw(shipped(), std::make_shared<llm::MockProvider>());
  EXPECT_THROW(batch_extract(gw, ads), Error);
}

// rows and failures partition the input, whatever fails and however many
// threads run.
TEST(BatchProperty, RowsAndFailuresPartitionInput) {
  std::mt19937_64 rng(3);
  std::vector<AdCreative> pool;
  for (int i = 0; i < 40; ++i) pool.push_back(make_ad("B", "Body " + std::to_string(i) + " text"));
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<AdCreative> ads;
    std::set<std::string> fail;
    for (const auto& ad : pool) {
      if (rng() % 3 == 0) continue;
      ads.push_back(ad);
      if (rng() % 4 == 0) fail.insert(ad.body_text);
    }
    llm::Gateway gw(shipped(), failing_on(fail), 0);
    const auto t = batch_extract(gw, ads, 1 + static_cast<unsigned>(rng() % 4));
    ASSERT_EQ(t.rows.size() + t.failures.size(), ads.size());
    ASSERT_EQ(t.failures.size(), fail.size());
    std::set<std::string> seen;
    for (const auto& r : t.rows) ASSERT_TRUE(seen.insert(r.ad_id).second);
    for (const auto& f : t.failures) ASSERT_TRUE(seen.insert(f.ad_id).second);
    for (const auto& ad : ads) ASSERT_TRUE(seen.count(ad.id));
  }
}

TEST(Export, OneRecordPerLineWithExactKeys) {
  llm::Gateway gw(shipped(), std::make_shared<llm::MockProvider>());
  const auto t = batch_extract(gw, ten_ads());
  std::istringstream in(export_pillars(t));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    std::set<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.insert(k);
    EXPECT_EQ(keys, (std::set<std::string>{"ad_id", "audience", "insight", "need", "product",
                                           "value_proposition", "emotional_appeal", "tone",
                                           "archetype"}));
    EXPECT_EQ(pillars_from_json(j), t.rows[n]);
    ++n;
  }
  EXPECT_EQ(n, t.rows.size());
}

}  // namespace
}  // namespace mindfuse
