#include "mindfuse/ad_store.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"

namespace mindfuse {
namespace {

using testing::data_path;
using testing::read_file;
using testing::scratch_dir;

std::set<std::string> distinct_lines(const std::string& text) {
  std::set<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.insert(line);
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<AdCreative>& ads) {
  std::vector<std::string> ids;
  for (const auto& a : ads) ids.push_back(a.id);
  return ids;
}

TEST(Ingest, EmptyFile) {
  AdStore store(scratch_dir("ingest_empty"));
  const auto r = store.ingest_file(data_path("ads_empty.jsonl"));
  EXPECT_EQ(r.read, 0u);
  EXPECT_EQ(r.accepted, 0u);
  EXPECT_EQ(r.duplicates, 0u);
  EXPECT_EQ(r.rejected, 0u);
}

TEST(Ingest, DedupFixture) {
  const auto path = data_path("ads_dedup.jsonl");
  // Manual dedup: byte-identical lines collapse.
  const auto unique = distinct_lines(read_file(path)).size();
  ASSERT_EQ(unique, 4u);

  AdStore store(scratch_dir("ingest_dedup"));
  const auto r = store.ingest_file(path);
  EXPECT_EQ(r.read, 5u);
  EXPECT_EQ(r.accepted, unique);
  EXPECT_EQ(r.duplicates, 1u);
  EXPECT_EQ(r.rejected, 0u);
  EXPECT_EQ(r.read, r.accepted + r.duplicates + r.rejected);
  EXPECT_EQ(store.size(), 4u);
}

TEST(Ingest, ReingestIsAllDuplicates) {
  const auto dir = scratch_dir("ingest_twice");
  AdStore store(dir);
  const auto first = store.ingest_file(data_path("ads_dedup.jsonl"));
  const auto log_after_first = read_file(dir / "ads.jsonl");
  const auto second = store.ingest_file(data_path("ads_dedup.jsonl"));
  EXPECT_EQ(second.accepted, 0u);
  EXPECT_EQ(second.duplicates, first.accepted + first.duplicates);
  EXPECT_EQ(read_file(dir / "ads.jsonl"), log_after_first);
}

TEST(Ingest, RejectReasonsAreRecordedPerLine) {
  AdStore store(scratch_dir("ingest_reject"));
  const auto r = store.ingest_file(data_path("ads_reject.jsonl"));
  EXPECT_EQ(r.read, 5u);
  EXPECT_EQ(r.accepted, 2u);
  EXPECT_EQ(r.rejected, 3u);
  ASSERT_EQ(r.reject_reasons.size(), 3u);
  EXPECT_EQ(r.reject_reasons[0], std::make_pair(std::size_t{2}, std::string("missing body_text")));
  EXPECT_EQ(r.reject_reasons[1].first, 3u);
  EXPECT_EQ(r.reject_reasons[2], std::make_pair(std::size_t{4}, std::string("first_seen after last_seen")));
  // Unknown key and unknown platform are warnings, not rejections.
  EXPECT_EQ(r.warnings.size(), 2u);
  const auto tiktok = store.filter({.keyword_any = std::vector<std::string>{"odd platform"}});
  ASSERT_EQ(tiktok.size(), 1u);
  EXPECT_EQ(tiktok[0].platform, Platform::kOther);
}

TEST(Ingest, BrandHintFillsMissingBrand) {
  AdStore store(scratch_dir("ingest_hint"));
  std::istringstream in(
      R"({"body_text":"x y z","first_seen":"2024-01-01","last_seen":"2024-01-02"})"
      "\n");
  const auto r = store.ingest(in, std::string("Gojek"));
  EXPECT_EQ(r.accepted, 1u);
  EXPECT_EQ(store.filter({})[0].brand, "Gojek");

  std::istringstream again(
      R"({"body_text":"x y z 2","first_seen":"2024-01-01","last_seen":"2024-01-02"})"
      "\n");
  const auto r2 = store.ingest(again);
  EXPECT_EQ(r2.rejected, 1u);
  EXPECT_EQ(r2.reject_reasons[0].second, "missing brand");
}

TEST(Ingest, MissingSourceIsIoError) {
  AdStore store(scratch_dir("ingest_missing"));
  try {
    store.ingest_file("/nonexistent/ads.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

TEST(AdId, DeterministicAndWhitespaceInsensitive) {
  const auto a = ad_content_id("Gojek", "Corporate  rides,\n one invoice", {"b.png", "a.png"});
  const auto b = ad_content_id("Gojek", " Corporate rides, one invoice ", {"a.png", "b.png"});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 16u);
  EXPECT_NE(a, ad_content_id("Grab", "Corporate rides, one invoice", {"a.png", "b.png"}));
  EXPECT_NE(a, ad_content_id("Gojek", "Corporate rides, one invoice", {"a.png"}));
}

class FilterFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<AdStore>(scratch_dir("filter"));
    store_->ingest_file(data_path("ads_filter.jsonl"));
  }
  std::unique_ptr<AdStore> store_;
};

TEST_F(FilterFixture, NoClausesReturnsAllSorted) {
  const auto all = store_->filter({});
  ASSERT_EQ(all.size(), 4u);
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::tie(a.brand, a.id) < std::tie(b.brand, b.id);
  }));
}

TEST_F(FilterFixture, KeywordAnyMatchesGrep) {
  // Oracle: case-insensitive grep over the raw fixture lines.
  std::size_t grep_hits = 0;
  std::istringstream in(read_file(data_path("ads_filter.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (text::to_lower(line).find("corporate") != std::string::npos) ++grep_hits;
  }
  ASSERT_EQ(grep_hits, 2u);
  const auto hits = store_->filter({.keyword_any = std::vector<std::string>{"corporate"}});
  EXPECT_EQ(hits.size(), grep_hits);
  for (const auto& ad : hits) EXPECT_TRUE(text::contains_ci(ad.body_text, "Corporate"));
}

TEST_F(FilterFixture, KeywordSearchesHeadlineToo) {
  const auto hits = store_->filter({.keyword_all = std::vector<std::string>{"gocorp"}});
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].headline.value_or(""), "GoCorp");
}

TEST_F(FilterFixture, DateRangeExcludingAllIsEmpty) {
  FilterSpec f;
  f.date_range = std::make_pair(*Date::parse("2025-01-01"), *Date::parse("2025-12-31"));
  EXPECT_TRUE(store_->filter(f).empty());
}

TEST_F(FilterFixture, BrandsAreCaseInsensitive) {
  EXPECT_EQ(store_->filter({.brands = std::vector<std::string>{"grab"}}).size(), 2u);
}

TEST_F(FilterFixture, InvertedDateRangeIsRejected) {
  FilterSpec f;
  f.date_range = std::make_pair(*Date::parse("2024-01-02"), *Date::parse("2024-01-01"));
  EXPECT_THROW(store_->filter(f), Error);
}

TEST_F(FilterFixture, GetKnownUnknownAndDeduplicated) {
  const auto all = store_->filter({});
  EXPECT_EQ(store_->get(all[1].id), all[1]);
  try {
    store_->get("0000000000000000");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
}

TEST(Get, DeduplicatedIdResolvesToSurvivor) {
  AdStore store(scratch_dir("get_dedup"));
  store.ingest_file(data_path("ads_dedup.jsonl"));
  const auto id = ad_content_id(
      "Gojek", "Corporate rides, one invoice. Give your team GoCorp and close the books faster.",
      {"media/gocorp_1.png"});
  const auto ad = store.get(id);
  EXPECT_EQ(ad.headline.value_or(""), "Corporate rides, one invoice");
  EXPECT_EQ(store.filter({.keyword_any = std::vector<std::string>{"one invoice"}}).size(), 1u);
}

TEST(Persistence, ReloadYieldsIdenticalRecords) {
  const auto dir = scratch_dir("persist");
  std::vector<AdCreative> before;
  {
    AdStore store(dir);
    store.ingest_file(data_path("ads_dedup.jsonl"));
    store.ingest_file(data_path("ads_filter.jsonl"));
    before = store.filter({});
  }
  AdStore reopened(dir);
  EXPECT_EQ(reopened.filter({}), before);
}

TEST(Persistence, JsonRoundTrip) {
  AdStore store(scratch_dir("roundtrip"));
  store.ingest_file(data_path("ads_dedup.jsonl"));
  for (const auto& ad : store.filter({})) {
    EXPECT_EQ(ad_from_json(to_json(ad)), ad);
    EXPECT_LE(ad.first_seen, ad.last_seen);
  }
}

// Adding clauses never widens the result: filter(A and B) is a subset of
// filter(A), and every survivor satisfies B.
TEST(FilterProperty, ConjunctionIsSubset) {
  AdStore store(scratch_dir("filter_prop"));
  store.ingest_file(data_path("ads_dedup.jsonl"));
  store.ingest_file(data_path("ads_filter.jsonl"));
  const std::vector<std::string> words = {"corporate", "office", "ride", "team", "weekend",
                                          "invoice", "lunch", "book", "grab", "the"};
  const std::vector<std::string> brands = {"Gojek", "Grab", "Other"};
  const auto base = Date::parse("2023-08-01")->days();
  std::mt19937_64 rng(7);
  auto pick = [&](const auto& pool) {
    std::vector<std::string> out;
    const auto n = 1 + rng() % 2;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng() % pool.size()]);
    return out;
  };
  auto random_spec = [&] {
    FilterSpec f;
    if (rng() % 2) f.brands = pick(brands);
    if (rng() % 2) f.keyword_any = pick(words);
    if (rng() % 2) f.keyword_all = pick(words);
    if (rng() % 2) {
      const auto from = base + std::chrono::days(rng() % 120);
      f.date_range = std::make_pair(Date(from), Date(from + std::chrono::days(rng() % 90)));
    }
    return f;
  };
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_spec();
    auto b = random_spec();
    // Only keep B clauses that A leaves free, so A and B is a single spec.
    FilterSpec ab = a;
    if (a.brands) b.brands.reset();
    if (a.keyword_any) b.keyword_any.reset();
    if (a.keyword_all) b.keyword_all.reset();
    if (a.date_range) b.date_range.reset();
    if (b.brands) ab.brands = b.brands;
    if (b.keyword_any) ab.keyword_any = b.keyword_any;
    if (b.keyword_all) ab.keyword_all = b.keyword_all;
    if (b.date_range) ab.date_range = b.date_range;

    const auto in_a = ids_of(store.filter(a));
    for (const auto& ad : store.filter(ab)) {
      ASSERT_NE(std::find(in_a.begin(), in_a.end(), ad.id), in_a.end()) << "trial " << trial;
      ASSERT_TRUE(b.matches(ad)) << "trial " << trial;
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(IngestProperty, IdempotentOnRandomSubsets) {
  std::vector<std::string> lines;
  for (const auto* f : {"ads_dedup.jsonl", "ads_filter.jsonl", "ads_reject.jsonl"}) {
    std::istringstream in(read_file(data_path(f)));
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::string file;
    for (const auto& l : lines) {
      if (rng() % 2) file += l + "\n";
    }
    const auto dir = scratch_dir("idem");
    AdStore store(dir);
    std::istringstream a(file);
    const auto r1 = store.ingest(a);
    ASSERT_EQ(r1.read, r1.accepted + r1.duplicates + r1.rejected);
    const auto snapshot = store.filter({});
    std::istringstream b(file);
    const auto r2 = store.ingest(b);
    ASSERT_EQ(r2.accepted, 0u);
    ASSERT_EQ(store.filter({}), snapshot);
    ASSERT_EQ(AdStore(dir).filter({}), snapshot);
  }
}

}  // namespace
}  // namespace mindfuse
