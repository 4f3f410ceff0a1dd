#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "resee/entity_pipeline.hpp"
#include "resee/error.hpp"

using namespace resee;
using namespace resee::entity;

namespace {

corpus::DialogueSession session_of(std::vector<std::string> texts) {
  corpus::DialogueSession s;
  s.session_id = "s";
  for (std::size_t i = 0; i < texts.size(); ++i) s.turns.push_back(resee::testing::turn(i, texts[i]));
  return s;
}

std::vector<std::string> surfaces(const std::vector<EntityRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.surface);
  return out;
}

EntityRecord record(std::string surface, std::size_t freq) {
  EntityRecord r;
  r.surface = std::move(surface);
  r.corpus_frequency = freq;
  return r;
}

SearchResponse images(std::size_t n, const std::string& tag) {
  SearchResponse r;
  for (std::size_t i = 0; i < n; ++i) r.images.push_back(resee::testing::image(tag + std::to_string(i)));
  return r;
}

class ThrowingTagger : public NerTagger {
 public:
  std::vector<TokenRange> tag(std::span<const std::string> tokens) const override {
    for (const auto& t : tokens) {
      if (t == "boom") throw std::runtime_error("tagger crashed");
    }
    return {};
  }
};

}  // namespace

TEST(Extract, NamedEntityAndNoun) {
  const std::vector<std::string> gazetteer{"Ikebana"};
  const std::vector<std::string> lexicon{"flower"};
  DictionaryNerTagger ner(gazetteer);
  LexiconNounTagger nouns(lexicon);
  const auto out = extract_entities(session_of({"I love Ikebana and flowers", "me too"}), ner, nouns);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].surface, "ikebana");
  EXPECT_EQ(out[0].kind, EntityKind::kNamedEntity);
  EXPECT_EQ(out[0].query, "Ikebana");
  EXPECT_EQ(out[1].surface, "flower");
  EXPECT_EQ(out[1].kind, EntityKind::kNoun);
}

TEST(Extract, NoNounsGivesEmptyList) {
  const std::vector<std::string> lexicon{"flower"};
  DictionaryNerTagger ner({});
  LexiconNounTagger nouns(lexicon);
  EXPECT_TRUE(extract_entities(session_of({"hello there", "how are you"}), ner, nouns).empty());
}

TEST(Extract, RepeatedNounIsOneRecord) {
  const std::vector<std::string> lexicon{"river"};
  DictionaryNerTagger ner({});
  LexiconNounTagger nouns(lexicon);
  const auto s = session_of({"the river", "a river", "rivers everywhere"});
  const auto out = extract_entities(s, ner, nouns);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].surface, "river");
  const std::vector<corpus::DialogueSession> corpus{s};
  const auto manifest = build_manifest(corpus, ner, nouns);
  ASSERT_EQ(manifest.records.size(), 1u);
  EXPECT_EQ(manifest.records[0].corpus_frequency, 3u);
  EXPECT_EQ(manifest.sessions[0].mentions.size(), 3u);
}

TEST(Extract, NamedEntityWinsOverNounAndCoversItsTokens) {
  const std::vector<std::string> gazetteer{"new york", "york"};
  const std::vector<std::string> lexicon{"york", "city"};
  DictionaryNerTagger ner(gazetteer);
  LexiconNounTagger nouns(lexicon);
  const auto out = extract_entities(session_of({"New York is a city", "I saw york"}), ner, nouns);
  EXPECT_EQ(surfaces(out), (std::vector<std::string>{"new york", "city", "york"}));
  EXPECT_EQ(out[2].kind, EntityKind::kNamedEntity);
}

TEST(Extract, TaggerFailureNamesTurn) {
  ThrowingTagger ner;
  LexiconNounTagger nouns({});
  try {
    extract_entities(session_of({"fine", "boom"}), ner, nouns);
    FAIL() << "expected an extraction error";
  } catch (const ExtractionError& e) {
    EXPECT_NE(std::string(e.what()).find("turn 1"), std::string::npos) << e.what();
  }
}

TEST(Extract, TurnOrderPermutationKeepsTheSet) {
  const auto ner = DictionaryNerTagger::load(resee::testing::data_path("ner.txt"));
  const auto nouns = LexiconNounTagger::load(resee::testing::data_path("nouns.txt"));
  std::vector<std::string> texts{"the apple and the river", "New York has a castle", "a dragon near the forest",
                                 "United States of tigers"};
  const auto base = surfaces(extract_entities(session_of(texts), ner, nouns));
  std::sort(texts.begin(), texts.end());
  do {
    auto got = surfaces(extract_entities(session_of(texts), ner, nouns));
    EXPECT_EQ(std::set<std::string>(got.begin(), got.end()), std::set<std::string>(base.begin(), base.end()));
  } while (std::next_permutation(texts.begin(), texts.end()));
}

TEST(Filter, BoundariesInclusive) {
  const std::vector<EntityRecord> in{record("a", 2), record("b", 3), record("c", 100), record("d", 101)};
  EXPECT_EQ(surfaces(filter_by_frequency(in, 3, 100)), (std::vector<std::string>{"b", "c"}));
  EXPECT_TRUE(filter_by_frequency({}, 3, 100).empty());
  EXPECT_THROW(filter_by_frequency(in, 5, 4), ConfigError);
}

TEST(Filter, ManifestDropsMentionsOfFilteredRecords) {
  const std::vector<std::string> lexicon{"river", "stone"};
  DictionaryNerTagger ner({});
  LexiconNounTagger nouns(lexicon);
  const std::vector<corpus::DialogueSession> corpus{session_of({"river river river", "stone"})};
  auto manifest = build_manifest(corpus, ner, nouns);
  apply_frequency_filter(manifest, 3, 100);
  EXPECT_EQ(surfaces(manifest.records), std::vector<std::string>{"river"});
  for (const auto& m : manifest.sessions[0].mentions) EXPECT_EQ(m.surface, "river");
}

TEST(Fetch, TruncatesToN) {
  MockSearchClient mock(3);
  SearchClient* clients[] = {&mock};
  const auto r = fetch_images(record("apple", 5), clients, 2);
  ASSERT_EQ(r.images.size(), 2u);
  EXPECT_EQ(r.images[0].provider, Provider::kMock);
  EXPECT_FALSE(r.fetch_failed);
}

TEST(Fetch, FallsThroughToSecondProvider) {
  MockSearchClient first(0, Provider::kProvider1);
  MockSearchClient second(1, Provider::kProvider2);
  SearchClient* clients[] = {&first, &second};
  const auto r = fetch_images(record("apple", 5), clients, 2);
  ASSERT_EQ(r.images.size(), 1u);
  EXPECT_EQ(r.images[0].provider, Provider::kProvider2);
  EXPECT_FALSE(r.fetch_failed);
}

TEST(Fetch, AllEmptySetsFailureFlag) {
  MockSearchClient a(0), b(0);
  SearchClient* clients[] = {&a, &b};
  const auto r = fetch_images(record("apple", 5), clients, 2);
  EXPECT_TRUE(r.images.empty());
  EXPECT_TRUE(r.fetch_failed);
}

TEST(Fetch, TransientErrorsRetryWithBoundedBackoff) {
  MockSearchClient mock(1);
  SearchResponse transient;
  transient.status = SearchStatus::kTransient;
  mock.script("apple", {transient, transient, images(1, "ok")});
  std::vector<long long> sleeps;
  RetryPolicy retry;
  retry.initial_backoff = std::chrono::milliseconds(100);
  retry.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  SearchClient* clients[] = {&mock};
  const auto r = fetch_images(record("apple", 5), clients, 1, retry);
  EXPECT_EQ(r.images.size(), 1u);
  EXPECT_EQ(sleeps, (std::vector<long long>{100, 200}));
  EXPECT_EQ(mock.backend_requests(), 3u);

  MockSearchClient stuck(1);
  stuck.set_default(transient);
  sleeps.clear();
  retry.max_attempts = 5;
  retry.max_backoff = std::chrono::milliseconds(300);
  SearchClient* stuck_clients[] = {&stuck};
  const auto failed = fetch_images(record("apple", 5), stuck_clients, 1, retry);
  EXPECT_TRUE(failed.fetch_failed);
  EXPECT_EQ(stuck.backend_requests(), 5u);
  EXPECT_EQ(sleeps, (std::vector<long long>{100, 200, 300, 300}));
}

TEST(Fetch, PermanentErrorSkipsProvider) {
  MockSearchClient broken(1, Provider::kProvider1);
  SearchResponse permanent;
  permanent.status = SearchStatus::kPermanent;
  broken.set_default(permanent);
  MockSearchClient backup(2, Provider::kProvider2);
  SearchClient* clients[] = {&broken, &backup};
  RetryPolicy retry;
  retry.sleep = [](std::chrono::milliseconds) { FAIL() << "permanent errors must not be retried"; };
  const auto r = fetch_images(record("apple", 5), clients, 2, retry);
  EXPECT_EQ(broken.backend_requests(), 1u);
  ASSERT_EQ(r.images.size(), 2u);
  EXPECT_EQ(r.images[0].provider, Provider::kProvider2);
}

TEST(Fetch, ParallelFetchKeepsOrderAndCountsFailures) {
  std::vector<EntityRecord> records;
  for (int i = 0; i < 40; ++i) records.push_back(record("e" + std::to_string(i), 5));
  MockSearchClient mock(2);
  mock.script("e7", {SearchResponse{}});
  mock.script("e21", {SearchResponse{}});
  SearchClient* clients[] = {&mock};
  const auto report = fetch_all(records, clients, 1, {}, 4);
  EXPECT_EQ(report.entities, 40u);
  EXPECT_EQ(report.failed, 2u);
  EXPECT_EQ(report.with_images, 38u);
  for (int i = 0; i < 40; ++i) {
    EXPECT_EQ(records[i].surface, "e" + std::to_string(i));
    EXPECT_EQ(records[i].fetch_failed, i == 7 || i == 21);
  }
}

TEST(Manifest, RoundTrip) {
  std::vector<EntityRecord> records{record("apple", 4), record("new york", 9)};
  records[1].kind = EntityKind::kNamedEntity;
  records[1].query = "New York";
  records[0].images.push_back(resee::testing::image("mock://apple/0"));
  records[0].images[0].feature = std::vector<double>{0.5, -1.25};
  records[0].images[0].license_tag = "cc0";
  records[1].fetch_failed = true;
  const auto path = resee::testing::scratch_dir("manifest_io") / "m.jsonl";
  save_manifest(path, records);
  EXPECT_EQ(load_manifest(path), records);
}
