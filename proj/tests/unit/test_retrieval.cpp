#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "fixtures.hpp"
#include "resee/error.hpp"
#include "resee/rng.hpp"
#include "resee/text.hpp"
#include "resee/turn_retrieval.hpp"

using namespace resee;
using namespace resee::retrieval;
using resee::testing::data_path;

namespace {

std::vector<corpus::CaptionedImage> pool_of(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::vector<corpus::CaptionedImage> pool;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    corpus::CaptionedImage img;
    img.image_id = rows[i].first;
    img.caption = rows[i].second;
    img.source = static_cast<corpus::SourceTag>(i % 4);
    pool.push_back(img);
  }
  return pool;
}

std::vector<std::string> ids(const std::vector<ScoredImage>& ranked) {
  std::vector<std::string> out;
  for (const auto& r : ranked) out.push_back(r.image_id);
  return out;
}

// Scores every row and sorts the full list; kept deliberately naive.
std::vector<std::string> exhaustive(const EmbeddingIndex& index, const std::vector<double>& q, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t r = 0; r < index.size(); ++r) {
    double s = 0;
    for (std::size_t d = 0; d < q.size(); ++d) s += index.keys().row(r)[d] * q[d];
    all.emplace_back(s, index.image_id(r));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sq = 0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  for (auto& x : v) x /= std::sqrt(sq);
  return v;
}

class FailingEmbedder : public TextEmbedder {
 public:
  std::size_t dimension() const override { return 4; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override {
    for (const auto& t : texts) {
      if (t == "boom") throw std::runtime_error("backend down");
    }
    return std::vector<std::vector<double>>(texts.size(), std::vector<double>{1, 0, 0, 0});
  }
};

}  // namespace

TEST(Summarize, ShortInputUnchanged) {
  const auto s = summarize_turn("one two three four five", content_word_summary, 30);
  EXPECT_EQ(s.text, "one two three four five");
  EXPECT_FALSE(s.fell_back);
}

TEST(Summarize, FailingSummarizerFallsBackToLeadingWords) {
  std::string text;
  for (int i = 0; i < 80; ++i) text += "w" + std::to_string(i) + " ";
  const Summarizer broken = [](std::string_view, std::size_t) -> std::string { throw std::runtime_error("x"); };
  const auto s = summarize_turn(text, broken, 30);
  EXPECT_TRUE(s.fell_back);
  EXPECT_EQ(s.text, lead_summary(text, 30));
  EXPECT_EQ(text::split_words(s.text).size(), 30u);
  EXPECT_EQ(text::split_words(s.text).front(), "w0");
  EXPECT_EQ(text::split_words(s.text).back(), "w29");
}

TEST(Summarize, ContentWordBackendKeepsNouns) {
  std::string text;
  for (int i = 0; i < 16; ++i) text += "i think that the garden and the river are very nice ";
  const auto s = summarize_turn(text, content_word_summary, 30);
  EXPECT_FALSE(s.fell_back);
  const auto words = text::split_words(s.text);
  EXPECT_LE(words.size(), 30u);
  EXPECT_FALSE(words.empty());
  EXPECT_NE(std::find(words.begin(), words.end(), "garden"), words.end());
  EXPECT_EQ(words.front(), "think");
}

TEST(Summarize, EmptyTextRejected) {
  EXPECT_THROW(summarize_turn("   ", content_word_summary, 30), QueryError);
}

TEST(Embed, IdenticalInputsIdenticalRows) {
  HashProjectionEmbedder e(16, 1);
  const std::vector<std::string> texts{"a", "a"};
  const auto m = embed_texts(texts, e);
  ASSERT_EQ(m.rows(), 2u);
  for (std::size_t d = 0; d < m.dim; ++d) EXPECT_EQ(m.row(0)[d], m.row(1)[d]);
}

TEST(Embed, RowsAreUnitNorm) {
  HashProjectionEmbedder e(32, 5);
  const std::vector<std::string> texts{"the cat", "a long sentence about rivers and stones", "x", "Hello, world!"};
  const auto m = embed_texts(texts, e, 3);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0;
    for (double x : m.row(r)) sq += x * x;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(Embed, BackendFailureNamesBatchPosition) {
  FailingEmbedder e;
  const std::vector<std::string> texts{"a", "b", "c", "boom"};
  try {
    embed_texts(texts, e, 2);
    FAIL() << "expected an embedding error";
  } catch (const EmbeddingError& err) {
    EXPECT_NE(std::string(err.what()).find("position 2"), std::string::npos) << err.what();
  }
}

TEST(Embed, MatchesGoldenMatrix) {
  const std::vector<std::string> texts{"a red apple on the table", "the river runs under the old bridge",
                                       "my garden is green",       "a tiger near the castle",
                                       "quiet piano music",        "bright candle in the forest",
                                       "the island has a harbor",  "a violin with a ribbon",
                                       "clouds over the stone",    "happy dragon"};
  HashProjectionEmbedder e(16, 7);
  const auto m = embed_texts(texts, e);
  const auto golden_path = data_path("embed_golden.bin");
  if (std::getenv("RESEE_REGENERATE_GOLDEN")) write_embedding_matrix(golden_path, m);
  const auto golden = read_embedding_matrix(golden_path);
  ASSERT_EQ(golden.dim, m.dim);
  ASSERT_EQ(golden.rows(), m.rows());
  for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_NEAR(m.data[i], golden.data[i], 1e-6);
}

TEST(Embed, MatrixFileRoundTrip) {
  HashProjectionEmbedder e(8, 3);
  const std::vector<std::string> texts{"one", "two", "three"};
  const auto m = embed_texts(texts, e);
  const auto path = resee::testing::scratch_dir("embed_io") / "m.bin";
  write_embedding_matrix(path, m);
  const auto back = read_embedding_matrix(path);
  ASSERT_EQ(back.rows(), 3u);
  for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_NEAR(back.data[i], m.data[i], 1e-7);
}

TEST(Embed, PrecomputedAdapter) {
  const auto path = resee::testing::scratch_dir("precomputed") / "v.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text": "hello", "vector": [3, 4]})" << "\n" << R"({"text": "bye", "vector": [0, 2]})" << "\n";
  }
  const auto p = PrecomputedEmbedder::load(path);
  EXPECT_EQ(p.dimension(), 2u);
  const std::vector<std::string> texts{"bye", "hello"};
  const auto m = embed_texts(texts, p);
  EXPECT_NEAR(m.row(1)[0], 0.6, 1e-12);
  EXPECT_NEAR(m.row(0)[1], 1.0, 1e-12);
  const std::vector<std::string> missing{"unknown"};
  EXPECT_THROW(embed_texts(missing, p), EmbeddingError);
}

TEST(Index, FixturePoolSize) {
  const auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));
  HashProjectionEmbedder e(32, 0);
  const auto index = build_index(pool, e);
  EXPECT_EQ(index.size(), 100u);
  EXPECT_EQ(index.dimension(), 32u);
  EXPECT_THROW(build_index({}, e), PoolError);
}

TEST(Index, PermutedPoolGivesSameResults) {
  auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));
  HashProjectionEmbedder e(32, 0);
  const auto a = build_index(pool, e);
  std::reverse(pool.begin(), pool.end());
  const auto b = build_index(pool, e);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_unit(rng, 32);
    EXPECT_EQ(ids(retrieve_topk(a, q, 5)), ids(retrieve_topk(b, q, 5)));
  }
}

TEST(Retrieve, SelfRetrieval) {
  const auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));
  HashProjectionEmbedder e(32, 0);
  const auto index = build_index(pool, e);
  const auto row = index.keys().row(17);
  const std::vector<double> q(row.begin(), row.end());
  const auto top = retrieve_topk(index, q, 3);
  ASSERT_FALSE(top.empty());
  // Duplicate captions tie with the query row; the lowest id wins then.
  EXPECT_NEAR(top[0].score, 1.0, 1e-6);
  EXPECT_LE(top[0].image_id, index.image_id(17));
}

TEST(Retrieve, IdenticalCaptionsTieByAscendingId) {
  const auto pool = pool_of({{"img-b", "a red apple"}, {"img-a", "a red apple"}, {"img-c", "blue river"}});
  HashProjectionEmbedder e(16, 2);
  const auto index = build_index(pool, e);
  const std::vector<std::string> query{"a red apple"};
  const auto q = embed_texts(query, e);
  const auto top = retrieve_topk(index, q.row(0), 2);
  EXPECT_EQ(ids(top), (std::vector<std::string>{"img-a", "img-b"}));
  EXPECT_EQ(top[0].score, top[1].score);
}

TEST(Retrieve, QueryErrors) {
  const auto pool = pool_of({{"a", "x"}, {"b", "y"}});
  HashProjectionEmbedder e(8, 0);
  const auto index = build_index(pool, e);
  EXPECT_THROW(retrieve_topk(index, std::vector<double>(7, 1.0), 1), QueryError);
  EXPECT_THROW(retrieve_topk(index, std::vector<double>(8, 1.0), 0), QueryError);
}

TEST(Retrieve, PropertiesAgainstExhaustiveScan) {
  const auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));
  HashProjectionEmbedder e(24, 11);
  const auto index = build_index(pool, e);
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto q = random_unit(rng, 24);
    const auto full = retrieve_topk(index, q, index.size());
    // Full ranking is a permutation of all ids, sorted by score then id.
    auto all = ids(full);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
    EXPECT_EQ(all.size(), index.size());
    for (std::size_t j = 1; j < full.size(); ++j) {
      EXPECT_TRUE(full[j - 1].score > full[j].score ||
                  (full[j - 1].score == full[j].score && full[j - 1].image_id < full[j].image_id));
    }
    for (std::size_t k : {1u, 3u, 10u}) {
      const auto top = ids(retrieve_topk(index, q, k));
      EXPECT_EQ(top, exhaustive(index, q, k));
      const auto next = ids(retrieve_topk(index, q, k + 1));
      EXPECT_TRUE(std::equal(top.begin(), top.end(), next.begin()));
    }
    auto scaled = q;
    for (auto& x : scaled) x *= 3.7;
    EXPECT_EQ(ids(retrieve_topk(index, scaled, 10)), ids(retrieve_topk(index, q, 10)));
  }
}

TEST(Retrieve, ExchangeQueriesJoinPreviousUtterance) {
  corpus::DialogueSession s;
  s.session_id = "s";
  s.turns = {resee::testing::turn(0, "hi there"), resee::testing::turn(1, "hello"), resee::testing::turn(2, "bye")};
  EXPECT_EQ(turn_queries(s, QueryMode::kExchange), (std::vector<std::string>{"hi there", "hi there hello", "hello bye"}));
  EXPECT_EQ(turn_queries(s, QueryMode::kUtterance), (std::vector<std::string>{"hi there", "hello", "bye"}));
}

TEST(Retrieve, SessionResultsRoundTrip) {
  const auto sessions = corpus::load_dialogues(data_path("dialogues_small.jsonl"), corpus::DialogueFormat::kWowLike);
  const auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));
  HashProjectionEmbedder e(32, 0);
  const auto index = build_index(pool, e);
  const auto results = retrieve_sessions(sessions, index, e, content_word_summary, RetrievalConfig{});
  ASSERT_EQ(results.size(), 8u);
  for (const auto& r : results) EXPECT_EQ(r.ranked.size(), 5u);
  const auto path = resee::testing::scratch_dir("retrieval_io") / "r.jsonl";
  save_retrieval_results(path, results);
  const auto back = load_retrieval_results(path);
  ASSERT_EQ(back.size(), results.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].session_id, results[i].session_id);
    EXPECT_EQ(back[i].turn_index, results[i].turn_index);
    EXPECT_EQ(back[i].ranked, results[i].ranked);
  }
}

namespace {

TurnRetrievalResult hit(const std::string& id) {
  TurnRetrievalResult r;
  r.ranked.push_back({id, 0.5});
  r.ranked.push_back({"ignored", 0.1});
  return r;
}

}  // namespace

TEST(SourceDistribution, SingleSource) {
  const auto pool = pool_of({{"a", "x"}, {"b", "x"}, {"c", "x"}, {"d", "x"}, {"e", "x"}});
  const std::vector<TurnRetrievalResult> results{hit("d"), hit("d"), hit("d")};
  const auto dist = source_distribution(results, pool);
  EXPECT_EQ(dist.at(corpus::SourceTag::kPoolD), 100.0);
  EXPECT_EQ(dist.at(corpus::SourceTag::kPoolA), 0.0);
  EXPECT_EQ(dist.size(), 4u);
}

TEST(SourceDistribution, EvenSplit) {
  const auto pool = pool_of({{"a", "x"}, {"b", "x"}, {"c", "x"}, {"d", "x"}});
  const std::vector<TurnRetrievalResult> results{hit("a"), hit("b"), hit("c"), hit("d")};
  for (const auto& [tag, pct] : source_distribution(results, pool)) EXPECT_EQ(pct, 25.0);
}

TEST(SourceDistribution, UnknownIdIsConsistencyError) {
  const auto pool = pool_of({{"a", "x"}});
  const std::vector<TurnRetrievalResult> results{hit("zzz")};
  EXPECT_THROW(source_distribution(results, pool), ConsistencyError);
}
