#include "resee/turn_retrieval.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "json_util.hpp"
#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/text.hpp"

namespace resee::retrieval {
namespace {

constexpr std::string_view kModule = "turn_retrieval";
using detail::json;

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "a",     "an",    "the",   "and",   "or",    "but",   "if",    "of",    "at",    "by",    "for",
      "with",  "about", "to",    "from",  "in",    "on",    "off",   "over",  "under", "again", "then",
      "once",  "here",  "there", "when",  "where", "why",   "how",   "all",   "any",   "both",  "each",
      "few",   "more",  "most",  "other", "some",  "such",  "no",    "nor",   "not",   "only",  "own",
      "same",  "so",    "than",  "too",   "very",  "can",   "will",  "just",  "should", "now",  "i",
      "me",    "my",    "we",    "our",   "you",   "your",  "he",    "him",   "his",   "she",   "her",
      "it",    "its",   "they",  "them",  "their", "what",  "which", "who",   "whom",  "this",  "that",
      "these", "those", "am",    "is",    "are",   "was",   "were",  "be",    "been",  "being", "have",
      "has",   "had",   "do",    "does",  "did",   "doing", "would", "could", "as",    "until", "while",
      "into",  "through", "during", "before", "after", "above", "below", "up", "down", "out",  "also",
      "really", "yes",  "oh",    "well",  "like",  "i'm",   "it's",  "that's", "don't", "do",  "know"};
  return words;
}

void check_unit_rows(const EmbeddingMatrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0.0;
    for (double x : m.row(r)) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      throw InvariantError(std::string(kModule), "index row " + std::to_string(r) + " is not unit norm");
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string lead_summary(std::string_view text, std::size_t max_words) {
  auto words = text::split_words(text);
  if (words.size() > max_words) words.resize(max_words);
  return text::join(words);
}

std::string content_word_summary(std::string_view text, std::size_t max_words) {
  const auto words = text::split_words(text);
  if (words.size() <= max_words) return text::join(words);
  std::vector<std::string> kept;
  for (const auto& w : words) {
    const auto stripped = text::strip_punctuation(std::vector<std::string>{text::to_lower(w)});
    if (stripped.empty() || stopwords().contains(stripped.front())) continue;
    kept.push_back(w);
    if (kept.size() == max_words) break;
  }
  if (kept.empty()) throw std::runtime_error("no content words");
  return text::join(kept);
}

Summary summarize_turn(std::string_view text, const Summarizer& summarizer, std::size_t max_words) {
  if (text::trim(text).empty()) throw QueryError(std::string(kModule), "cannot summarize empty text");
  if (max_words == 0) throw ConfigError(std::string(kModule), "max_words must be positive");
  const auto words = text::split_words(text);
  if (words.size() <= max_words) return {text::trim(text), false};
  if (summarizer) {
    try {
      auto out = summarizer(text, max_words);
      if (!text::trim(out).empty() && text::split_words(out).size() <= max_words) return {text::trim(out), false};
    } catch (const std::exception& e) {
      log::debug(kModule, std::string("summarizer failed, truncating: ") + e.what());
    }
  }
  return {lead_summary(text, max_words), true};
}

EmbeddingMatrix embed_texts(std::span<const std::string> texts, const TextEmbedder& embedder,
                            std::size_t batch_size) {
  if (texts.empty()) throw EmbeddingError(std::string(kModule), "no texts to embed");
  if (batch_size == 0) batch_size = texts.size();
  EmbeddingMatrix m;
  m.dim = embedder.dimension();
  m.data.reserve(texts.size() * m.dim);
  for (std::size_t start = 0; start < texts.size(); start += batch_size) {
    const auto count = std::min(batch_size, texts.size() - start);
    std::vector<std::vector<double>> vecs;
    try {
      vecs = embedder.embed(texts.subspan(start, count));
    } catch (const std::exception& e) {
      throw EmbeddingError(std::string(kModule),
                           "backend failed on batch starting at position " + std::to_string(start) + ": " + e.what());
    }
    if (vecs.size() != count) {
      throw EmbeddingError(std::string(kModule), "backend returned " + std::to_string(vecs.size()) +
                                                     " vectors for batch at position " + std::to_string(start));
    }
    for (std::size_t i = 0; i < count; ++i) {
      auto& v = vecs[i];
      if (v.size() != m.dim) {
        throw EmbeddingError(std::string(kModule), "wrong dimension at position " + std::to_string(start + i));
      }
      double sq = 0.0;
      for (double x : v) sq += x * x;
      const double norm = std::sqrt(sq);
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw EmbeddingError(std::string(kModule), "degenerate vector at position " + std::to_string(start + i));
      }
      for (double x : v) m.data.push_back(x / norm);
    }
  }
  return m;
}

void write_embedding_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::string out = "RSEM";
  const auto put_u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  put_u32(static_cast<std::uint32_t>(m.dim));
  put_u32(static_cast<std::uint32_t>(m.rows()));
  for (double x : m.data) {
    const float f = static_cast<float>(x);
    out.append(reinterpret_cast<const char*>(&f), 4);
  }
  detail::write_file(path, out, kModule);
}

EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path, kModule);
  if (bytes.size() < 12 || bytes.compare(0, 4, "RSEM") != 0) {
    throw SchemaError(std::string(kModule), path.string() + ": not an embedding matrix");
  }
  std::uint32_t dim = 0;
  std::uint32_t rows = 0;
  std::memcpy(&dim, bytes.data() + 4, 4);
  std::memcpy(&rows, bytes.data() + 8, 4);
  if (bytes.size() != 12 + std::size_t{dim} * rows * 4) {
    throw SchemaError(std::string(kModule), path.string() + ": payload size does not match header");
  }
  EmbeddingMatrix m;
  m.dim = dim;
  m.data.resize(std::size_t{dim} * rows);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    float f = 0;
    std::memcpy(&f, bytes.data() + 12 + i * 4, 4);
    m.data[i] = f;
  }
  return m;
}

EmbeddingIndex::EmbeddingIndex(EmbeddingMatrix keys, std::vector<std::string> ids)
    : keys_(std::move(keys)), ids_(std::move(ids)) {
  if (keys_.rows() != ids_.size()) throw InvariantError(std::string(kModule), "row count differs from id count");
  if (ids_.empty()) throw InvariantError(std::string(kModule), "empty index");
  check_unit_rows(keys_);
  std::set<std::string_view> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) throw InvariantError(std::string(kModule), "duplicate image id '" + id + "'");
  }
}

EmbeddingIndex build_index(std::span<const corpus::CaptionedImage> pool, const TextEmbedder& embedder) {
  if (pool.empty()) throw PoolError(std::string(kModule), "cannot index an empty pool");
  std::vector<std::string> captions;
  std::vector<std::string> ids;
  captions.reserve(pool.size());
  ids.reserve(pool.size());
  for (const auto& img : pool) {
    captions.push_back(img.caption);
    ids.push_back(img.image_id);
  }
  return EmbeddingIndex(embed_texts(captions, embedder), std::move(ids));
}

std::vector<ScoredImage> retrieve_topk(const EmbeddingIndex& index, std::span<const double> query, std::size_t k) {
  if (k == 0) throw QueryError(std::string(kModule), "k must be at least 1");
  if (query.size() != index.dimension()) {
    throw QueryError(std::string(kModule), "query dimension " + std::to_string(query.size()) + " != index dimension " +
                                               std::to_string(index.dimension()));
  }
  const double qnorm = std::sqrt(dot(query, query));
  if (!(qnorm > 0.0) || !std::isfinite(qnorm)) throw QueryError(std::string(kModule), "degenerate query vector");

  const auto n = index.size();
  std::vector<double> scores(n);
  for (std::size_t r = 0; r < n; ++r) scores[r] = dot(index.keys().row(r), query) / qnorm;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.image_id(a) < index.image_id(b);
  };
  const auto take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);

  std::vector<ScoredImage> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({index.image_id(order[i]), scores[order[i]]});
  return out;
}

std::vector<std::string> turn_queries(const corpus::DialogueSession& session, QueryMode mode) {
  std::vector<std::string> out;
  out.reserve(session.turns.size());
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    if (mode == QueryMode::kExchange && i > 0) {
      out.push_back(session.turns[i - 1].text + " " + session.turns[i].text);
    } else {
      out.push_back(session.turns[i].text);
    }
  }
  return out;
}

std::vector<TurnRetrievalResult> retrieve_sessions(std::span<const corpus::DialogueSession> sessions,
                                                   const EmbeddingIndex& index, const TextEmbedder& embedder,
                                                   const Summarizer& summarizer, const RetrievalConfig& cfg) {
  std::vector<TurnRetrievalResult> results;
  std::vector<std::string> summaries;
  for (const auto& s : sessions) {
    const auto queries = turn_queries(s, cfg.query_mode);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      auto summary = summarize_turn(queries[i], summarizer, cfg.max_words);
      TurnRetrievalResult r;
      r.session_id = s.session_id;
      r.turn_index = i;
      r.summary = summary.text;
      r.summary_fell_back = summary.fell_back;
      summaries.push_back(std::move(summary.text));
      results.push_back(std::move(r));
    }
  }
  if (results.empty()) return results;
  const auto embedded = embed_texts(summaries, embedder);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].ranked = retrieve_topk(index, embedded.row(i), cfg.k);
  }
  return results;
}

std::map<corpus::SourceTag, double> source_distribution(std::span<const TurnRetrievalResult> results,
                                                        std::span<const corpus::CaptionedImage> pool) {
  std::map<std::string_view, corpus::SourceTag> source_of;
  for (const auto& img : pool) source_of.emplace(img.image_id, img.source);
  std::array<std::size_t, corpus::kNumSourceTags> counts{};
  std::size_t total = 0;
  for (const auto& r : results) {
    if (r.ranked.empty()) continue;
    const auto it = source_of.find(r.ranked.front().image_id);
    if (it == source_of.end()) {
      throw ConsistencyError(std::string(kModule), "retrieved image '" + r.ranked.front().image_id +
                                                       "' is not in the caption pool");
    }
    ++counts[static_cast<std::size_t>(it->second)];
    ++total;
  }
  if (total == 0) throw EmptyCorpusError(std::string(kModule), "no rank-1 results to count");
  std::map<corpus::SourceTag, double> out;
  for (std::size_t t = 0; t < corpus::kNumSourceTags; ++t) {
    out[static_cast<corpus::SourceTag>(t)] = 100.0 * static_cast<double>(counts[t]) / static_cast<double>(total);
  }
  return out;
}

void save_retrieval_results(const std::filesystem::path& path, std::span<const TurnRetrievalResult> results) {
  std::string out;
  for (const auto& r : results) {
    json ranked = json::array();
    for (const auto& s : r.ranked) ranked.push_back({{"image_id", s.image_id}, {"score", s.score}});
    json j = {{"session_id", r.session_id},
              {"turn_index", r.turn_index},
              {"ranked", std::move(ranked)},
              {"summary", r.summary},
              {"summary_fallback", r.summary_fell_back}};
    out += j.dump();
    out += '\n';
  }
  detail::write_file(path, out, kModule);
}

std::vector<TurnRetrievalResult> load_retrieval_results(const std::filesystem::path& path) {
  std::vector<TurnRetrievalResult> out;
  detail::for_each_json_line(detail::read_file(path, kModule), kModule, [&](std::size_t line, const json& j) {
    const auto where = "line " + std::to_string(line);
    detail::require_known_fields(j, {"session_id", "turn_index", "ranked", "summary", "summary_fallback"}, kModule,
                                 where);
    TurnRetrievalResult r;
    r.session_id = detail::get_field<std::string>(j, "session_id", kModule, where);
    r.turn_index = detail::get_field<std::size_t>(j, "turn_index", kModule, where);
    if (j.contains("summary")) r.summary = detail::get_field<std::string>(j, "summary", kModule, where);
    if (j.contains("summary_fallback")) r.summary_fell_back = detail::get_field<bool>(j, "summary_fallback", kModule, where);
    for (const auto& s : j.at("ranked")) {
      r.ranked.push_back({detail::get_field<std::string>(s, "image_id", kModule, where),
                          detail::get_field<double>(s, "score", kModule, where)});
    }
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace resee::retrieval
