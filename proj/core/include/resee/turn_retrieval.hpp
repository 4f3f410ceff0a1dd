#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "resee/corpus.hpp"

namespace resee::retrieval {

/// Row-major matrix of embeddings.
struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dimension() const = 0;
  /// One vector of `dimension()` per input, not necessarily normalized.
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) const = 0;
};

/// Deterministic test embedder: each token maps to a seeded Gaussian vector,
/// a sentence is the sum of its token vectors.
class HashProjectionEmbedder final : public TextEmbedder {
 public:
  HashProjectionEmbedder(std::size_t dimension, std::uint64_t seed);
  std::size_t dimension() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Adapter over vectors produced offline by an external sentence encoder.
/// File: one {"text": str, "vector": [..]} record per line.
class PrecomputedEmbedder final : public TextEmbedder {
 public:
  static PrecomputedEmbedder load(const std::filesystem::path& path);
  explicit PrecomputedEmbedder(std::unordered_map<std::string, std::vector<double>> table);

  std::size_t dimension() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
  std::size_t dim_ = 0;
};

/// Text-to-text summarizer. Throws on failure.
using Summarizer = std::function<std::string(std::string_view text, std::size_t max_words)>;

struct Summary {
  std::string text;
  bool fell_back = false;  // the summarizer failed and leading-words truncation was used
};

/// Leading-words truncation.
std::string lead_summary(std::string_view text, std::size_t max_words);
/// Drops function words, keeping content words in order.
std::string content_word_summary(std::string_view text, std::size_t max_words);

Summary summarize_turn(std::string_view text, const Summarizer& summarizer, std::size_t max_words);

/// Embeds and L2-normalizes. Backend failures are rethrown as EmbeddingError
/// naming the batch position.
EmbeddingMatrix embed_texts(std::span<const std::string> texts, const TextEmbedder& embedder,
                            std::size_t batch_size = 256);

/// Little-endian binary: "RSEM", u32 dimension, u32 rows, rows*dim float32.
void write_embedding_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path);

struct ScoredImage {
  std::string image_id;
  double score = 0.0;

  bool operator==(const ScoredImage&) const = default;
};

/// Exact cosine index over unit-norm caption embeddings.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  /// Rows must be unit norm (1 +- 1e-6); ids unique.
  EmbeddingIndex(EmbeddingMatrix keys, std::vector<std::string> ids);

  std::size_t size() const { return ids_.size(); }
  std::size_t dimension() const { return keys_.dim; }
  const EmbeddingMatrix& keys() const { return keys_; }
  const std::string& image_id(std::size_t row) const { return ids_[row]; }

 private:
  EmbeddingMatrix keys_;
  std::vector<std::string> ids_;
};

EmbeddingIndex build_index(std::span<const corpus::CaptionedImage> pool, const TextEmbedder& embedder);

/// The k best rows by cosine similarity, ties broken by ascending image_id.
std::vector<ScoredImage> retrieve_topk(const EmbeddingIndex& index, std::span<const double> query, std::size_t k);

struct TurnRetrievalResult {
  std::string session_id;
  std::size_t turn_index = 0;
  std::vector<ScoredImage> ranked;
  std::string summary;
  bool summary_fell_back = false;
};

enum class QueryMode {
  kExchange,   // previous utterance joined with the current one
  kUtterance,  // the current utterance only
};

struct RetrievalConfig {
  std::size_t k = 5;
  std::size_t max_words = 30;
  QueryMode query_mode = QueryMode::kExchange;
};

/// Query text for every turn of a session.
std::vector<std::string> turn_queries(const corpus::DialogueSession& session, QueryMode mode);

/// Summarize, embed and retrieve for every turn of every session.
std::vector<TurnRetrievalResult> retrieve_sessions(std::span<const corpus::DialogueSession> sessions,
                                                   const EmbeddingIndex& index, const TextEmbedder& embedder,
                                                   const Summarizer& summarizer, const RetrievalConfig& cfg);

/// Percentage of rank-1 hits per source tag; all four tags present.
std::map<corpus::SourceTag, double> source_distribution(std::span<const TurnRetrievalResult> results,
                                                        std::span<const corpus::CaptionedImage> pool);

void save_retrieval_results(const std::filesystem::path& path, std::span<const TurnRetrievalResult> results);
std::vector<TurnRetrievalResult> load_retrieval_results(const std::filesystem::path& path);

}  // namespace resee::retrieval
