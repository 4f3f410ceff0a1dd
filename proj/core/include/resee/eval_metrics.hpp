#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "resee/dataset_builder.hpp"
#include "resee/model/model.hpp"
#include "resee/model/vocabulary.hpp"

namespace resee::eval {

/// Both sides go through text::tokenize and text::strip_punctuation.
struct EvalPair {
  std::string hypothesis_raw;
  std::string reference_raw;
  std::vector<std::string> hypothesis;
  std::vector<std::string> reference;
};

EvalPair make_eval_pair(std::string_view hypothesis, std::string_view reference);
std::vector<EvalPair> make_pairs(std::span<const std::string> hypotheses, std::span<const std::string> references);

/// Unique n-grams over total n-grams across the corpus; n is 1 or 2.
double distinct_n(std::span<const std::vector<std::string>> hypotheses, std::size_t n);
double distinct_n(std::span<const EvalPair> pairs, std::size_t n);

struct BleuConfig {
  std::size_t max_n = 4;
  double epsilon = 1e-9;  // replaces zero match counts
};

/// Corpus BLEU: clipped n-gram precisions pooled over the corpus, uniform
/// weights, brevity penalty from total lengths.
double bleu(std::span<const EvalPair> pairs, const BleuConfig& cfg = {});

/// Mean over pairs of the LCS F-measure with recall weight beta.
double rouge_l(std::span<const EvalPair> pairs, double beta = 1.2);

/// Word-vector table. Text format: one `word v1 ... vd` record per line;
/// a leading `count dim` header line is accepted.
class WordVectors {
 public:
  static WordVectors parse(std::string_view content);
  static WordVectors load(const std::filesystem::path& path);

  void add(std::string word, std::vector<double> vec);
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return index_.size(); }
  const std::vector<double>* find(std::string_view word) const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> index_;
};

struct EmbeddingScores {
  double avg = 0.0;
  double ext = 0.0;
  double gre = 0.0;
  std::size_t scored_pairs = 0;
  std::size_t skipped_pairs = 0;  // a side had no in-vocabulary token
};

struct PairEmbeddingScores {
  double avg = 0.0;
  double ext = 0.0;
  double gre = 0.0;
};

/// Throws UndefinedMetricError when either side has no in-vocabulary token.
PairEmbeddingScores embedding_scores(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                                     const WordVectors& vectors);

/// Averages over pairs; undefined pairs are skipped and counted.
EmbeddingScores embedding_metrics(std::span<const EvalPair> pairs, const WordVectors& vectors);

enum class PplMode {
  kCausal,  // teacher forcing; the shared variant scores each position as generation does
  kMasked,  // shared variant: one pass with every response position masked
};

PplMode parse_ppl_mode(std::string_view s);

/// exp of the mean response-token NLL (natural log), [EOS] included.
double perplexity(const model::Model& m, std::span<const data::MultimodalExample> examples,
                  const model::Tokenizer& tok, PplMode mode = PplMode::kCausal);

struct MetricReport {
  std::optional<double> ppl;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double emb_avg = 0.0;
  double emb_ext = 0.0;
  double emb_gre = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  std::size_t n_pairs = 0;
  std::size_t embedding_skipped = 0;
  bool has_embedding = false;

  std::string to_json() const;
  /// Header row and one aligned value row in the column order
  /// PPL, BLEU, Rouge-L, Avg., Ext., Gre., Dist-1, Dist-2.
  std::string to_table() const;
};

/// Text metrics for the pairs; embedding metrics when `vectors` is given.
MetricReport evaluate_pairs(std::span<const EvalPair> pairs, const WordVectors* vectors,
                            std::optional<double> ppl = std::nullopt);

}  // namespace resee::eval
