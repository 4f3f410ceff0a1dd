#include "resee/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/text.hpp"
#include "resee/train.hpp"

namespace resee::eval {
namespace {

constexpr std::string_view kModule = "eval_metrics";

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<const std::vector<double>*> lookup(std::span<const std::string> tokens, const WordVectors& vectors) {
  std::vector<const std::vector<double>*> out;
  for (const auto& t : tokens) {
    if (const auto* v = vectors.find(t)) out.push_back(v);
  }
  return out;
}

std::vector<double> mean_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto* v : vs) {
    for (std::size_t i = 0; i < dim; ++i) m[i] += (*v)[i];
  }
  for (auto& x : m) x /= static_cast<double>(vs.size());
  return m;
}

std::vector<double> extrema_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  for (const auto* v : vs) {
    for (std::size_t i = 0; i < dim; ++i) {
      if (std::abs((*v)[i]) > std::abs(e[i])) e[i] = (*v)[i];
    }
  }
  return e;
}

double greedy_direction(const std::vector<const std::vector<double>*>& from,
                        const std::vector<const std::vector<double>*>& to) {
  double total = 0.0;
  for (const auto* a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

EvalPair make_eval_pair(std::string_view hypothesis, std::string_view reference) {
  EvalPair p;
  p.hypothesis_raw = std::string(hypothesis);
  p.reference_raw = std::string(reference);
  p.hypothesis = text::strip_punctuation(text::tokenize(hypothesis));
  p.reference = text::strip_punctuation(text::tokenize(reference));
  return p;
}

std::vector<EvalPair> make_pairs(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw ConfigError(std::string(kModule), std::to_string(hypotheses.size()) + " hypotheses but " +
                                                std::to_string(references.size()) + " references");
  }
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) out.push_back(make_eval_pair(hypotheses[i], references[i]));
  return out;
}

double distinct_n(std::span<const std::vector<std::string>> hypotheses, std::size_t n) {
  if (n != 1 && n != 2) throw ConfigError(std::string(kModule), "distinct_n supports n = 1 or 2");
  std::set<Gram> unique;
  std::size_t total = 0;
  for (const auto& h : hypotheses) {
    for (auto& [g, c] : ngram_counts(h, n)) {
      unique.insert(g);
      total += c;
    }
  }
  if (total == 0) throw UndefinedMetricError(std::string(kModule), "Dist-" + std::to_string(n) + " has no n-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double distinct_n(std::span<const EvalPair> pairs, std::size_t n) {
  std::vector<std::vector<std::string>> hyps;
  for (const auto& p : pairs) hyps.push_back(p.hypothesis);
  return distinct_n(hyps, n);
}

double bleu(std::span<const EvalPair> pairs, const BleuConfig& cfg) {
  if (pairs.empty()) throw UndefinedMetricError(std::string(kModule), "BLEU needs at least one pair");
  if (cfg.max_n == 0) throw ConfigError(std::string(kModule), "BLEU max_n must be positive");
  std::vector<double> matched(cfg.max_n, 0.0);
  std::vector<double> total(cfg.max_n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    hyp_len += static_cast<double>(p.hypothesis.size());
    ref_len += static_cast<double>(p.reference.size());
    for (std::size_t n = 1; n <= cfg.max_n; ++n) {
      const auto h = ngram_counts(p.hypothesis, n);
      const auto r = ngram_counts(p.reference, n);
      for (const auto& [g, c] : h) {
        total[n - 1] += static_cast<double>(c);
        if (auto it = r.find(g); it != r.end()) matched[n - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < cfg.max_n; ++n) {
    const double m = matched[n] > 0.0 ? matched[n] : cfg.epsilon;
    const double t = total[n] > 0.0 ? total[n] : 1.0;
    log_sum += std::log(m / t);
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_sum / static_cast<double>(cfg.max_n));
}

double rouge_l(std::span<const EvalPair> pairs, double beta) {
  if (pairs.empty()) throw UndefinedMetricError(std::string(kModule), "Rouge-L needs at least one pair");
  double sum = 0.0;
  for (const auto& p : pairs) {
    const auto lcs = static_cast<double>(lcs_length(p.hypothesis, p.reference));
    if (lcs == 0.0) continue;
    const double prec = lcs / static_cast<double>(p.hypothesis.size());
    const double rec = lcs / static_cast<double>(p.reference.size());
    sum += (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
  }
  return sum / static_cast<double>(pairs.size());
}

WordVectors WordVectors::parse(std::string_view content) {
  WordVectors wv;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto words = text::split_words(line);
    if (words.empty()) continue;
    if (line_no == 1 && words.size() == 2 && std::all_of(words[0].begin(), words[0].end(), ::isdigit) &&
        std::all_of(words[1].begin(), words[1].end(), ::isdigit)) {
      continue;
    }
    if (words.size() < 2) throw SchemaError(std::string(kModule), "word vectors line " + std::to_string(line_no) + " has no values");
    std::vector<double> v;
    for (std::size_t i = 1; i < words.size(); ++i) {
      try {
        v.push_back(std::stod(words[i]));
      } catch (const std::exception&) {
        throw SchemaError(std::string(kModule), "word vectors line " + std::to_string(line_no) + ": bad number '" +
                                                    words[i] + "'");
      }
    }
    if (wv.dim_ != 0 && v.size() != wv.dim_) {
      throw SchemaError(std::string(kModule), "word vectors line " + std::to_string(line_no) + " has dimension " +
                                                  std::to_string(v.size()) + ", expected " + std::to_string(wv.dim_));
    }
    wv.add(text::to_lower(words[0]), std::move(v));
  }
  if (wv.size() == 0) throw EmptyCorpusError(std::string(kModule), "word vector table is empty");
  return wv;
}

WordVectors WordVectors::load(const std::filesystem::path& path) { return parse(detail::read_file(path, kModule)); }

void WordVectors::add(std::string word, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) throw SchemaError(std::string(kModule), "word vector '" + word + "' has the wrong dimension");
  index_.insert_or_assign(std::move(word), std::move(vec));
}

const std::vector<double>* WordVectors::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? nullptr : &it->second;
}

PairEmbeddingScores embedding_scores(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                                     const WordVectors& vectors) {
  const auto h = lookup(hypothesis, vectors);
  const auto r = lookup(reference, vectors);
  if (h.empty() || r.empty()) {
    throw UndefinedMetricError(std::string(kModule), "sentence has no in-vocabulary token");
  }
  const auto d = vectors.dim();
  PairEmbeddingScores s;
  s.avg = cosine(mean_vector(h, d), mean_vector(r, d));
  s.ext = cosine(extrema_vector(h, d), extrema_vector(r, d));
  s.gre = 0.5 * (greedy_direction(h, r) + greedy_direction(r, h));
  return s;
}

EmbeddingScores embedding_metrics(std::span<const EvalPair> pairs, const WordVectors& vectors) {
  EmbeddingScores out;
  for (const auto& p : pairs) {
    PairEmbeddingScores s;
    try {
      s = embedding_scores(p.hypothesis, p.reference, vectors);
    } catch (const UndefinedMetricError&) {
      ++out.skipped_pairs;
      continue;
    }
    out.avg += s.avg;
    out.ext += s.ext;
    out.gre += s.gre;
    ++out.scored_pairs;
  }
  if (out.skipped_pairs > 0) {
    log::warn(kModule, std::to_string(out.skipped_pairs) + " pairs skipped by the embedding metrics (no known words)");
  }
  if (out.scored_pairs == 0) throw UndefinedMetricError(std::string(kModule), "no pair could be scored by the embedding metrics");
  const auto n = static_cast<double>(out.scored_pairs);
  out.avg /= n;
  out.ext /= n;
  out.gre /= n;
  return out;
}

PplMode parse_ppl_mode(std::string_view s) {
  if (s == "causal") return PplMode::kCausal;
  if (s == "masked") return PplMode::kMasked;
  throw ConfigError(std::string(kModule), "unknown perplexity mode '" + std::string(s) + "' (expected causal or masked)");
}

double perplexity(const model::Model& m, std::span<const data::MultimodalExample> examples,
                  const model::Tokenizer& tok, PplMode mode) {
  if (examples.empty()) throw UndefinedMetricError(std::string(kModule), "perplexity needs at least one example");
  const auto& cfg = m.config();
  std::vector<model::InputBatch> batches;
  for (const auto& ex : examples) {
    if (mode == PplMode::kMasked && cfg.variant == model::Variant::kShared) {
      auto b = model::assemble_input(ex, tok, cfg, true);
      const auto r = model::response_tokens(ex, tok, cfg);
      model::MaskedResponse all;
      all.original = r;
      all.corrupted.assign(r.size(), tok.special().mask);
      for (std::size_t i = 0; i < r.size(); ++i) {
        all.masked_positions.push_back(i);
        all.replacement_kinds.push_back(model::ReplacementKind::kMaskToken);
      }
      model::apply_masking(b, all);
      batches.push_back(std::move(b));
    } else {
      auto bs = train::scoring_batches(ex, tok, cfg);
      batches.insert(batches.end(), std::make_move_iterator(bs.begin()), std::make_move_iterator(bs.end()));
    }
  }
  return std::exp(train::mean_token_loss(m, batches));
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["ppl"] = ppl ? nlohmann::ordered_json(*ppl) : nlohmann::ordered_json(nullptr);
  j["bleu"] = bleu;
  j["rouge_l"] = rouge_l;
  if (has_embedding) {
    j["emb_avg"] = emb_avg;
    j["emb_ext"] = emb_ext;
    j["emb_gre"] = emb_gre;
  } else {
    j["emb_avg"] = nullptr;
    j["emb_ext"] = nullptr;
    j["emb_gre"] = nullptr;
  }
  j["dist1"] = dist1;
  j["dist2"] = dist2;
  j["n_pairs"] = n_pairs;
  j["embedding_skipped_pairs"] = embedding_skipped;
  return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
  const std::vector<std::string> head{"PPL", "BLEU", "Rouge-L", "Avg.", "Ext.", "Gre.", "Dist-1", "Dist-2"};
  const auto emb = [&](double v) { return has_embedding ? fmt(v, 3) : std::string("-"); };
  const std::vector<std::string> vals{ppl ? fmt(*ppl, 2) : std::string("-"),
                                      fmt(bleu, 4),
                                      fmt(rouge_l, 4),
                                      emb(emb_avg),
                                      emb(emb_ext),
                                      emb(emb_gre),
                                      fmt(dist1, 3),
                                      fmt(dist2, 3)};
  std::string top, bottom;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const auto w = std::max(head[i].size(), vals[i].size());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%*s", static_cast<int>(w), head[i].c_str());
    top += (i ? " | " : "") + std::string(buf);
    std::snprintf(buf, sizeof buf, "%*s", static_cast<int>(w), vals[i].c_str());
    bottom += (i ? " | " : "") + std::string(buf);
  }
  return top + "\n" + bottom + "\n";
}

MetricReport evaluate_pairs(std::span<const EvalPair> pairs, const WordVectors* vectors, std::optional<double> ppl) {
  MetricReport r;
  r.ppl = ppl;
  r.n_pairs = pairs.size();
  r.bleu = bleu(pairs);
  r.rouge_l = rouge_l(pairs);
  // A report is still useful when a corpus-level diversity or embedding
  // score is undefined; those fields are reported as 0 / absent.
  for (std::size_t n : {1, 2}) {
    try {
      (n == 1 ? r.dist1 : r.dist2) = distinct_n(pairs, n);
    } catch (const UndefinedMetricError& e) {
      log::warn(kModule, e.what());
    }
  }
  if (vectors) {
    try {
      const auto e = embedding_metrics(pairs, *vectors);
      r.emb_avg = e.avg;
      r.emb_ext = e.ext;
      r.emb_gre = e.gre;
      r.embedding_skipped = e.skipped_pairs;
      r.has_embedding = true;
    } catch (const UndefinedMetricError& e) {
      r.embedding_skipped = pairs.size();
      log::warn(kModule, e.what());
    }
  }
  return r;
}

}  // namespace resee::eval
