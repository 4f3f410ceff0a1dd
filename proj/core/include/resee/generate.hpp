#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "resee/dataset_builder.hpp"
#include "resee/model/input.hpp"
#include "resee/model/model.hpp"
#include "resee/model/vocabulary.hpp"

namespace resee::train {

enum class DecodeStrategy { kGreedy, kTopK };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  std::size_t max_len = 35;
  std::size_t top_k = 5;
  double entity_bias_weight = 0.0;
  std::uint64_t seed = 0;

  void validate(std::size_t response_budget) const;
};

/// Adds `weight` once to the logit of every vocabulary token that occurs in
/// the tokenization of any entity.
std::vector<double> entity_logit_bias(std::span<const double> logits, std::span<const std::string> entities,
                                      const model::Tokenizer& tok, double weight);

/// Encoder reads X, decoder extends [BOS ...] until [EOS] or max_len.
/// The returned ids exclude [BOS] and [EOS].
std::vector<int> generate_separate(const model::Model& m, const model::EncodedContext& x,
                                   std::span<const std::string> entities, const model::Tokenizer& tok,
                                   const DecodeConfig& cfg);

/// Appends [MASK] after [X, BOS], predicts it, writes the prediction in
/// place and appends a fresh [MASK]. `trace` sees the input of every pass.
std::vector<int> generate_shared(const model::Model& m, const model::EncodedContext& x,
                                 std::span<const std::string> entities, const model::Tokenizer& tok,
                                 const DecodeConfig& cfg,
                                 const std::function<void(const model::InputBatch&)>& trace = {});

/// Dispatches on the model variant and decodes to text.
std::string generate_response(const model::Model& m, const data::MultimodalExample& ex, const model::Tokenizer& tok,
                              const DecodeConfig& cfg);

}  // namespace resee::train
