#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "resee/dataset_builder.hpp"
#include "resee/image_ref.hpp"
#include "resee/model/config.hpp"
#include "resee/model/matrix.hpp"
#include "resee/model/vocabulary.hpp"

namespace resee::model {

/// Half-open position range [begin, end).
struct BlockSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool operator==(const BlockSpan&) const = default;
};

/// The context side X = [V_T, V_E, E, C] before a response block is attached.
/// Each non-empty block ends with [SEP]; C also has a [SEP] after every turn
/// and carries the knowledge passages K at its end.
struct EncodedContext {
  std::vector<int> token_ids;   // -1 at image slots
  std::vector<int> image_slot;  // index into image_features, -1 at text positions
  std::vector<std::vector<double>> image_features;
  std::vector<int> segment_ids;
  std::array<BlockSpan, 4> spans;

  std::size_t size() const { return token_ids.size(); }
};

struct InputBatch {
  std::vector<int> token_ids;   // -1 at image slots
  std::vector<int> image_slot;  // index into image_features, -1 at text positions
  std::vector<std::vector<double>> image_features;
  std::vector<int> position_ids;
  std::vector<int> segment_ids;
  std::vector<char> attention_mask;  // L x L row-major; [i][j] != 0 when i may attend to j
  std::vector<char> loss_mask;
  std::vector<int> targets;  // -1 where loss_mask is 0
  std::array<BlockSpan, kNumSegments> block_spans;

  std::size_t length() const { return token_ids.size(); }
  bool attends(std::size_t i, std::size_t j) const { return attention_mask[i * length() + j] != 0; }
  const BlockSpan& response_span() const { return block_spans[static_cast<std::size_t>(Segment::kResponse)]; }
  /// Number of positions in X (everything before the response block).
  std::size_t context_length() const { return response_span().begin; }
};

enum class ReplacementKind { kMaskToken, kRandomToken };

/// A corrupted copy of the response tokens (including the trailing [EOS]).
struct MaskedResponse {
  std::vector<int> original;
  std::vector<int> corrupted;
  std::vector<std::size_t> masked_positions;  // ascending
  std::vector<ReplacementKind> replacement_kinds;  // parallel to masked_positions
};

/// Two-layer map from raw image features into the token embedding space:
/// out = gelu(x W1 + b1) W2 + b2.
struct VisualProjector {
  Matrix w1;  // d_v x d_model
  Matrix b1;  // 1 x d_model
  Matrix w2;  // d_model x d_model
  Matrix b2;  // 1 x d_model

  static VisualProjector zeros(std::size_t d_v, std::size_t d_model);
  std::size_t input_dim() const { return w1.rows; }
  std::size_t output_dim() const { return w2.cols; }
};

std::vector<std::vector<double>> project_image_features(std::span<const std::vector<double>> features,
                                                        const VisualProjector& proj);

/// The image's own feature when it has one (its length must be d_v), else a
/// deterministic pseudo-feature derived from the locator.
std::vector<double> image_feature(const ImageRef& image, std::size_t d_v);

/// Lays out X. Budgets from `cfg` are enforced first with the dataset
/// builder's truncation rules.
EncodedContext encode_context(const data::MultimodalExample& example, const Tokenizer& tokenizer,
                              const ModelConfig& cfg);

/// Attaches a response block. `r_targets` is parallel to `r_inputs`; -1
/// marks unsupervised positions. Positions continue from X for the shared
/// variant and restart at 0 for the separate variant.
InputBatch make_batch(const EncodedContext& context, std::span<const int> r_inputs, std::span<const int> r_targets,
                      const ModelConfig& cfg);

/// Response tokens plus [EOS], truncated to the response budget first.
std::vector<int> response_tokens(const data::MultimodalExample& example, const Tokenizer& tokenizer,
                                 const ModelConfig& cfg);

/// Full input for one example. Shared: R = [BOS r1..rn EOS], supervising
/// r1..EOS in place. Separate: R = [BOS r1..rn] with targets r1..rn EOS.
/// With include_response false the R block is absent.
InputBatch assemble_input(const data::MultimodalExample& example, const Tokenizer& tokenizer, const ModelConfig& cfg,
                          bool include_response);

/// Context rows attend to every context column and no response column;
/// response rows attend to every context column and causally within R.
std::vector<char> build_attention_mask(const InputBatch& batch, Variant variant);

/// The separate variant's view of the combined mask.
struct AttentionBlocks {
  std::size_t context = 0;
  std::size_t response = 0;
  std::vector<char> encoder_self;  // context x context
  std::vector<char> decoder_self;  // response x response
  std::vector<char> cross;         // response x context
};
AttentionBlocks split_attention_mask(const InputBatch& batch);

/// Writes the corrupted response into the R block of a shared-variant batch
/// and supervises exactly the masked positions. R position i of the masked
/// response is batch position response_span().begin + 1 + i.
void apply_masking(InputBatch& batch, const MaskedResponse& masked);

}  // namespace resee::model
