#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace resee::model {

enum class Variant { kShared, kSeparate };

std::string_view to_string(Variant v);
Variant parse_model_variant(std::string_view s);

/// Input blocks in layout order; the value is the segment id.
enum class Segment : int { kTurnImages = 0, kEntityImages = 1, kEntities = 2, kContext = 3, kResponse = 4 };
inline constexpr std::size_t kNumSegments = 5;

struct SpecialTokens {
  int pad = 0;
  int unk = 1;
  int bos = 2;
  int eos = 3;
  int sep = 4;
  int mask = 5;

  /// Special ids occupy [0, count()).
  static constexpr int count() { return 6; }
  bool is_special(int id) const { return id >= 0 && id < count(); }

  bool operator==(const SpecialTokens&) const = default;
};

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;  // per stack; the separate variant has an encoder and a decoder stack
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 64;
  std::size_t max_positions = 232;
  std::size_t d_v = 16;
  std::size_t n_segments = kNumSegments;
  Variant variant = Variant::kShared;
  bool segment_embeddings = true;
  SpecialTokens special;
  double init_std = 0.02;
  std::size_t context_budget = 190;
  std::size_t response_budget = 35;

  /// Throws ConfigError on a broken invariant.
  void validate() const;

  /// Defaults per variant: segment embeddings on for shared, off for separate.
  static ModelConfig for_variant(Variant v, std::size_t vocab_size);

  std::string to_json() const;
  static ModelConfig from_json(std::string_view json);

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace resee::model
