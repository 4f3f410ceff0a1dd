#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resee/corpus.hpp"
#include "resee/entity_pipeline.hpp"
#include "resee/image_ref.hpp"
#include "resee/turn_retrieval.hpp"

namespace resee::data {

inline constexpr std::string_view kSchemaVersion = "resee-dataset/1";

struct TurnImageOrigin {
  std::size_t turn = 0;  // Turn::index of the context turn the image was retrieved for
  std::size_t rank = 0;  // 0-based retrieval rank

  bool operator==(const TurnImageOrigin&) const = default;
};

struct Provenance {
  std::string session_id;  // parent dialogue session
  std::size_t response_index = 0;
  std::size_t first_turn = 0;
  std::size_t session_turns = 0;
  std::string split = "train";
  std::vector<TurnImageOrigin> turn_images;  // parallel to V_T
  std::vector<std::string> entity_images;    // entity surface per V_E entry

  bool operator==(const Provenance&) const = default;
};

/// {C, E, V_T, V_E} plus the response R and optional document knowledge K.
struct MultimodalExample {
  std::string id;
  std::vector<corpus::Turn> context;
  std::vector<std::string> entities;
  std::vector<ImageRef> turn_images;
  std::vector<ImageRef> entity_images;
  corpus::Turn response;
  std::optional<std::vector<std::string>> knowledge;
  Provenance provenance;

  bool operator==(const MultimodalExample&) const = default;
};

struct BuilderConfig {
  std::size_t cap_turn = 5;
  std::size_t cap_entity = 8;
  std::size_t context_token_budget = 190;
  std::size_t response_token_budget = 35;
  std::size_t images_per_entity = 1;
  std::size_t turn_images_per_turn = 5;  // top-k ranks consumed per turn
  bool include_entities = true;
  bool include_turn_images = true;
  bool include_entity_images = true;
  bool include_knowledge = false;

  /// Budgets for the knowledge-grounded corpus: 8 entities, 5 turn images, 190/35 tokens.
  static BuilderConfig wow();
  /// Budgets for the daily-dialogue corpus: 6 entity images, 5 turn images, 185/35 tokens.
  static BuilderConfig dd();
  void validate() const;
};

struct BuildWarnings {
  std::size_t turns_without_retrieval = 0;
  std::size_t entities_without_images = 0;
};

std::vector<MultimodalExample> build_examples(std::span<const corpus::DialogueSession> chunks,
                                              std::span<const retrieval::TurnRetrievalResult> retrieval,
                                              const entity::EntityManifest& entities,
                                              std::span<const corpus::CaptionedImage> pool, const BuilderConfig& cfg,
                                              BuildWarnings* warnings = nullptr);

// Token accounting of the assembled model input. The context side is
//   [V_T SEP] [V_E SEP] [E SEP] (turn SEP)* [K SEP]
// where bracketed groups are omitted when empty; one slot per image.
std::size_t entity_block_length(const MultimodalExample& ex);
std::size_t context_side_length(const MultimodalExample& ex);
std::size_t response_length(const MultimodalExample& ex);

/// Truncates the response from the right and the context from the left
/// (oldest tokens first, then knowledge from the right) until both budgets
/// hold. Turn images whose turn is dropped are removed with it.
void enforce_budgets(MultimodalExample& ex, std::size_t context_budget, std::size_t response_budget);

enum class AblationVariant {
  kFull,
  kNoEntities,                // -E
  kNoEntityImages,            // -EV
  kNoEntitiesNoTurnImages,    // -E-TV
  kNoEntitiesNoEntityImages,  // -E-EV
};

std::string_view to_string(AblationVariant v);
AblationVariant parse_variant(std::string_view s);

std::vector<MultimodalExample> ablation_view(std::span<const MultimodalExample> examples, AblationVariant variant);

/// One JSON object per line with exactly the fields
/// {id, C, E, V_T, V_E, R, K, provenance, schema_version}.
std::string serialize(std::span<const MultimodalExample> examples);
std::vector<MultimodalExample> deserialize(std::string_view content);
void save_examples(const std::filesystem::path& path, std::span<const MultimodalExample> examples);
std::vector<MultimodalExample> load_examples(const std::filesystem::path& path);

/// Throws InvariantError when an example breaks the caps or traceability rules.
void validate_example(const MultimodalExample& ex, const BuilderConfig& cfg);

}  // namespace resee::data
