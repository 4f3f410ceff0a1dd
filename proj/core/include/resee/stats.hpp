#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "resee/dataset_builder.hpp"

namespace resee::corpus {

struct DatasetStats {
  std::size_t num_sessions = 0;
  std::size_t num_utterances = 0;
  std::size_t unique_turn_images = 0;
  std::size_t unique_entities = 0;
  double avg_turn_images_per_session = 0.0;
  double avg_entity_images_per_session = 0.0;
  std::size_t max_entity_images_per_session = 0;
  std::size_t min_entity_images_per_session = 0;

  bool operator==(const DatasetStats&) const = default;
};

/// Per-session counts are unique image locators over the session's examples.
DatasetStats compute_stats(std::span<const data::MultimodalExample> examples);

/// Aligned rows named after the dataset statistics table.
std::string format_stats_report(const DatasetStats& stats);
std::string stats_to_json(const DatasetStats& stats);

}  // namespace resee::corpus
