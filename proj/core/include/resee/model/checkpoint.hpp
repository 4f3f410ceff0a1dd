#pragma once

#include <filesystem>
#include <string>

#include "resee/model/model.hpp"
#include "resee/model/vocabulary.hpp"

namespace resee::model {

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocabulary;
  ParameterSet parameters;
};

/// Binary layout, little-endian:
///   "RSCK" u32 version
///   u32 n, config JSON; u32 n, vocabulary JSON
///   u32 tensor count, then per tensor: u32 n, name, u32 rows, u32 cols, rows*cols float32
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace resee::model
