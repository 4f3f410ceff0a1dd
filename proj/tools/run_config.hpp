#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "resee/dataset_builder.hpp"
#include "resee/eval_metrics.hpp"
#include "resee/generate.hpp"
#include "resee/model/config.hpp"
#include "resee/train.hpp"
#include "resee/turn_retrieval.hpp"

namespace resee::cli {

/// Merged run configuration. Layers apply in the order defaults, config
/// file, environment (RESEE_<SECTION>_<KEY>), command-line flags. Only keys
/// present in the defaults are accepted. A null default is derived from other
/// fields when the config is resolved.
class RunConfig {
 public:
  RunConfig();

  static nlohmann::ordered_json defaults();

  void merge_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& layer, std::string_view origin);
  void apply_env(const std::function<const char*(const char*)>& getenv);
  /// `key` is "section.field" or a top-level field; `value` is parsed as JSON
  /// when possible and as a plain string otherwise.
  void set(std::string_view key, std::string_view value, std::string_view origin = "flag");

  /// Fills derived (null) fields. `data_feature_dim` is the image feature
  /// dimension found in the data, 0 when unknown.
  void resolve(std::size_t data_feature_dim = 0);

  const nlohmann::ordered_json& tree() const { return tree_; }
  std::string path(std::string_view field) const;  // paths.<field>, empty when unset
  std::uint64_t seed() const;

  data::BuilderConfig builder() const;
  data::AblationVariant ablation() const;
  corpus::DialogueFormat format() const;
  retrieval::RetrievalConfig retrieval() const;
  model::ModelConfig model(std::size_t vocab_size) const;
  train::TrainSchedule schedule() const;
  train::TrainOptions train_options() const;
  train::DecodeConfig decode() const;
  eval::PplMode ppl_mode() const;

  std::string dump() const;
  void write(const std::filesystem::path& path) const;

 private:
  const nlohmann::ordered_json& at(std::string_view section, std::string_view key) const;
  nlohmann::ordered_json tree_;
};

}  // namespace resee::cli
