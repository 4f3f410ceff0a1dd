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
#include "resee/model/config.hpp"

namespace resee::model {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  /// Joins tokens with single spaces; special ids are skipped.
  virtual std::string decode(std::span<const int> ids) const = 0;
  virtual std::size_t size() const = 0;
  virtual std::optional<int> find(std::string_view token) const = 0;
  virtual const SpecialTokens& special() const = 0;
};

/// Word-level vocabulary over text::tokenize with the six special tokens first.
class Vocabulary final : public Tokenizer {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  /// Words of C, R, E and K, ordered by descending count then lexically.
  /// Words seen fewer than `min_count` times map to [UNK]; `max_size` of 0 means unbounded.
  static Vocabulary build(std::span<const data::MultimodalExample> examples, std::size_t min_count = 1,
                          std::size_t max_size = 0);

  std::vector<int> encode(std::string_view text) const override;
  std::string decode(std::span<const int> ids) const override;
  std::size_t size() const override { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const override;
  const SpecialTokens& special() const override { return special_; }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string to_json() const;
  static Vocabulary from_json(std::string_view json);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  SpecialTokens special_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace resee::model
