#include <cmath>

#include "json_util.hpp"
#include "resee/error.hpp"
#include "resee/rng.hpp"
#include "resee/text.hpp"
#include "resee/turn_retrieval.hpp"

namespace resee::retrieval {

HashProjectionEmbedder::HashProjectionEmbedder(std::size_t dimension, std::uint64_t seed)
    : dim_(dimension), seed_(seed) {
  if (dim_ == 0) throw ConfigError("turn_retrieval", "embedding dimension must be positive");
}

std::vector<std::vector<double>> HashProjectionEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    std::vector<double> v(dim_, 0.0);
    auto tokens = text::strip_punctuation(text::tokenize(t));
    if (tokens.empty()) tokens.push_back(text::to_lower(text::trim(t)));
    for (const auto& tok : tokens) {
      Rng rng(mix64(fnv1a64(tok) ^ seed_));
      for (auto& x : v) x += rng.normal();
    }
    out.push_back(std::move(v));
  }
  return out;
}

PrecomputedEmbedder::PrecomputedEmbedder(std::unordered_map<std::string, std::vector<double>> table)
    : table_(std::move(table)) {
  for (const auto& [key, vec] : table_) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
      throw EmbeddingError("turn_retrieval", "inconsistent vector dimension for '" + key + "'");
    }
  }
}

PrecomputedEmbedder PrecomputedEmbedder::load(const std::filesystem::path& path) {
  std::unordered_map<std::string, std::vector<double>> table;
  const auto content = detail::read_file(path, "turn_retrieval");
  detail::for_each_json_line(content, "turn_retrieval", [&](std::size_t line, const detail::json& j) {
    const auto where = "line " + std::to_string(line);
    detail::require_known_fields(j, {"text", "vector"}, "turn_retrieval", where);
    table[detail::get_field<std::string>(j, "text", "turn_retrieval", where)] =
        detail::get_field<std::vector<double>>(j, "vector", "turn_retrieval", where);
  });
  return PrecomputedEmbedder(std::move(table));
}

std::vector<std::vector<double>> PrecomputedEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto it = table_.find(texts[i]);
    if (it == table_.end()) {
      throw EmbeddingError("turn_retrieval", "no precomputed vector for input " + std::to_string(i));
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace resee::retrieval
