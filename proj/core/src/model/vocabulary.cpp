#include "resee/model/vocabulary.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "resee/error.hpp"
#include "resee/text.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";

std::vector<std::string> special_names() { return {"[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]", "[MASK]"}; }

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : tokens_(special_names()) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  for (auto& w : words) {
    if (index_.contains(w)) continue;
    index_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(w));
  }
}

Vocabulary Vocabulary::build(std::span<const data::MultimodalExample> examples, std::size_t min_count,
                             std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  const auto count = [&](std::string_view s) {
    for (auto& t : text::tokenize(s)) ++counts[std::move(t)];
  };
  for (const auto& ex : examples) {
    for (const auto& t : ex.context) count(t.text);
    count(ex.response.text);
    for (const auto& e : ex.entities) count(e);
    if (ex.knowledge) {
      for (const auto& p : *ex.knowledge) count(p);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts) {
    if (n >= min_count) ranked.emplace_back(w, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, n] : ranked) {
    if (max_size != 0 && words.size() + static_cast<std::size_t>(SpecialTokens::count()) >= max_size) break;
    words.push_back(w);
  }
  return Vocabulary(std::move(words));
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : text::tokenize(text)) {
    auto it = index_.find(t);
    ids.push_back(it == index_.end() ? special_.unk : it->second);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (special_.is_special(id) && id != special_.unk) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) continue;
    if (!out.empty()) out += ' ';
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j = tokens_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(std::string_view json) {
  std::vector<std::string> all;
  try {
    all = nlohmann::json::parse(json).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(kModule), std::string("vocabulary: ") + e.what());
  }
  const auto specials = special_names();
  if (all.size() < specials.size() || !std::equal(specials.begin(), specials.end(), all.begin())) {
    throw SchemaError(std::string(kModule), "vocabulary does not start with the special tokens");
  }
  Vocabulary v(std::vector<std::string>(all.begin() + static_cast<std::ptrdiff_t>(specials.size()), all.end()));
  if (v.size() != all.size()) throw SchemaError(std::string(kModule), "vocabulary has duplicate tokens");
  return v;
}

}  // namespace resee::model
