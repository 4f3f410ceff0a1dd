#include "resee/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "resee/error.hpp"
#include "resee/rng.hpp"
#include "resee/text.hpp"

namespace resee::train {
namespace {

constexpr std::string_view kModule = "train_generate";

// Tokens that never make sense as output.
void block_specials(std::vector<double>& logits, const model::SpecialTokens& sp) {
  for (int id : {sp.pad, sp.bos, sp.sep, sp.mask}) {
    if (id >= 0 && static_cast<std::size_t>(id) < logits.size()) {
      logits[static_cast<std::size_t>(id)] = -std::numeric_limits<double>::infinity();
    }
  }
}

int pick(const std::vector<double>& logits, const DecodeConfig& cfg, Rng& rng) {
  std::vector<int> ids(logits.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  const auto by_logit = [&](int a, int b) {
    const auto la = logits[static_cast<std::size_t>(a)];
    const auto lb = logits[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  };
  if (cfg.strategy == DecodeStrategy::kGreedy) return *std::min_element(ids.begin(), ids.end(), by_logit);
  const auto k = std::min(cfg.top_k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), by_logit);
  const double top = logits[static_cast<std::size_t>(ids[0])];
  std::vector<double> w(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(logits[static_cast<std::size_t>(ids[i])] - top);
    z += w[i];
  }
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return ids[i];
    u -= w[i];
  }
  return ids[0];
}

std::vector<double> next_logits(const model::Model& m, const model::InputBatch& batch,
                                 std::span<const std::string> entities, const model::Tokenizer& tok,
                                 const DecodeConfig& cfg) {
  auto logits = m.logits_at(batch, batch.length() - 1);
  if (cfg.entity_bias_weight != 0.0) logits = entity_logit_bias(logits, entities, tok, cfg.entity_bias_weight);
  block_specials(logits, tok.special());
  return logits;
}

}  // namespace

void DecodeConfig::validate(std::size_t response_budget) const {
  if (max_len > response_budget) {
    throw ConfigError(std::string(kModule), "max_len " + std::to_string(max_len) + " exceeds the response budget " +
                                                std::to_string(response_budget));
  }
  if (strategy == DecodeStrategy::kTopK && top_k == 0) throw ConfigError(std::string(kModule), "top_k must be positive");
  if (!(entity_bias_weight >= 0.0)) throw ConfigError(std::string(kModule), "entity_bias_weight must be non-negative");
}

std::vector<double> entity_logit_bias(std::span<const double> logits, std::span<const std::string> entities,
                                      const model::Tokenizer& tok, double weight) {
  if (!(weight >= 0.0)) throw ConfigError(std::string(kModule), "entity bias weight must be non-negative");
  std::vector<double> out(logits.begin(), logits.end());
  if (weight == 0.0) return out;
  std::set<int> ids;
  for (const auto& e : entities) {
    for (const auto& t : text::tokenize(e)) {
      if (auto id = tok.find(t); id && !tok.special().is_special(*id)) ids.insert(*id);
    }
  }
  for (int id : ids) {
    if (static_cast<std::size_t>(id) < out.size()) out[static_cast<std::size_t>(id)] += weight;
  }
  return out;
}

std::vector<int> generate_separate(const model::Model& m, const model::EncodedContext& x,
                                   std::span<const std::string> entities, const model::Tokenizer& tok,
                                   const DecodeConfig& cfg) {
  if (m.config().variant != model::Variant::kSeparate) {
    throw ConfigError(std::string(kModule), "generate_separate needs a separate-variant model");
  }
  cfg.validate(m.config().response_budget);
  Rng rng(cfg.seed);
  const auto& sp = tok.special();
  std::vector<int> out;
  std::vector<int> inputs{sp.bos};
  while (out.size() < cfg.max_len) {
    const std::vector<int> targets(inputs.size(), -1);
    const auto batch = model::make_batch(x, inputs, targets, m.config());
    const int id = pick(next_logits(m, batch, entities, tok, cfg), cfg, rng);
    if (id == sp.eos) break;
    out.push_back(id);
    inputs.push_back(id);
  }
  return out;
}

std::vector<int> generate_shared(const model::Model& m, const model::EncodedContext& x,
                                 std::span<const std::string> entities, const model::Tokenizer& tok,
                                 const DecodeConfig& cfg, const std::function<void(const model::InputBatch&)>& trace) {
  if (m.config().variant != model::Variant::kShared) {
    throw ConfigError(std::string(kModule), "generate_shared needs a shared-variant model");
  }
  cfg.validate(m.config().response_budget);
  Rng rng(cfg.seed);
  const auto& sp = tok.special();
  std::vector<int> out;
  std::vector<int> inputs{sp.bos, sp.mask};
  while (out.size() < cfg.max_len) {
    const std::vector<int> targets(inputs.size(), -1);
    const auto batch = model::make_batch(x, inputs, targets, m.config());
    if (trace) trace(batch);
    const int id = pick(next_logits(m, batch, entities, tok, cfg), cfg, rng);
    if (id == sp.eos) break;
    out.push_back(id);
    inputs.back() = id;
    inputs.push_back(sp.mask);
  }
  return out;
}

std::string generate_response(const model::Model& m, const data::MultimodalExample& ex, const model::Tokenizer& tok,
                              const DecodeConfig& cfg) {
  const auto x = model::encode_context(ex, tok, m.config());
  const auto ids = m.config().variant == model::Variant::kShared ? generate_shared(m, x, ex.entities, tok, cfg)
                                                                : generate_separate(m, x, ex.entities, tok, cfg);
  return tok.decode(ids);
}

}  // namespace resee::train
