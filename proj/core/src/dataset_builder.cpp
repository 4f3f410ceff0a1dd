#include "resee/dataset_builder.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/text.hpp"

namespace resee::data {
namespace {

constexpr std::string_view kModule = "dataset_builder";

std::size_t count_tokens(std::string_view s) { return text::token_spans(s).size(); }

using RetrievalKey = std::pair<std::string, std::size_t>;

struct ChunkView {
  const corpus::DialogueSession* chunk;
  std::string parent;
};

// Fills E, V_T and V_E from the current context turns.
void select_knowledge(MultimodalExample& ex, const ChunkView& view,
                      const std::map<RetrievalKey, const retrieval::TurnRetrievalResult*>& retrieval,
                      const entity::EntityManifest& manifest,
                      const std::map<std::string, const corpus::CaptionedImage*, std::less<>>& pool,
                      const BuilderConfig& cfg, BuildWarnings* warnings) {
  const auto first = view.chunk->first_turn;
  ex.entities.clear();
  ex.turn_images.clear();
  ex.entity_images.clear();
  ex.provenance.turn_images.clear();
  ex.provenance.entity_images.clear();

  std::set<std::size_t> live_turns;
  for (const auto& t : ex.context) live_turns.insert(t.index);

  if (cfg.include_turn_images) {
    std::vector<const retrieval::TurnRetrievalResult*> per_turn;
    for (const auto& t : ex.context) {
      auto it = retrieval.find({view.parent, first + t.index});
      if (it == retrieval.end()) {
        if (warnings) {
          ++warnings->turns_without_retrieval;
          log::warn(kModule, "no retrieval result for " + view.parent + " turn " + std::to_string(first + t.index));
        }
        per_turn.push_back(nullptr);
      } else {
        per_turn.push_back(it->second);
      }
    }
    // Breadth-first over turns: rank 0 of every turn before rank 1 of any.
    for (std::size_t rank = 0; rank < cfg.turn_images_per_turn && ex.turn_images.size() < cfg.cap_turn; ++rank) {
      for (std::size_t i = 0; i < per_turn.size() && ex.turn_images.size() < cfg.cap_turn; ++i) {
        if (!per_turn[i] || rank >= per_turn[i]->ranked.size()) continue;
        const auto& hit = per_turn[i]->ranked[rank];
        ImageRef ref;
        ref.locator = hit.image_id;
        ref.provider = Provider::kPool;
        if (auto p = pool.find(hit.image_id); p != pool.end()) {
          ref.license_tag = std::string(corpus::to_string(p->second->source));
          ref.feature = p->second->feature;
        }
        ex.turn_images.push_back(std::move(ref));
        ex.provenance.turn_images.push_back({ex.context[i].index, rank});
      }
    }
  }

  const auto* mentions = manifest.mentions(view.parent);
  if (!mentions) return;
  std::vector<std::string> ordered;
  for (const auto& m : mentions->mentions) {
    if (m.turn_index < first || !live_turns.contains(m.turn_index - first)) continue;
    if (std::find(ordered.begin(), ordered.end(), m.surface) == ordered.end()) ordered.push_back(m.surface);
  }
  if (cfg.include_entities) {
    for (const auto& s : ordered) {
      if (ex.entities.size() >= cfg.cap_entity) break;
      ex.entities.push_back(s);
    }
  }
  if (cfg.include_entity_images) {
    for (const auto& s : ordered) {
      if (ex.entity_images.size() >= cfg.cap_entity) break;
      const auto* rec = manifest.find(s);
      if (!rec || rec->images.empty()) {
        if (warnings) ++warnings->entities_without_images;
        continue;
      }
      for (std::size_t i = 0; i < std::min(cfg.images_per_entity, rec->images.size()); ++i) {
        if (ex.entity_images.size() >= cfg.cap_entity) break;
        ex.entity_images.push_back(rec->images[i]);
        ex.provenance.entity_images.push_back(s);
      }
    }
  }
}

std::size_t knowledge_tokens(const MultimodalExample& ex) {
  std::size_t n = 0;
  if (ex.knowledge) {
    for (const auto& p : *ex.knowledge) n += count_tokens(p);
  }
  return n;
}

}  // namespace

BuilderConfig BuilderConfig::wow() { return BuilderConfig{}; }

BuilderConfig BuilderConfig::dd() {
  BuilderConfig c;
  c.cap_entity = 6;
  c.context_token_budget = 185;
  return c;
}

void BuilderConfig::validate() const {
  if (cap_turn == 0 || cap_entity == 0) throw ConfigError(std::string(kModule), "image caps must be positive");
  if (context_token_budget == 0 || response_token_budget == 0) {
    throw ConfigError(std::string(kModule), "token budgets must be positive");
  }
  if (images_per_entity == 0 || turn_images_per_turn == 0) {
    throw ConfigError(std::string(kModule), "images_per_entity and turn_images_per_turn must be positive");
  }
}

std::size_t entity_block_length(const MultimodalExample& ex) {
  std::size_t n = 0;
  for (const auto& e : ex.entities) n += count_tokens(e);
  return n;
}

std::size_t context_side_length(const MultimodalExample& ex) {
  std::size_t n = 0;
  if (!ex.turn_images.empty()) n += ex.turn_images.size() + 1;
  if (!ex.entity_images.empty()) n += ex.entity_images.size() + 1;
  if (const auto e = entity_block_length(ex); e > 0) n += e + 1;
  for (const auto& t : ex.context) n += count_tokens(t.text) + 1;
  if (const auto k = knowledge_tokens(ex); k > 0) n += k + 1;
  return n;
}

std::size_t response_length(const MultimodalExample& ex) { return count_tokens(ex.response.text); }

void enforce_budgets(MultimodalExample& ex, std::size_t context_budget, std::size_t response_budget) {
  if (context_budget < 2 || response_budget == 0) throw ConfigError(std::string(kModule), "budgets too small");
  if (response_length(ex) > response_budget) ex.response.text = text::keep_first_tokens(ex.response.text, response_budget);

  const auto fixed = [&] {
    std::size_t n = 0;
    if (!ex.turn_images.empty()) n += ex.turn_images.size() + 1;
    if (!ex.entity_images.empty()) n += ex.entity_images.size() + 1;
    if (const auto e = entity_block_length(ex); e > 0) n += e + 1;
    return n;
  };
  // Leave room for at least one context token and its separator.
  while (fixed() + 2 > context_budget) {
    if (!ex.entities.empty()) {
      ex.entities.pop_back();
    } else if (!ex.entity_images.empty()) {
      ex.entity_images.pop_back();
      if (!ex.provenance.entity_images.empty()) ex.provenance.entity_images.pop_back();
    } else if (!ex.turn_images.empty()) {
      ex.turn_images.pop_back();
      if (!ex.provenance.turn_images.empty()) ex.provenance.turn_images.pop_back();
    } else {
      break;
    }
  }
  if (context_side_length(ex) <= context_budget) return;

  std::size_t avail = context_budget - fixed();
  std::vector<corpus::Turn> kept;
  for (auto it = ex.context.rbegin(); it != ex.context.rend(); ++it) {
    const auto cost = count_tokens(it->text) + 1;
    if (cost <= avail) {
      kept.push_back(*it);
      avail -= cost;
      continue;
    }
    if (avail >= 2) {
      auto t = *it;
      t.text = text::keep_last_tokens(t.text, avail - 1);
      kept.push_back(std::move(t));
      avail = 0;
    }
    break;
  }
  std::reverse(kept.begin(), kept.end());
  ex.context = std::move(kept);

  if (ex.knowledge) {
    std::vector<std::string> passages;
    if (avail >= 2) {
      std::size_t room = avail - 1;
      for (const auto& p : *ex.knowledge) {
        const auto n = count_tokens(p);
        if (n == 0) continue;
        if (n <= room) {
          passages.push_back(p);
          room -= n;
        } else {
          if (room > 0) passages.push_back(text::keep_first_tokens(p, room));
          break;
        }
      }
    }
    ex.knowledge = std::move(passages);
  }

  std::set<std::size_t> live;
  for (const auto& t : ex.context) live.insert(t.index);
  if (ex.provenance.turn_images.size() == ex.turn_images.size()) {
    std::vector<ImageRef> images;
    std::vector<TurnImageOrigin> origins;
    for (std::size_t i = 0; i < ex.turn_images.size(); ++i) {
      if (!live.contains(ex.provenance.turn_images[i].turn)) continue;
      images.push_back(ex.turn_images[i]);
      origins.push_back(ex.provenance.turn_images[i]);
    }
    ex.turn_images = std::move(images);
    ex.provenance.turn_images = std::move(origins);
  }
}

std::vector<MultimodalExample> build_examples(std::span<const corpus::DialogueSession> chunks,
                                              std::span<const retrieval::TurnRetrievalResult> retrieval,
                                              const entity::EntityManifest& entities,
                                              std::span<const corpus::CaptionedImage> pool, const BuilderConfig& cfg,
                                              BuildWarnings* warnings) {
  cfg.validate();
  std::map<RetrievalKey, const retrieval::TurnRetrievalResult*> by_turn;
  for (const auto& r : retrieval) by_turn[{r.session_id, r.turn_index}] = &r;
  std::map<std::string, const corpus::CaptionedImage*, std::less<>> by_id;
  for (const auto& img : pool) by_id.emplace(img.image_id, &img);

  std::vector<MultimodalExample> out;
  out.reserve(chunks.size());
  for (const auto& chunk : chunks) {
    if (chunk.turns.size() < 2) {
      throw InvariantError(std::string(kModule), "chunk '" + chunk.session_id + "' has no context turn");
    }
    ChunkView view{&chunk, chunk.parent_id.empty() ? chunk.session_id : chunk.parent_id};
    MultimodalExample ex;
    ex.id = chunk.session_id;
    ex.context.assign(chunk.turns.begin(), chunk.turns.end() - 1);
    ex.response = chunk.turns.back();
    if (cfg.include_knowledge && chunk.knowledge) ex.knowledge = chunk.knowledge;
    ex.provenance.session_id = view.parent;
    ex.provenance.first_turn = chunk.first_turn;
    ex.provenance.response_index = chunk.first_turn + chunk.turns.size() - 1;
    ex.provenance.session_turns = chunk.parent_turns ? chunk.parent_turns : chunk.turns.size();
    ex.provenance.split = chunk.split;

    // First pass sizes the fixed blocks; the second re-selects on the turns
    // that survived truncation so E and V_E only trace to those.
    BuildWarnings local;
    select_knowledge(ex, view, by_turn, entities, by_id, cfg, nullptr);
    enforce_budgets(ex, cfg.context_token_budget, cfg.response_token_budget);
    select_knowledge(ex, view, by_turn, entities, by_id, cfg, &local);
    enforce_budgets(ex, cfg.context_token_budget, cfg.response_token_budget);
    if (warnings) {
      warnings->turns_without_retrieval += local.turns_without_retrieval;
      warnings->entities_without_images += local.entities_without_images;
    }
    validate_example(ex, cfg);
    out.push_back(std::move(ex));
  }
  return out;
}

void validate_example(const MultimodalExample& ex, const BuilderConfig& cfg) {
  const auto fail = [&](const std::string& what) {
    throw InvariantError(std::string(kModule), "example '" + ex.id + "': " + what);
  };
  if (ex.context.empty()) fail("empty context");
  if (ex.turn_images.size() > cfg.cap_turn) fail("turn image cap exceeded");
  if (ex.entity_images.size() > cfg.cap_entity) fail("entity image cap exceeded");
  if (ex.entities.size() > cfg.cap_entity) fail("entity cap exceeded");
  if (ex.provenance.turn_images.size() != ex.turn_images.size()) fail("turn image provenance mismatch");
  if (ex.provenance.entity_images.size() != ex.entity_images.size()) fail("entity image provenance mismatch");
  std::set<std::size_t> live;
  for (const auto& t : ex.context) live.insert(t.index);
  for (const auto& o : ex.provenance.turn_images) {
    if (!live.contains(o.turn)) fail("turn image traces to a turn outside the context");
  }
  if (ex.response.speaker == ex.context.back().speaker) fail("response speaker equals last context speaker");
  if (context_side_length(ex) > cfg.context_token_budget) fail("context token budget exceeded");
  if (response_length(ex) > cfg.response_token_budget) fail("response token budget exceeded");
}

std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::kFull: return "full";
    case AblationVariant::kNoEntities: return "-E";
    case AblationVariant::kNoEntityImages: return "-EV";
    case AblationVariant::kNoEntitiesNoTurnImages: return "-E-TV";
    case AblationVariant::kNoEntitiesNoEntityImages: return "-E-EV";
  }
  return "full";
}

AblationVariant parse_variant(std::string_view s) {
  for (auto v : {AblationVariant::kFull, AblationVariant::kNoEntities, AblationVariant::kNoEntityImages,
                 AblationVariant::kNoEntitiesNoTurnImages, AblationVariant::kNoEntitiesNoEntityImages}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError(std::string(kModule), "unknown ablation variant '" + std::string(s) + "'");
}

std::vector<MultimodalExample> ablation_view(std::span<const MultimodalExample> examples, AblationVariant variant) {
  const bool drop_e = variant == AblationVariant::kNoEntities || variant == AblationVariant::kNoEntitiesNoTurnImages ||
                      variant == AblationVariant::kNoEntitiesNoEntityImages;
  const bool drop_ev =
      variant == AblationVariant::kNoEntityImages || variant == AblationVariant::kNoEntitiesNoEntityImages;
  const bool drop_tv = variant == AblationVariant::kNoEntitiesNoTurnImages;
  std::vector<MultimodalExample> out(examples.begin(), examples.end());
  for (auto& ex : out) {
    if (drop_e) ex.entities.clear();
    if (drop_ev) {
      ex.entity_images.clear();
      ex.provenance.entity_images.clear();
    }
    if (drop_tv) {
      ex.turn_images.clear();
      ex.provenance.turn_images.clear();
    }
  }
  return out;
}

}  // namespace resee::data
