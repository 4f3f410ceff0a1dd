#include "resee/entity_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include "image_json.hpp"
#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/text.hpp"

namespace resee::entity {
namespace {

constexpr std::string_view kModule = "entity_pipeline";
using detail::json;

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  const auto content = detail::read_file(path, kModule);
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    auto line = text::trim(std::string_view(content).substr(pos, nl - pos));
    if (!line.empty() && line.front() != '#') out.push_back(std::move(line));
    pos = nl + 1;
  }
  return out;
}

// Merges `rec` into `records`, keeping first-occurrence order and giving
// named entities precedence.
void merge_record(std::vector<EntityRecord>& records, std::map<std::string, std::size_t>& where,
                  const EntityRecord& rec) {
  auto it = where.find(rec.surface);
  if (it == where.end()) {
    where.emplace(rec.surface, records.size());
    records.push_back(rec);
    return;
  }
  auto& existing = records[it->second];
  if (rec.kind == EntityKind::kNamedEntity && existing.kind != EntityKind::kNamedEntity) {
    existing.kind = EntityKind::kNamedEntity;
    existing.query = rec.query;
  }
}

}  // namespace

std::string_view to_string(EntityKind k) { return k == EntityKind::kNamedEntity ? "named-entity" : "noun"; }

EntityKind parse_kind(std::string_view s) {
  if (s == "named-entity") return EntityKind::kNamedEntity;
  if (s == "noun") return EntityKind::kNoun;
  throw SchemaError(std::string(kModule), "unknown entity kind '" + std::string(s) + "'");
}

DictionaryNerTagger::DictionaryNerTagger(std::span<const std::string> entries) {
  for (const auto& e : entries) {
    auto toks = text::tokenize(e);
    if (!toks.empty()) entries_.push_back(std::move(toks));
  }
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
}

DictionaryNerTagger DictionaryNerTagger::load(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  return DictionaryNerTagger(lines);
}

std::vector<TokenRange> DictionaryNerTagger::tag(std::span<const std::string> tokens) const {
  std::vector<std::string> lower;
  lower.reserve(tokens.size());
  for (const auto& t : tokens) lower.push_back(text::to_lower(t));
  std::vector<TokenRange> out;
  std::size_t i = 0;
  while (i < lower.size()) {
    std::size_t matched = 0;
    for (const auto& entry : entries_) {
      if (i + entry.size() > lower.size()) continue;
      if (std::equal(entry.begin(), entry.end(), lower.begin() + static_cast<std::ptrdiff_t>(i))) {
        matched = entry.size();
        break;
      }
    }
    if (matched > 0) {
      out.push_back({i, i + matched});
      i += matched;
    } else {
      ++i;
    }
  }
  return out;
}

LexiconNounTagger::LexiconNounTagger(std::span<const std::string> lexicon) {
  for (const auto& w : lexicon) lexicon_.insert(text::normalize_noun(w));
}

LexiconNounTagger LexiconNounTagger::load(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  return LexiconNounTagger(lines);
}

std::vector<std::size_t> LexiconNounTagger::nouns(std::span<const std::string> tokens) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (lexicon_.contains(text::singularize(text::to_lower(tokens[i])))) out.push_back(i);
  }
  return out;
}

SessionMentions extract_mentions(const corpus::DialogueSession& session, const NerTagger& ner, const NounTagger& pos,
                                 std::vector<EntityRecord>* records) {
  SessionMentions out;
  out.session_id = session.session_id;
  std::map<std::string, std::size_t> where;
  for (const auto& turn : session.turns) {
    const auto tokens = text::tokens_cased(turn.text);
    std::vector<TokenRange> spans;
    std::vector<std::size_t> nouns;
    try {
      spans = ner.tag(tokens);
      nouns = pos.nouns(tokens);
    } catch (const std::exception& e) {
      throw ExtractionError(std::string(kModule), "session '" + session.session_id + "' turn " +
                                                      std::to_string(turn.index) + ": tagger failed: " + e.what());
    }
    std::vector<bool> covered(tokens.size(), false);
    // (token position, record) pairs, sorted by position afterwards.
    std::vector<std::pair<std::size_t, EntityRecord>> found;
    for (const auto& span : spans) {
      if (span.begin >= span.end || span.end > tokens.size()) {
        throw ExtractionError(std::string(kModule), "turn " + std::to_string(turn.index) + ": invalid tagger span");
      }
      std::vector<std::string> words(tokens.begin() + static_cast<std::ptrdiff_t>(span.begin),
                                     tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
      for (auto k = span.begin; k < span.end; ++k) covered[k] = true;
      EntityRecord rec;
      rec.query = text::join(words);
      rec.surface = text::to_lower(rec.query);
      rec.kind = EntityKind::kNamedEntity;
      found.emplace_back(span.begin, std::move(rec));
    }
    for (auto p : nouns) {
      if (p >= tokens.size() || covered[p]) continue;
      EntityRecord rec;
      rec.query = tokens[p];
      rec.surface = text::normalize_noun(tokens[p]);
      rec.kind = EntityKind::kNoun;
      if (rec.surface.empty()) continue;
      found.emplace_back(p, std::move(rec));
    }
    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [_, rec] : found) {
      out.mentions.push_back({rec.surface, turn.index});
      if (records) merge_record(*records, where, rec);
    }
  }
  return out;
}

std::vector<EntityRecord> extract_entities(const corpus::DialogueSession& session, const NerTagger& ner,
                                           const NounTagger& pos) {
  std::vector<EntityRecord> records;
  extract_mentions(session, ner, pos, &records);
  return records;
}

const EntityRecord* EntityManifest::find(std::string_view surface) const {
  for (const auto& r : records) {
    if (r.surface == surface) return &r;
  }
  return nullptr;
}

const SessionMentions* EntityManifest::mentions(std::string_view session_id) const {
  for (const auto& s : sessions) {
    if (s.session_id == session_id) return &s;
  }
  return nullptr;
}

EntityManifest build_manifest(std::span<const corpus::DialogueSession> sessions, const NerTagger& ner,
                              const NounTagger& pos) {
  EntityManifest m;
  std::map<std::string, std::size_t> where;
  for (const auto& s : sessions) {
    std::vector<EntityRecord> local;
    auto mentions = extract_mentions(s, ner, pos, &local);
    for (const auto& rec : local) merge_record(m.records, where, rec);
    for (const auto& mention : mentions.mentions) ++m.records[where.at(mention.surface)].corpus_frequency;
    m.sessions.push_back(std::move(mentions));
  }
  return m;
}

std::vector<EntityRecord> filter_by_frequency(std::span<const EntityRecord> records, std::size_t min_count,
                                              std::size_t max_count) {
  if (min_count > max_count) throw ConfigError(std::string(kModule), "min_count must not exceed max_count");
  std::vector<EntityRecord> out;
  for (const auto& r : records) {
    if (r.corpus_frequency >= min_count && r.corpus_frequency <= max_count) out.push_back(r);
  }
  return out;
}

void apply_frequency_filter(EntityManifest& manifest, std::size_t min_count, std::size_t max_count) {
  manifest.records = filter_by_frequency(manifest.records, min_count, max_count);
  std::map<std::string, bool, std::less<>> keep;
  for (const auto& r : manifest.records) keep[r.surface] = true;
  for (auto& s : manifest.sessions) {
    std::erase_if(s.mentions, [&](const Mention& m) { return !keep.contains(m.surface); });
  }
}

EntityRecord fetch_images(EntityRecord entity, std::span<SearchClient* const> clients, std::size_t n,
                          const RetryPolicy& retry) {
  if (n == 0) throw ConfigError(std::string(kModule), "images per entity must be >= 1");
  if (clients.empty()) throw ConfigError(std::string(kModule), "no search clients configured");
  const SleepFn sleep = retry.sleep ? retry.sleep : SleepFn([](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  });
  const std::string query = entity.query.empty() ? entity.surface : entity.query;
  entity.images.clear();
  for (auto* client : clients) {
    if (entity.images.size() >= n) break;
    auto backoff = retry.initial_backoff;
    const auto attempts = std::max<std::size_t>(retry.max_attempts, 1);
    for (std::size_t attempt = 1; attempt <= attempts; ++attempt) {
      auto resp = client->search(query, n - entity.images.size());
      if (resp.status == SearchStatus::kOk) {
        for (auto& ref : resp.images) {
          if (entity.images.size() >= n) break;
          if (ref.locator.empty()) continue;
          entity.images.push_back(std::move(ref));
        }
        break;
      }
      if (resp.status == SearchStatus::kPermanent) {
        log::warn(kModule, "provider " + std::string(to_string(client->provider())) + " failed permanently for '" +
                               query + "': " + resp.message);
        break;
      }
      if (attempt == attempts) {
        log::warn(kModule, "provider " + std::string(to_string(client->provider())) + " gave up on '" + query +
                               "' after " + std::to_string(attempt) + " attempts");
        break;
      }
      sleep(backoff);
      backoff = std::min(retry.max_backoff, std::chrono::milliseconds(static_cast<std::int64_t>(
                                                std::llround(static_cast<double>(backoff.count()) * retry.multiplier))));
    }
  }
  entity.fetch_failed = entity.images.empty();
  return entity;
}

FetchReport fetch_all(std::vector<EntityRecord>& records, std::span<SearchClient* const> clients, std::size_t n,
                      const RetryPolicy& retry, std::size_t workers) {
  std::vector<EntityRecord> results(records.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(std::max<std::size_t>(workers, 1));
  const auto work = [&](std::size_t worker) {
    try {
      for (auto i = next++; i < records.size(); i = next++) results[i] = fetch_images(records[i], clients, n, retry);
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  records = std::move(results);
  FetchReport report;
  report.entities = records.size();
  for (const auto& r : records) {
    if (r.fetch_failed) ++report.failed;
    else ++report.with_images;
  }
  return report;
}

void save_manifest(const std::filesystem::path& path, std::span<const EntityRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json images = json::array();
    for (const auto& ref : r.images) images.push_back(detail::image_to_json(ref));
    const json j = {{"surface", r.surface},
                    {"kind", std::string(to_string(r.kind))},
                    {"frequency", r.corpus_frequency},
                    {"query", r.query},
                    {"images", std::move(images)},
                    {"failed", r.fetch_failed}};
    out += j.dump();
    out += '\n';
  }
  detail::write_file(path, out, kModule);
}

std::vector<EntityRecord> load_manifest(const std::filesystem::path& path) {
  std::vector<EntityRecord> out;
  detail::for_each_json_line(detail::read_file(path, kModule), kModule, [&](std::size_t line, const json& j) {
    const auto where = "line " + std::to_string(line);
    detail::require_known_fields(j, {"surface", "kind", "frequency", "query", "images", "failed"}, kModule, where);
    EntityRecord r;
    r.surface = detail::get_field<std::string>(j, "surface", kModule, where);
    r.kind = parse_kind(detail::get_field<std::string>(j, "kind", kModule, where));
    r.corpus_frequency = detail::get_field<std::size_t>(j, "frequency", kModule, where);
    r.query = detail::get_field<std::string>(j, "query", kModule, where);
    r.fetch_failed = detail::get_field<bool>(j, "failed", kModule, where);
    for (const auto& ij : j.at("images")) r.images.push_back(detail::image_from_json(ij, kModule, where));
    if (r.surface.empty()) throw SchemaError(std::string(kModule), where + ": empty surface");
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace resee::entity
