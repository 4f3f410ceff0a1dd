#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "resee/corpus.hpp"
#include "resee/image_ref.hpp"
#include "resee/search_client.hpp"

namespace resee::entity {

enum class EntityKind { kNamedEntity, kNoun };

std::string_view to_string(EntityKind k);
EntityKind parse_kind(std::string_view s);

struct EntityRecord {
  std::string surface;  // lowercased, nouns singularized
  std::string query;    // original casing of the first occurrence
  EntityKind kind = EntityKind::kNoun;
  std::size_t corpus_frequency = 0;
  std::vector<ImageRef> images;
  bool fetch_failed = false;

  bool operator==(const EntityRecord&) const = default;
};

/// Half-open token range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

class NerTagger {
 public:
  virtual ~NerTagger() = default;
  virtual std::vector<TokenRange> tag(std::span<const std::string> tokens) const = 0;
};

class NounTagger {
 public:
  virtual ~NounTagger() = default;
  /// Positions of noun tokens.
  virtual std::vector<std::size_t> nouns(std::span<const std::string> tokens) const = 0;
};

/// Case-insensitive longest-match gazetteer.
class DictionaryNerTagger final : public NerTagger {
 public:
  explicit DictionaryNerTagger(std::span<const std::string> entries);
  static DictionaryNerTagger load(const std::filesystem::path& path);  // one entry per line
  std::vector<TokenRange> tag(std::span<const std::string> tokens) const override;

 private:
  std::vector<std::vector<std::string>> entries_;  // lowercased token sequences, longest first
};

/// A token is a noun when its singular lowercase form is in the lexicon.
class LexiconNounTagger final : public NounTagger {
 public:
  explicit LexiconNounTagger(std::span<const std::string> lexicon);
  static LexiconNounTagger load(const std::filesystem::path& path);  // one noun per line
  std::vector<std::size_t> nouns(std::span<const std::string> tokens) const override;

 private:
  std::unordered_set<std::string> lexicon_;
};

struct Mention {
  std::string surface;
  std::size_t turn_index = 0;
};

struct SessionMentions {
  std::string session_id;
  std::vector<Mention> mentions;  // in reading order, repeats included
};

/// Entities of one session, deduplicated by surface, first-occurrence order.
/// Named entities take precedence over nouns on collision; tokens covered by a
/// named-entity span are not tagged as nouns.
std::vector<EntityRecord> extract_entities(const corpus::DialogueSession& session, const NerTagger& ner,
                                           const NounTagger& pos);

/// Every mention in reading order.
SessionMentions extract_mentions(const corpus::DialogueSession& session, const NerTagger& ner, const NounTagger& pos,
                                 std::vector<EntityRecord>* records = nullptr);

struct EntityManifest {
  std::vector<EntityRecord> records;
  std::vector<SessionMentions> sessions;

  const EntityRecord* find(std::string_view surface) const;
  const SessionMentions* mentions(std::string_view session_id) const;
};

/// Extracts entities corpus-wide; corpus_frequency counts every mention.
EntityManifest build_manifest(std::span<const corpus::DialogueSession> sessions, const NerTagger& ner,
                              const NounTagger& pos);

/// Keeps records with min_count <= corpus_frequency <= max_count.
std::vector<EntityRecord> filter_by_frequency(std::span<const EntityRecord> records, std::size_t min_count,
                                              std::size_t max_count);

/// Drops filtered-out records and their mentions from a manifest.
void apply_frequency_filter(EntityManifest& manifest, std::size_t min_count, std::size_t max_count);

/// Queries clients in order until `n` images are collected or all are
/// exhausted. Transient errors are retried with bounded exponential backoff,
/// permanent errors skip the provider. Zero images sets `fetch_failed`.
EntityRecord fetch_images(EntityRecord entity, std::span<SearchClient* const> clients, std::size_t n,
                          const RetryPolicy& retry = {});

struct FetchReport {
  std::size_t entities = 0;
  std::size_t with_images = 0;
  std::size_t failed = 0;
  double failure_rate() const { return entities == 0 ? 0.0 : static_cast<double>(failed) / entities; }
};

/// Runs fetch_images over all records using up to `workers` threads.
/// Output order equals input order.
FetchReport fetch_all(std::vector<EntityRecord>& records, std::span<SearchClient* const> clients, std::size_t n,
                      const RetryPolicy& retry = {}, std::size_t workers = 1);

/// One {"surface", "kind", "frequency", "query", "images": [...], "failed"} record per line.
void save_manifest(const std::filesystem::path& path, std::span<const EntityRecord> records);
std::vector<EntityRecord> load_manifest(const std::filesystem::path& path);

}  // namespace resee::entity
