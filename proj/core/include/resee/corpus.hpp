#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace resee::corpus {

enum class Speaker { kA, kB };
enum class DomainTag { kKnowledgeGrounded, kDaily };
enum class DialogueFormat { kWowLike, kDdLike };

/// The four caption corpora of the turn-level image pool.
/// pool-A: COCO2017, pool-B: Flickr30k, pool-C: NoCaps, pool-D: Localized Narratives.
enum class SourceTag { kPoolA, kPoolB, kPoolC, kPoolD };
inline constexpr std::size_t kNumSourceTags = 4;

std::string_view to_string(Speaker s);
std::string_view to_string(DomainTag d);
std::string_view to_string(SourceTag s);
Speaker parse_speaker(std::string_view s);
DomainTag parse_domain(std::string_view s);
SourceTag parse_source_tag(std::string_view s);
DialogueFormat parse_format(std::string_view s);

struct Turn {
  Speaker speaker = Speaker::kA;
  std::string text;
  std::size_t index = 0;
  std::string role;  // original speaker name from the source file

  bool operator==(const Turn&) const = default;
};

struct DialogueSession {
  std::string session_id;
  std::vector<Turn> turns;
  DomainTag domain = DomainTag::kDaily;
  std::optional<std::vector<std::string>> knowledge;
  std::string split = "train";

  // Set on chunks produced by chunk_sessions().
  std::string parent_id;
  std::size_t first_turn = 0;  // index of turns[0] in the parent session
  std::size_t parent_turns = 0;

  bool operator==(const DialogueSession&) const = default;
};

struct CaptionedImage {
  std::string image_id;
  std::string caption;
  SourceTag source = SourceTag::kPoolA;
  std::optional<std::vector<double>> feature;
};

/// Throws InvariantError when a session breaks the type invariants.
void validate_session(const DialogueSession& session, std::size_t min_turns = 2);

/// Loads a line-delimited session file. Records:
///   {"id": str, "turns": [{"speaker": str, "text": str}, ...],
///    "knowledge": [str, ...] (wow-like only), "split": str (optional)}
/// Speaker names are normalized to A/B in order of first appearance.
std::vector<DialogueSession> load_dialogues(const std::filesystem::path& path, DialogueFormat format);
std::vector<DialogueSession> parse_dialogues(std::string_view content, DialogueFormat format);

void save_dialogues(const std::filesystem::path& path, std::span<const DialogueSession> sessions);

/// One chunk per response position: up to `max_turns` preceding turns as
/// context plus the response. Chunk ids are "<parent>@<response index>".
std::vector<DialogueSession> chunk_sessions(std::span<const DialogueSession> sessions,
                                            std::size_t max_turns);

/// Loads {"image_id", "caption", "source", "feature"?} records, sorted by image_id.
std::vector<CaptionedImage> load_caption_pool(const std::filesystem::path& path);
std::vector<CaptionedImage> parse_caption_pool(std::string_view content);

}  // namespace resee::corpus
