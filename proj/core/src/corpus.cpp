#include "resee/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "json_util.hpp"
#include "resee/error.hpp"
#include "resee/image_ref.hpp"
#include "resee/text.hpp"

namespace resee {

std::string_view to_string(Provider p) {
  switch (p) {
    case Provider::kProvider1: return "provider-1";
    case Provider::kProvider2: return "provider-2";
    case Provider::kMock: return "mock";
    case Provider::kPool: return "pool";
  }
  return "mock";
}

Provider parse_provider(std::string_view s) {
  if (s == "provider-1") return Provider::kProvider1;
  if (s == "provider-2") return Provider::kProvider2;
  if (s == "mock") return Provider::kMock;
  if (s == "pool") return Provider::kPool;
  throw SchemaError("entity_pipeline", "unknown provider '" + std::string(s) + "'");
}

}  // namespace resee

namespace resee::corpus {
namespace {

constexpr std::string_view kModule = "corpus";
using detail::json;

std::string at_line(std::size_t line) { return "line " + std::to_string(line); }

}  // namespace

std::string_view to_string(Speaker s) { return s == Speaker::kA ? "A" : "B"; }

std::string_view to_string(DomainTag d) {
  return d == DomainTag::kKnowledgeGrounded ? "knowledge-grounded" : "daily";
}

std::string_view to_string(SourceTag s) {
  switch (s) {
    case SourceTag::kPoolA: return "pool-A";
    case SourceTag::kPoolB: return "pool-B";
    case SourceTag::kPoolC: return "pool-C";
    case SourceTag::kPoolD: return "pool-D";
  }
  return "pool-A";
}

Speaker parse_speaker(std::string_view s) {
  if (s == "A") return Speaker::kA;
  if (s == "B") return Speaker::kB;
  throw SchemaError(std::string(kModule), "unknown speaker tag '" + std::string(s) + "'");
}

DomainTag parse_domain(std::string_view s) {
  if (s == "knowledge-grounded") return DomainTag::kKnowledgeGrounded;
  if (s == "daily") return DomainTag::kDaily;
  throw SchemaError(std::string(kModule), "unknown domain tag '" + std::string(s) + "'");
}

SourceTag parse_source_tag(std::string_view s) {
  if (s == "pool-A") return SourceTag::kPoolA;
  if (s == "pool-B") return SourceTag::kPoolB;
  if (s == "pool-C") return SourceTag::kPoolC;
  if (s == "pool-D") return SourceTag::kPoolD;
  throw SchemaError(std::string(kModule), "unknown source tag '" + std::string(s) + "'");
}

DialogueFormat parse_format(std::string_view s) {
  if (s == "wow-like" || s == "wow") return DialogueFormat::kWowLike;
  if (s == "dd-like" || s == "dd") return DialogueFormat::kDdLike;
  throw ConfigError(std::string(kModule), "unknown dialogue format '" + std::string(s) + "'");
}

void validate_session(const DialogueSession& session, std::size_t min_turns) {
  const auto fail = [&](const std::string& what) {
    throw InvariantError(std::string(kModule), "session '" + session.session_id + "': " + what);
  };
  if (session.session_id.empty()) fail("empty session id");
  if (session.turns.size() < min_turns) {
    fail("has " + std::to_string(session.turns.size()) + " turn(s), at least " + std::to_string(min_turns) +
         " required");
  }
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    const auto& t = session.turns[i];
    if (t.index != i) fail("turn indices are not consecutive from 0");
    if (text::trim(t.text).empty()) fail("turn " + std::to_string(i) + " has empty text");
    if (i > 0 && t.speaker == session.turns[i - 1].speaker) {
      fail("speakers do not alternate at turn " + std::to_string(i));
    }
  }
  if (session.knowledge && session.domain != DomainTag::kKnowledgeGrounded) {
    fail("knowledge passages on a non knowledge-grounded session");
  }
}

std::vector<DialogueSession> parse_dialogues(std::string_view content, DialogueFormat format) {
  std::vector<DialogueSession> sessions;
  std::set<std::string> seen_ids;
  detail::for_each_json_line(content, kModule, [&](std::size_t line, const json& j) {
    const auto where = at_line(line);
    detail::require_known_fields(j, {"id", "turns", "knowledge", "split", "topic"}, kModule, where);
    DialogueSession s;
    s.session_id = detail::get_field<std::string>(j, "id", kModule, where);
    if (!seen_ids.insert(s.session_id).second) {
      throw SchemaError(std::string(kModule), where + ": duplicate session id '" + s.session_id + "'");
    }
    s.domain = format == DialogueFormat::kWowLike ? DomainTag::kKnowledgeGrounded : DomainTag::kDaily;
    if (j.contains("split")) s.split = detail::get_field<std::string>(j, "split", kModule, where);
    if (j.contains("knowledge")) {
      if (format != DialogueFormat::kWowLike) {
        throw SchemaError(std::string(kModule), where + ": 'knowledge' is only allowed in wow-like files");
      }
      s.knowledge = detail::get_field<std::vector<std::string>>(j, "knowledge", kModule, where);
    }
    const auto& turns = j.contains("turns") ? j.at("turns") : json();
    if (!turns.is_array()) throw SchemaError(std::string(kModule), where + ": 'turns' must be an array");
    std::map<std::string, Speaker> roles;
    for (const auto& tj : turns) {
      const auto twhere = where + " turn " + std::to_string(s.turns.size());
      detail::require_known_fields(tj, {"speaker", "text"}, kModule, twhere);
      Turn t;
      t.role = detail::get_field<std::string>(tj, "speaker", kModule, twhere);
      t.text = text::trim(detail::get_field<std::string>(tj, "text", kModule, twhere));
      t.index = s.turns.size();
      auto it = roles.find(t.role);
      if (it == roles.end()) {
        if (roles.size() == 2) {
          throw InvariantError(std::string(kModule), twhere + ": more than two speakers");
        }
        it = roles.emplace(t.role, roles.empty() ? Speaker::kA : Speaker::kB).first;
      }
      t.speaker = it->second;
      s.turns.push_back(std::move(t));
    }
    try {
      validate_session(s);
    } catch (const InvariantError& e) {
      throw InvariantError(std::string(kModule), where + ": " + e.what());
    }
    sessions.push_back(std::move(s));
  });
  if (sessions.empty()) throw EmptyCorpusError(std::string(kModule), "no dialogue sessions found");
  return sessions;
}

std::vector<DialogueSession> load_dialogues(const std::filesystem::path& path, DialogueFormat format) {
  return parse_dialogues(detail::read_file(path, kModule), format);
}

void save_dialogues(const std::filesystem::path& path, std::span<const DialogueSession> sessions) {
  std::string out;
  for (const auto& s : sessions) {
    json j;
    j["id"] = s.session_id;
    j["split"] = s.split;
    if (s.knowledge) j["knowledge"] = *s.knowledge;
    json turns = json::array();
    for (const auto& t : s.turns) {
      turns.push_back({{"speaker", t.role.empty() ? std::string(to_string(t.speaker)) : t.role}, {"text", t.text}});
    }
    j["turns"] = std::move(turns);
    out += j.dump();
    out += '\n';
  }
  detail::write_file(path, out, kModule);
}

std::vector<DialogueSession> chunk_sessions(std::span<const DialogueSession> sessions, std::size_t max_turns) {
  if (max_turns < 2) throw ConfigError(std::string(kModule), "chunk max_turns must be >= 2");
  std::vector<DialogueSession> chunks;
  for (const auto& s : sessions) {
    for (std::size_t r = 1; r < s.turns.size(); ++r) {
      const std::size_t first = r > max_turns ? r - max_turns : 0;
      DialogueSession c;
      c.session_id = s.session_id + "@" + std::to_string(r);
      c.domain = s.domain;
      c.knowledge = s.knowledge;
      c.split = s.split;
      c.parent_id = s.session_id;
      c.first_turn = first;
      c.parent_turns = s.turns.size();
      for (std::size_t i = first; i <= r; ++i) {
        Turn t = s.turns[i];
        t.index = i - first;
        c.turns.push_back(std::move(t));
      }
      chunks.push_back(std::move(c));
    }
  }
  return chunks;
}

std::vector<CaptionedImage> parse_caption_pool(std::string_view content) {
  std::vector<CaptionedImage> pool;
  std::optional<std::size_t> dim;
  detail::for_each_json_line(content, kModule, [&](std::size_t line, const json& j) {
    const auto where = at_line(line);
    detail::require_known_fields(j, {"image_id", "caption", "source", "feature"}, kModule, where);
    CaptionedImage img;
    img.image_id = detail::get_field<std::string>(j, "image_id", kModule, where);
    img.caption = text::trim(detail::get_field<std::string>(j, "caption", kModule, where));
    img.source = parse_source_tag(detail::get_field<std::string>(j, "source", kModule, where));
    if (img.image_id.empty()) throw PoolError(std::string(kModule), where + ": empty image_id");
    if (img.caption.empty()) throw PoolError(std::string(kModule), "image '" + img.image_id + "' has an empty caption");
    if (j.contains("feature") && !j.at("feature").is_null()) {
      img.feature = detail::get_field<std::vector<double>>(j, "feature", kModule, where);
      if (!dim) dim = img.feature->size();
      if (img.feature->size() != *dim) {
        throw PoolError(std::string(kModule), "image '" + img.image_id + "' has feature dimension " +
                                                  std::to_string(img.feature->size()) + ", expected " +
                                                  std::to_string(*dim));
      }
    }
    pool.push_back(std::move(img));
  });
  if (pool.empty()) throw EmptyCorpusError(std::string(kModule), "caption pool is empty");
  std::stable_sort(pool.begin(), pool.end(),
                   [](const CaptionedImage& a, const CaptionedImage& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].image_id == pool[i - 1].image_id) {
      throw PoolError(std::string(kModule), "duplicate image_id '" + pool[i].image_id + "'");
    }
  }
  return pool;
}

std::vector<CaptionedImage> load_caption_pool(const std::filesystem::path& path) {
  return parse_caption_pool(detail::read_file(path, kModule));
}

}  // namespace resee::corpus
