#include <set>

#include "image_json.hpp"
#include "resee/dataset_builder.hpp"
#include "resee/error.hpp"

namespace resee::data {
namespace {

constexpr std::string_view kModule = "dataset_builder";
using detail::json;

json turn_to_json(const corpus::Turn& t) {
  return {{"speaker", std::string(corpus::to_string(t.speaker))}, {"text", t.text}, {"index", t.index}, {"role", t.role}};
}

corpus::Turn turn_from_json(const json& j, std::string_view where) {
  detail::require_known_fields(j, {"speaker", "text", "index", "role"}, kModule, where);
  corpus::Turn t;
  t.speaker = corpus::parse_speaker(detail::get_field<std::string>(j, "speaker", kModule, where));
  t.text = detail::get_field<std::string>(j, "text", kModule, where);
  t.index = detail::get_field<std::size_t>(j, "index", kModule, where);
  t.role = detail::get_field<std::string>(j, "role", kModule, where);
  return t;
}

json example_to_json(const MultimodalExample& ex) {
  json c = json::array();
  for (const auto& t : ex.context) c.push_back(turn_to_json(t));
  json vt = json::array();
  for (const auto& r : ex.turn_images) vt.push_back(detail::image_to_json(r));
  json ve = json::array();
  for (const auto& r : ex.entity_images) ve.push_back(detail::image_to_json(r));
  json origins = json::array();
  for (const auto& o : ex.provenance.turn_images) origins.push_back({{"turn", o.turn}, {"rank", o.rank}});
  json prov = {{"session_id", ex.provenance.session_id},
               {"response_index", ex.provenance.response_index},
               {"first_turn", ex.provenance.first_turn},
               {"session_turns", ex.provenance.session_turns},
               {"split", ex.provenance.split},
               {"turn_images", std::move(origins)},
               {"entity_images", ex.provenance.entity_images}};
  return {{"schema_version", std::string(kSchemaVersion)},
          {"id", ex.id},
          {"C", std::move(c)},
          {"E", ex.entities},
          {"V_T", std::move(vt)},
          {"V_E", std::move(ve)},
          {"R", turn_to_json(ex.response)},
          {"K", ex.knowledge ? json(*ex.knowledge) : json(nullptr)},
          {"provenance", std::move(prov)}};
}

MultimodalExample example_from_json(const json& j, std::string_view where) {
  if (!j.is_object()) throw SchemaError(std::string(kModule), std::string(where) + ": expected an object");
  if (!j.contains("schema_version")) {
    throw VersionError(std::string(kModule), std::string(where) + ": missing schema_version");
  }
  const auto version = detail::get_field<std::string>(j, "schema_version", kModule, where);
  if (version != kSchemaVersion) {
    throw VersionError(std::string(kModule), std::string(where) + ": schema version '" + version + "', expected '" +
                                                 std::string(kSchemaVersion) + "'");
  }
  detail::require_known_fields(j, {"id", "C", "E", "V_T", "V_E", "R", "K", "provenance", "schema_version"}, kModule,
                               where);
  for (const char* key : {"id", "C", "E", "V_T", "V_E", "R", "K", "provenance"}) {
    if (!j.contains(key)) throw SchemaError(std::string(kModule), std::string(where) + ": missing field '" + key + "'");
  }
  MultimodalExample ex;
  ex.id = detail::get_field<std::string>(j, "id", kModule, where);
  for (const auto& t : j.at("C")) ex.context.push_back(turn_from_json(t, where));
  ex.entities = detail::get_field<std::vector<std::string>>(j, "E", kModule, where);
  for (const auto& r : j.at("V_T")) ex.turn_images.push_back(detail::image_from_json(r, kModule, where));
  for (const auto& r : j.at("V_E")) ex.entity_images.push_back(detail::image_from_json(r, kModule, where));
  ex.response = turn_from_json(j.at("R"), where);
  if (!j.at("K").is_null()) ex.knowledge = detail::get_field<std::vector<std::string>>(j, "K", kModule, where);
  const auto& p = j.at("provenance");
  detail::require_known_fields(p,
                               {"session_id", "response_index", "first_turn", "session_turns", "split", "turn_images",
                                "entity_images"},
                               kModule, std::string(where) + " provenance");
  ex.provenance.session_id = detail::get_field<std::string>(p, "session_id", kModule, where);
  ex.provenance.response_index = detail::get_field<std::size_t>(p, "response_index", kModule, where);
  ex.provenance.first_turn = detail::get_field<std::size_t>(p, "first_turn", kModule, where);
  ex.provenance.session_turns = detail::get_field<std::size_t>(p, "session_turns", kModule, where);
  ex.provenance.split = detail::get_field<std::string>(p, "split", kModule, where);
  for (const auto& o : p.at("turn_images")) {
    detail::require_known_fields(o, {"turn", "rank"}, kModule, std::string(where) + " provenance");
    ex.provenance.turn_images.push_back({detail::get_field<std::size_t>(o, "turn", kModule, where),
                                         detail::get_field<std::size_t>(o, "rank", kModule, where)});
  }
  ex.provenance.entity_images = detail::get_field<std::vector<std::string>>(p, "entity_images", kModule, where);
  return ex;
}

}  // namespace

std::string serialize(std::span<const MultimodalExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += example_to_json(ex).dump();
    out += '\n';
  }
  return out;
}

std::vector<MultimodalExample> deserialize(std::string_view content) {
  std::vector<MultimodalExample> out;
  detail::for_each_json_line(content, kModule, [&](std::size_t line, const json& j) {
    out.push_back(example_from_json(j, "line " + std::to_string(line)));
  });
  return out;
}

void save_examples(const std::filesystem::path& path, std::span<const MultimodalExample> examples) {
  detail::write_file(path, serialize(examples), kModule);
}

std::vector<MultimodalExample> load_examples(const std::filesystem::path& path) {
  auto out = deserialize(detail::read_file(path, kModule));
  if (out.empty()) throw EmptyCorpusError(std::string(kModule), path.string() + " holds no examples");
  return out;
}

}  // namespace resee::data
