#include "resee/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "json_util.hpp"
#include "resee/error.hpp"

namespace resee::corpus {

DatasetStats compute_stats(std::span<const data::MultimodalExample> examples) {
  if (examples.empty()) throw EmptyCorpusError("corpus", "cannot compute statistics of an empty dataset");
  struct PerSession {
    std::size_t turns = 0;
    std::set<std::string> turn_images;
    std::set<std::string> entity_images;
  };
  std::map<std::string, PerSession> sessions;
  std::set<std::string> turn_images;
  std::set<std::string> entities;
  for (const auto& ex : examples) {
    auto& s = sessions[ex.provenance.session_id];
    s.turns = std::max(s.turns, ex.provenance.session_turns);
    for (const auto& img : ex.turn_images) {
      s.turn_images.insert(img.locator);
      turn_images.insert(img.locator);
    }
    for (const auto& img : ex.entity_images) s.entity_images.insert(img.locator);
    entities.insert(ex.entities.begin(), ex.entities.end());
    entities.insert(ex.provenance.entity_images.begin(), ex.provenance.entity_images.end());
  }
  DatasetStats st;
  st.num_sessions = sessions.size();
  st.unique_turn_images = turn_images.size();
  st.unique_entities = entities.size();
  std::size_t turn_total = 0;
  std::size_t ent_total = 0;
  bool first = true;
  for (const auto& [_, s] : sessions) {
    st.num_utterances += s.turns;
    turn_total += s.turn_images.size();
    ent_total += s.entity_images.size();
    const auto e = s.entity_images.size();
    st.max_entity_images_per_session = first ? e : std::max(st.max_entity_images_per_session, e);
    st.min_entity_images_per_session = first ? e : std::min(st.min_entity_images_per_session, e);
    first = false;
  }
  st.avg_turn_images_per_session = static_cast<double>(turn_total) / static_cast<double>(st.num_sessions);
  st.avg_entity_images_per_session = static_cast<double>(ent_total) / static_cast<double>(st.num_sessions);
  return st;
}

std::string format_stats_report(const DatasetStats& s) {
  std::string out;
  char buf[128];
  const auto row = [&](const char* name, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-20s %12s\n", name, value.c_str());
    out += buf;
  };
  const auto fixed2 = [&](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  row("Dialogue Session", std::to_string(s.num_sessions));
  row("Utterance", std::to_string(s.num_utterances));
  row("Turn-level Image", std::to_string(s.unique_turn_images));
  row("Entity (Image)", std::to_string(s.unique_entities));
  row("Avg. Turn Image", fixed2(s.avg_turn_images_per_session));
  row("Avg. Ent. Image", fixed2(s.avg_entity_images_per_session));
  row("Max. Ent. Image", std::to_string(s.max_entity_images_per_session));
  row("Min. Ent. Image", std::to_string(s.min_entity_images_per_session));
  return out;
}

std::string stats_to_json(const DatasetStats& s) {
  const detail::json j = {{"Dialogue Session", s.num_sessions},
                          {"Utterance", s.num_utterances},
                          {"Turn-level Image", s.unique_turn_images},
                          {"Entity (Image)", s.unique_entities},
                          {"Avg. Turn Image", s.avg_turn_images_per_session},
                          {"Avg. Ent. Image", s.avg_entity_images_per_session},
                          {"Max. Ent. Image", s.max_entity_images_per_session},
                          {"Min. Ent. Image", s.min_entity_images_per_session}};
  return j.dump(2);
}

}  // namespace resee::corpus
