#include "fixtures.hpp"

#include <fstream>
#include <sstream>

#include "resee/entity_pipeline.hpp"
#include "resee/turn_retrieval.hpp"

namespace resee::testing {

std::filesystem::path data_path(std::string_view name) { return std::filesystem::path(RESEE_TEST_DATA_DIR) / name; }

std::filesystem::path scratch_dir(std::string_view name) {
  auto dir = std::filesystem::path(RESEE_TEST_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

corpus::Turn turn(std::size_t index, std::string text) {
  corpus::Turn t;
  t.index = index;
  t.speaker = index % 2 == 0 ? corpus::Speaker::kA : corpus::Speaker::kB;
  t.text = std::move(text);
  return t;
}

ImageRef image(std::string locator, Provider provider) {
  ImageRef r;
  r.locator = std::move(locator);
  r.provider = provider;
  return r;
}

std::vector<data::MultimodalExample> copy_task_examples() {
  const auto sessions = corpus::load_dialogues(data_path("copy_dialogues.jsonl"), corpus::DialogueFormat::kDdLike);
  const auto pool = corpus::load_caption_pool(data_path("captions.jsonl"));

  retrieval::HashProjectionEmbedder embedder(64, 0);
  const auto index = retrieval::build_index(pool, embedder);
  const auto results =
      retrieval::retrieve_sessions(sessions, index, embedder, retrieval::content_word_summary, retrieval::RetrievalConfig{});

  const auto ner = entity::DictionaryNerTagger::load(data_path("ner.txt"));
  const auto nouns = entity::LexiconNounTagger::load(data_path("nouns.txt"));
  auto manifest = entity::build_manifest(sessions, ner, nouns);
  entity::apply_frequency_filter(manifest, 1, 100);
  entity::MockSearchClient mock(5, Provider::kMock, 8);
  entity::SearchClient* clients[] = {&mock};
  entity::fetch_all(manifest.records, clients, 1);

  const auto chunks = corpus::chunk_sessions(sessions, 2);
  return data::build_examples(chunks, results, manifest, pool, data::BuilderConfig::dd());
}

}  // namespace resee::testing
