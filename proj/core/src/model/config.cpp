#include "resee/model/config.hpp"

#include <nlohmann/json.hpp>

#include "resee/error.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";

void fail(const std::string& msg) { throw ConfigError(std::string(kModule), msg); }

}  // namespace

std::string_view to_string(Variant v) { return v == Variant::kShared ? "shared" : "separate"; }

Variant parse_model_variant(std::string_view s) {
  if (s == "shared") return Variant::kShared;
  if (s == "separate") return Variant::kSeparate;
  fail("unknown model variant '" + std::string(s) + "' (expected shared or separate)");
  return Variant::kShared;
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (d_ff == 0 || d_v == 0) fail("d_ff and d_v must be positive");
  if (n_segments != kNumSegments) fail("n_segments must be 5");
  if (context_budget < 2 || response_budget == 0) fail("token budgets too small");
  if (max_positions < context_budget + response_budget + 2) {
    fail("max_positions must cover context_budget + response_budget + 2");
  }
  const int ids[] = {special.pad, special.unk, special.bos, special.eos, special.sep, special.mask};
  for (std::size_t i = 0; i < std::size(ids); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) fail("special token id outside the vocabulary");
    for (std::size_t j = 0; j < i; ++j) {
      if (ids[i] == ids[j]) fail("special token ids must be distinct");
    }
  }
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

ModelConfig ModelConfig::for_variant(Variant v, std::size_t vocab_size) {
  ModelConfig c;
  c.variant = v;
  c.vocab_size = vocab_size;
  c.segment_embeddings = v == Variant::kShared;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["vocab_size"] = vocab_size;
  j["max_positions"] = max_positions;
  j["d_v"] = d_v;
  j["n_segments"] = n_segments;
  j["variant"] = to_string(variant);
  j["segment_embeddings"] = segment_embeddings;
  j["special"] = {{"pad", special.pad}, {"unk", special.unk}, {"bos", special.bos},
                  {"eos", special.eos}, {"sep", special.sep}, {"mask", special.mask}};
  j["init_std"] = init_std;
  j["context_budget"] = context_budget;
  j["response_budget"] = response_budget;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(kModule), std::string("model config: ") + e.what());
  }
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.d_v = j.at("d_v").get<std::size_t>();
    c.n_segments = j.at("n_segments").get<std::size_t>();
    c.variant = parse_model_variant(j.at("variant").get<std::string>());
    c.segment_embeddings = j.at("segment_embeddings").get<bool>();
    const auto& s = j.at("special");
    c.special = {s.at("pad").get<int>(), s.at("unk").get<int>(), s.at("bos").get<int>(),
                 s.at("eos").get<int>(), s.at("sep").get<int>(), s.at("mask").get<int>()};
    c.init_std = j.at("init_std").get<double>();
    c.context_budget = j.at("context_budget").get<std::size_t>();
    c.response_budget = j.at("response_budget").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(kModule), std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace resee::model
