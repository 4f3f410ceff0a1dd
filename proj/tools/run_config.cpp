#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "resee/error.hpp"

namespace resee::cli {
namespace {

constexpr std::string_view kModule = "cli";
using ojson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(std::string(kModule), msg); }

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool compatible(const ojson& def, const ojson& v) {
  if (def.is_null() || v.is_null()) return true;
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (def.is_string()) return v.is_string();
  return false;
}

ojson coerce(const ojson& def, ojson v) {
  if (def.is_number_unsigned() && v.is_number()) {
    if (v.get<double>() < 0) fail("negative value for a count");
    return ojson(static_cast<std::uint64_t>(v.get<double>()));
  }
  if (def.is_number_integer() && v.is_number_float()) return ojson(static_cast<std::int64_t>(v.get<double>()));
  return v;
}

ojson parse_value(std::string_view raw) {
  try {
    return ojson::parse(raw);
  } catch (const nlohmann::json::exception&) {
    return ojson(std::string(raw));
  }
}

}  // namespace

ojson RunConfig::defaults() {
  ojson d;
  d["seed"] = 0u;
  d["paths"] = {{"dialogues", ""}, {"captions", ""}, {"ner", ""},   {"lexicon", ""}, {"embeddings", ""},
                {"cache_dir", ""}, {"data", ""},     {"valid", ""}, {"ckpt", ""},    {"input", ""},
                {"hyp", ""},       {"ref", ""},      {"vectors", ""}, {"out", ""}};
  d["data"] = {{"format", "wow"},
               {"max_turns", 2u},
               {"k", 5u},
               {"max_words", 30u},
               {"query_mode", "exchange"},
               {"embed_dim", 64u},
               {"min_freq", 3u},
               {"max_freq", 100u},
               {"fetch_workers", 1u},
               {"rate_limit", 2.0},
               {"mock_feature_dim", 0u},
               {"cap_turn", nullptr},
               {"cap_entity", nullptr},
               {"context_budget", nullptr},
               {"response_budget", nullptr},
               {"images_per_entity", 1u},
               {"turn_images_per_turn", 5u},
               {"include_knowledge", false},
               {"ablation", "full"}};
  d["model"] = {{"variant", "separate"}, {"d_model", 32u},  {"n_layers", 2u},
                {"n_heads", 4u},         {"d_ff", 64u},     {"d_v", nullptr},
                {"segment_embeddings", nullptr}, {"init_std", 0.02}};
  d["train"] = {{"peak_lr", 0.005},    {"warmup_fraction", 0.2}, {"total_steps", 1000u}, {"batch_size", 8u},
                {"beta1", 0.9},        {"beta2", 0.999},         {"epsilon", 1e-8},      {"weight_decay", 0.01},
                {"mask_ratio", 0.7},   {"mask_prob_within", 0.9}, {"exact_count", false}, {"eval_every", 0u},
                {"patience", 3u},      {"min_count", 1u}};
  d["decode"] = {{"strategy", "greedy"}, {"max_len", 35u}, {"top_k", 5u}, {"entity_bias_weight", 0.0}};
  d["eval"] = {{"ppl_mode", "causal"}};
  return d;
}

RunConfig::RunConfig() : tree_(defaults()) {}

void RunConfig::merge(const nlohmann::json& layer, std::string_view origin) {
  if (!layer.is_object()) fail(std::string(origin) + ": configuration must be a JSON object");
  const auto def = defaults();
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const auto& key = it.key();
    if (!def.contains(key)) fail(std::string(origin) + ": unknown configuration key '" + key + "'");
    if (def[key].is_object()) {
      if (!it->is_object()) fail(std::string(origin) + ": '" + key + "' must be an object");
      for (auto f = it->begin(); f != it->end(); ++f) {
        if (!def[key].contains(f.key())) fail(std::string(origin) + ": unknown configuration key '" + key + "." + f.key() + "'");
        const ojson v = *f;
        if (!compatible(def[key][f.key()], v)) fail(std::string(origin) + ": wrong type for '" + key + "." + f.key() + "'");
        tree_[key][f.key()] = coerce(def[key][f.key()], v);
      }
    } else {
      const ojson v = *it;
      if (!compatible(def[key], v)) fail(std::string(origin) + ": wrong type for '" + key + "'");
      tree_[key] = coerce(def[key], v);
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(std::string(kModule), "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": " + e.what());
  }
  merge(j, path.string());
}

void RunConfig::set(std::string_view key, std::string_view value, std::string_view origin) {
  nlohmann::json layer;
  const auto dot = key.find('.');
  if (dot == std::string_view::npos) {
    layer[std::string(key)] = parse_value(value);
  } else {
    layer[std::string(key.substr(0, dot))][std::string(key.substr(dot + 1))] = parse_value(value);
  }
  // Path values are strings even when they look like numbers.
  if (key.starts_with("paths.")) layer["paths"][std::string(key.substr(6))] = std::string(value);
  merge(layer, origin);
}

void RunConfig::apply_env(const std::function<const char*(const char*)>& getenv) {
  const auto def = defaults();
  for (auto it = def.begin(); it != def.end(); ++it) {
    if (it->is_object()) {
      for (auto f = it->begin(); f != it->end(); ++f) {
        const auto name = "RESEE_" + upper(it.key()) + "_" + upper(f.key());
        if (const char* v = getenv(name.c_str())) set(it.key() + "." + f.key(), v, name);
      }
    } else {
      const auto name = "RESEE_" + upper(it.key());
      if (const char* v = getenv(name.c_str())) set(it.key(), v, name);
    }
  }
}

void RunConfig::resolve(std::size_t data_feature_dim) {
  const bool dd = tree_["data"]["format"] == "dd";
  const auto base = dd ? data::BuilderConfig::dd() : data::BuilderConfig::wow();
  auto& data = tree_["data"];
  if (data["cap_turn"].is_null()) data["cap_turn"] = base.cap_turn;
  if (data["cap_entity"].is_null()) data["cap_entity"] = base.cap_entity;
  if (data["context_budget"].is_null()) data["context_budget"] = base.context_token_budget;
  if (data["response_budget"].is_null()) data["response_budget"] = base.response_token_budget;
  auto& m = tree_["model"];
  if (m["d_v"].is_null()) m["d_v"] = data_feature_dim ? data_feature_dim : std::size_t{16};
  if (m["segment_embeddings"].is_null()) m["segment_embeddings"] = m["variant"] == "shared";
  // Validate enumerations early so errors name the configuration.
  (void)format();
  (void)ablation();
  (void)retrieval();
  (void)decode();
  (void)ppl_mode();
  (void)model::parse_model_variant(m["variant"].get<std::string>());
}

const ojson& RunConfig::at(std::string_view section, std::string_view key) const {
  const auto& s = tree_.at(std::string(section));
  const auto& v = s.at(std::string(key));
  if (v.is_null()) fail(std::string(section) + "." + std::string(key) + " is unresolved");
  return v;
}

std::string RunConfig::path(std::string_view field) const { return tree_.at("paths").at(std::string(field)).get<std::string>(); }

std::uint64_t RunConfig::seed() const { return tree_.at("seed").get<std::uint64_t>(); }

corpus::DialogueFormat RunConfig::format() const {
  const auto f = at("data", "format").get<std::string>();
  if (f == "wow") return corpus::DialogueFormat::kWowLike;
  if (f == "dd") return corpus::DialogueFormat::kDdLike;
  fail("data.format must be wow or dd, got '" + f + "'");
}

data::AblationVariant RunConfig::ablation() const { return data::parse_variant(at("data", "ablation").get<std::string>()); }

data::BuilderConfig RunConfig::builder() const {
  data::BuilderConfig b;
  b.cap_turn = at("data", "cap_turn").get<std::size_t>();
  b.cap_entity = at("data", "cap_entity").get<std::size_t>();
  b.context_token_budget = at("data", "context_budget").get<std::size_t>();
  b.response_token_budget = at("data", "response_budget").get<std::size_t>();
  b.images_per_entity = at("data", "images_per_entity").get<std::size_t>();
  b.turn_images_per_turn = at("data", "turn_images_per_turn").get<std::size_t>();
  b.include_knowledge = at("data", "include_knowledge").get<bool>();
  b.validate();
  return b;
}

retrieval::RetrievalConfig RunConfig::retrieval() const {
  retrieval::RetrievalConfig r;
  r.k = at("data", "k").get<std::size_t>();
  r.max_words = at("data", "max_words").get<std::size_t>();
  const auto mode = at("data", "query_mode").get<std::string>();
  if (mode == "exchange") {
    r.query_mode = retrieval::QueryMode::kExchange;
  } else if (mode == "utterance") {
    r.query_mode = retrieval::QueryMode::kUtterance;
  } else {
    fail("data.query_mode must be exchange or utterance, got '" + mode + "'");
  }
  return r;
}

model::ModelConfig RunConfig::model(std::size_t vocab_size) const {
  auto c = model::ModelConfig::for_variant(model::parse_model_variant(at("model", "variant").get<std::string>()), vocab_size);
  c.d_model = at("model", "d_model").get<std::size_t>();
  c.n_layers = at("model", "n_layers").get<std::size_t>();
  c.n_heads = at("model", "n_heads").get<std::size_t>();
  c.d_ff = at("model", "d_ff").get<std::size_t>();
  c.d_v = at("model", "d_v").get<std::size_t>();
  c.segment_embeddings = at("model", "segment_embeddings").get<bool>();
  c.init_std = at("model", "init_std").get<double>();
  c.context_budget = at("data", "context_budget").get<std::size_t>();
  c.response_budget = at("data", "response_budget").get<std::size_t>();
  c.max_positions = c.context_budget + c.response_budget + 2;
  c.validate();
  return c;
}

train::TrainSchedule RunConfig::schedule() const {
  train::TrainSchedule s;
  s.peak_lr = at("train", "peak_lr").get<double>();
  s.warmup_fraction = at("train", "warmup_fraction").get<double>();
  s.total_steps = at("train", "total_steps").get<std::size_t>();
  s.batch_size = at("train", "batch_size").get<std::size_t>();
  s.beta1 = at("train", "beta1").get<double>();
  s.beta2 = at("train", "beta2").get<double>();
  s.epsilon = at("train", "epsilon").get<double>();
  s.weight_decay = at("train", "weight_decay").get<double>();
  s.seed = seed();
  s.validate();
  return s;
}

train::TrainOptions RunConfig::train_options() const {
  train::TrainOptions o;
  o.masking.ratio = at("train", "mask_ratio").get<double>();
  o.masking.mask_prob_within = at("train", "mask_prob_within").get<double>();
  o.masking.exact_count = at("train", "exact_count").get<bool>();
  o.eval_every = at("train", "eval_every").get<std::size_t>();
  o.patience = at("train", "patience").get<std::size_t>();
  return o;
}

train::DecodeConfig RunConfig::decode() const {
  train::DecodeConfig d;
  const auto s = at("decode", "strategy").get<std::string>();
  if (s == "greedy") {
    d.strategy = train::DecodeStrategy::kGreedy;
  } else if (s == "top-k" || s == "topk") {
    d.strategy = train::DecodeStrategy::kTopK;
  } else {
    fail("decode.strategy must be greedy or top-k, got '" + s + "'");
  }
  d.max_len = at("decode", "max_len").get<std::size_t>();
  d.top_k = at("decode", "top_k").get<std::size_t>();
  d.entity_bias_weight = at("decode", "entity_bias_weight").get<double>();
  d.seed = seed();
  return d;
}

eval::PplMode RunConfig::ppl_mode() const { return eval::parse_ppl_mode(at("eval", "ppl_mode").get<std::string>()); }

std::string RunConfig::dump() const { return tree_.dump(2) + "\n"; }

void RunConfig::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(std::string(kModule), "cannot write " + path.string());
  f << dump();
}

}  // namespace resee::cli
