#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "resee/corpus.hpp"
#include "resee/dataset_builder.hpp"
#include "resee/entity_pipeline.hpp"
#include "resee/error.hpp"
#include "resee/eval_metrics.hpp"
#include "resee/generate.hpp"
#include "resee/log.hpp"
#include "resee/model/checkpoint.hpp"
#include "resee/search_client.hpp"
#include "resee/stats.hpp"
#include "resee/text.hpp"
#include "resee/train.hpp"
#include "resee/turn_retrieval.hpp"
#include "run_config.hpp"

namespace resee::cli {
namespace {

constexpr std::string_view kModule = "cli";
namespace fs = std::filesystem;

std::atomic<bool> g_stop{false};
extern "C" void on_sigint(int) { g_stop.store(true); }

struct Context {
  RunConfig cfg;
  std::istream& in;
  std::ostream& out;
  bool stats_json = false;
};

std::string require_path(const RunConfig& cfg, std::string_view field, std::string_view flag) {
  auto p = cfg.path(field);
  if (p.empty()) throw ConfigError(std::string(kModule), std::string(flag) + " is required");
  return p;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = require_path(cfg, "out", "--out");
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(std::string(kModule), "cannot write " + path.string());
  f << content;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(std::string(kModule), "cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::unique_ptr<retrieval::TextEmbedder> make_embedder(const RunConfig& cfg) {
  if (const auto p = cfg.path("embeddings"); !p.empty()) {
    return std::make_unique<retrieval::PrecomputedEmbedder>(retrieval::PrecomputedEmbedder::load(p));
  }
  const auto dim = cfg.tree()["data"]["embed_dim"].get<std::size_t>();
  return std::make_unique<retrieval::HashProjectionEmbedder>(dim, cfg.seed());
}

std::vector<retrieval::TurnRetrievalResult> run_retrieval(const RunConfig& cfg,
                                                          std::span<const corpus::DialogueSession> sessions,
                                                          std::span<const corpus::CaptionedImage> pool) {
  const auto embedder = make_embedder(cfg);
  const auto index = retrieval::build_index(pool, *embedder);
  return retrieval::retrieve_sessions(sessions, index, *embedder, retrieval::content_word_summary, cfg.retrieval());
}

std::vector<std::unique_ptr<entity::SearchClient>> make_clients(const RunConfig& cfg) {
  const auto& data = cfg.tree()["data"];
  const auto cache = cfg.path("cache_dir");
  std::vector<std::unique_ptr<entity::SearchClient>> clients;
  auto wrap = [&](std::unique_ptr<entity::SearchClient> c) {
    if (!cache.empty()) c = std::make_unique<entity::CachingClient>(std::move(c), cache);
    clients.push_back(std::move(c));
  };
  for (auto& h : entity::http_configs_from_env()) {
    log::info(kModule, "image search via " + std::string(to_string(h.provider)) + " at " + h.endpoint);
    wrap(std::make_unique<entity::RateLimitedClient>(std::make_unique<entity::HttpSearchClient>(h),
                                                     data["rate_limit"].get<double>()));
  }
  if (clients.empty()) {
    log::info(kModule, "no provider credentials in the environment; using the mock image provider");
    wrap(std::make_unique<entity::MockSearchClient>(5, Provider::kMock, data["mock_feature_dim"].get<std::size_t>()));
  }
  return clients;
}

entity::EntityManifest run_entities(const RunConfig& cfg, std::span<const corpus::DialogueSession> sessions,
                                    entity::FetchReport* report) {
  std::vector<std::string> none;
  const auto ner_path = cfg.path("ner");
  const auto lex_path = cfg.path("lexicon");
  const auto ner = ner_path.empty() ? entity::DictionaryNerTagger(none) : entity::DictionaryNerTagger::load(ner_path);
  const auto nouns = lex_path.empty() ? entity::LexiconNounTagger(none) : entity::LexiconNounTagger::load(lex_path);
  auto manifest = entity::build_manifest(sessions, ner, nouns);
  const auto& data = cfg.tree()["data"];
  entity::apply_frequency_filter(manifest, data["min_freq"].get<std::size_t>(), data["max_freq"].get<std::size_t>());

  auto owned = make_clients(cfg);
  std::vector<entity::SearchClient*> clients;
  for (auto& c : owned) clients.push_back(c.get());
  *report = entity::fetch_all(manifest.records, clients, data["images_per_entity"].get<std::size_t>(), {},
                              data["fetch_workers"].get<std::size_t>());
  log::info(kModule, "entities: " + std::to_string(report->entities) + ", with images: " +
                         std::to_string(report->with_images) + ", failed: " + std::to_string(report->failed));
  return manifest;
}

std::string fetch_report_json(const entity::FetchReport& r) {
  nlohmann::ordered_json j;
  j["entities"] = r.entities;
  j["with_images"] = r.with_images;
  j["failed"] = r.failed;
  j["failure_rate"] = r.failure_rate();
  return j.dump(2) + "\n";
}

std::string distribution_text(const std::map<corpus::SourceTag, double>& dist) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& [tag, pct] : dist) os << to_string(tag) << ' ' << pct << "%\n";
  return os.str();
}

std::string distribution_json(const std::map<corpus::SourceTag, double>& dist) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [tag, pct] : dist) j[std::string(to_string(tag))] = pct;
  return j.dump(2) + "\n";
}

int cmd_build_data(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto sessions = corpus::load_dialogues(require_path(cfg, "dialogues", "--dialogues"), cfg.format());
  const auto pool = corpus::load_caption_pool(require_path(cfg, "captions", "--captions"));
  const auto dir = out_dir(cfg);

  const auto results = run_retrieval(cfg, sessions, pool);
  entity::FetchReport report;
  const auto manifest = run_entities(cfg, sessions, &report);
  const auto chunks = corpus::chunk_sessions(sessions, cfg.tree()["data"]["max_turns"].get<std::size_t>());
  data::BuildWarnings warnings;
  const auto examples = data::build_examples(chunks, results, manifest, pool, cfg.builder(), &warnings);
  const auto view = data::ablation_view(examples, cfg.ablation());

  data::save_examples(dir / "dataset.jsonl", view);
  retrieval::save_retrieval_results(dir / "retrieval.jsonl", results);
  entity::save_manifest(dir / "manifest.jsonl", manifest.records);
  nlohmann::ordered_json j;
  j["examples"] = view.size();
  j["sessions"] = sessions.size();
  j["turns_without_retrieval"] = warnings.turns_without_retrieval;
  j["entities_without_images"] = warnings.entities_without_images;
  j["fetch"] = nlohmann::ordered_json::parse(fetch_report_json(report));
  j["source_distribution"] = nlohmann::ordered_json::parse(distribution_json(retrieval::source_distribution(results, pool)));
  write_text(dir / "build_report.json", j.dump(2) + "\n");
  cfg.write(dir / "run_config.json");
  ctx.out << "wrote " << view.size() << " examples to " << (dir / "dataset.jsonl").string() << "\n";
  return 0;
}

int cmd_stats(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto examples = data::load_examples(require_path(cfg, "data", "--data"));
  const auto stats = corpus::compute_stats(examples);
  ctx.out << (ctx.stats_json ? corpus::stats_to_json(stats) : corpus::format_stats_report(stats));
  if (!cfg.path("out").empty()) {
    const auto dir = out_dir(cfg);
    write_text(dir / "stats.json", corpus::stats_to_json(stats));
    cfg.write(dir / "run_config.json");
  }
  return 0;
}

int cmd_retrieve(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto sessions = corpus::load_dialogues(require_path(cfg, "dialogues", "--dialogues"), cfg.format());
  const auto pool = corpus::load_caption_pool(require_path(cfg, "captions", "--captions"));
  const auto dir = out_dir(cfg);
  const auto results = run_retrieval(cfg, sessions, pool);
  const auto dist = retrieval::source_distribution(results, pool);
  retrieval::save_retrieval_results(dir / "retrieval.jsonl", results);
  write_text(dir / "source_distribution.json", distribution_json(dist));
  cfg.write(dir / "run_config.json");
  ctx.out << distribution_text(dist);
  return 0;
}

int cmd_fetch_images(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto sessions = corpus::load_dialogues(require_path(cfg, "dialogues", "--dialogues"), cfg.format());
  const auto dir = out_dir(cfg);
  entity::FetchReport report;
  const auto manifest = run_entities(cfg, sessions, &report);
  entity::save_manifest(dir / "manifest.jsonl", manifest.records);
  write_text(dir / "fetch_report.json", fetch_report_json(report));
  cfg.write(dir / "run_config.json");
  ctx.out << "entities " << report.entities << ", with images " << report.with_images << ", failed " << report.failed
          << "\n";
  return 0;
}

std::size_t feature_dim(std::span<const data::MultimodalExample> examples) {
  for (const auto& ex : examples) {
    for (const auto* images : {&ex.turn_images, &ex.entity_images}) {
      for (const auto& img : *images) {
        if (img.feature) return img.feature->size();
      }
    }
  }
  return 0;
}

int cmd_train(Context& ctx) {
  auto& cfg = ctx.cfg;
  const auto train_set = data::load_examples(require_path(cfg, "data", "--data"));
  std::vector<data::MultimodalExample> valid;
  if (const auto v = cfg.path("valid"); !v.empty()) valid = data::load_examples(v);
  cfg.resolve(feature_dim(train_set));
  const auto dir = out_dir(cfg);

  const auto vocab = model::Vocabulary::build(train_set, cfg.tree()["train"]["min_count"].get<std::size_t>());
  const auto mcfg = cfg.model(vocab.size());
  model::Model m(mcfg, cfg.seed());
  auto options = cfg.train_options();
  g_stop.store(false);
  options.stop = &g_stop;
  const auto previous = std::signal(SIGINT, on_sigint);
  train::TrainResult result;
  try {
    result = train::train(m, train_set, valid, vocab, cfg.schedule(), options);
  } catch (...) {
    std::signal(SIGINT, previous);
    throw;
  }
  std::signal(SIGINT, previous);

  model::save_checkpoint(dir / "model.ckpt", {mcfg, vocab, m.parameters()});
  train::write_curve_csv(dir / "loss_curve.csv", result.curve);
  nlohmann::ordered_json j;
  j["steps_run"] = result.steps_run;
  j["early_stopped"] = result.early_stopped;
  j["interrupted"] = result.interrupted;
  j["final_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
  j["validation"] = result.validation;
  j["train_examples"] = train_set.size();
  j["vocab_size"] = vocab.size();
  j["parameters"] = m.parameters().scalar_count();
  write_text(dir / "train_report.json", j.dump(2) + "\n");
  cfg.write(dir / "run_config.json");
  ctx.out << "trained " << result.steps_run << " steps; checkpoint " << (dir / "model.ckpt").string() << "\n";
  if (result.interrupted) {
    log::warn(kModule, "training interrupted; checkpoint holds the parameters at the last completed step");
    return 130;
  }
  return 0;
}

struct LoadedModel {
  model::Checkpoint ckpt;
  model::Model model;
};

LoadedModel load_model(const RunConfig& cfg) {
  auto ckpt = model::load_checkpoint(require_path(cfg, "ckpt", "--ckpt"));
  model::Model m(ckpt.config, ckpt.parameters);
  return {std::move(ckpt), std::move(m)};
}

std::vector<std::string> generate_all(const LoadedModel& lm, std::span<const data::MultimodalExample> examples,
                                      const train::DecodeConfig& dc) {
  std::vector<std::string> out;
  for (const auto& ex : examples) out.push_back(train::generate_response(lm.model, ex, lm.ckpt.vocabulary, dc));
  return out;
}

std::string join_lines(std::span<const std::string> lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

int cmd_generate(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto lm = load_model(cfg);
  const auto examples = data::load_examples(require_path(cfg, "input", "--input"));
  const auto dir = out_dir(cfg);
  const auto hyps = generate_all(lm, examples, cfg.decode());
  write_text(dir / "hypotheses.txt", join_lines(hyps));
  cfg.write(dir / "run_config.json");
  ctx.out << "wrote " << hyps.size() << " responses to " << (dir / "hypotheses.txt").string() << "\n";
  return 0;
}

int cmd_evaluate(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  std::vector<data::MultimodalExample> examples;
  if (const auto d = cfg.path("data"); !d.empty()) examples = data::load_examples(d);
  std::optional<LoadedModel> lm;
  if (!cfg.path("ckpt").empty()) lm = load_model(cfg);

  std::vector<std::string> refs;
  if (const auto r = cfg.path("ref"); !r.empty()) {
    if (fs::path(r).extension() == ".jsonl") {
      for (const auto& ex : data::load_examples(r)) refs.push_back(ex.response.text);
    } else {
      refs = read_lines(r);
    }
  } else if (!examples.empty()) {
    for (const auto& ex : examples) refs.push_back(ex.response.text);
  } else {
    throw ConfigError(std::string(kModule), "--ref or --data is required");
  }

  std::vector<std::string> hyps;
  if (const auto h = cfg.path("hyp"); !h.empty()) {
    hyps = read_lines(h);
  } else if (lm && !examples.empty()) {
    hyps = generate_all(*lm, examples, cfg.decode());
  } else {
    throw ConfigError(std::string(kModule), "--hyp, or --ckpt with --data, is required");
  }

  std::optional<double> ppl;
  if (lm && !examples.empty()) ppl = eval::perplexity(lm->model, examples, lm->ckpt.vocabulary, cfg.ppl_mode());
  std::optional<eval::WordVectors> vectors;
  if (const auto v = cfg.path("vectors"); !v.empty()) vectors = eval::WordVectors::load(v);

  const auto pairs = eval::make_pairs(hyps, refs);
  const auto report = eval::evaluate_pairs(pairs, vectors ? &*vectors : nullptr, ppl);
  ctx.out << report.to_table() << report.to_json();
  if (!cfg.path("out").empty()) {
    const auto dir = out_dir(cfg);
    write_text(dir / "metrics.json", report.to_json());
    write_text(dir / "metrics_table.txt", report.to_table());
    if (cfg.path("hyp").empty()) write_text(dir / "hypotheses.txt", join_lines(hyps));
    cfg.write(dir / "run_config.json");
  }
  return 0;
}

int cmd_chat(Context& ctx) {
  auto& cfg = ctx.cfg;
  cfg.resolve();
  const auto lm = load_model(cfg);
  const auto dc = cfg.decode();
  std::vector<corpus::Turn> history;
  std::string line;
  while (std::getline(ctx.in, line)) {
    auto utterance = text::trim(line);
    if (utterance.empty()) continue;
    history.push_back({corpus::Speaker::kA, utterance, history.size(), "user"});
    data::MultimodalExample ex;
    ex.id = "chat";
    ex.context = history;
    ex.response.index = history.size();
    const auto reply = train::generate_response(lm.model, ex, lm.ckpt.vocabulary, dc);
    ctx.out << reply << "\n" << std::flush;
    history.push_back({corpus::Speaker::kB, reply, history.size(), "model"});
  }
  return 0;
}

log::Level parse_level(const std::string& s) {
  if (s == "debug") return log::Level::kDebug;
  if (s == "info") return log::Level::kInfo;
  if (s == "warn") return log::Level::kWarn;
  if (s == "error") return log::Level::kError;
  throw ConfigError(std::string(kModule), "unknown log level '" + s + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal dialogue toolkit: dataset construction, training, generation and evaluation", "resee"};
  app.require_subcommand(1);

  std::string config_file, decode_file, log_level = "info";
  std::vector<std::string> sets;
  std::map<std::string, std::string> paths;
  std::map<std::string, std::string> values;
  bool stats_json = false;

  struct Spec {
    const char* name;
    const char* help;
    std::vector<std::pair<const char*, const char*>> paths;  // flag, field
    std::vector<std::pair<const char*, const char*>> values;  // flag, dotted key
  };
  const std::vector<Spec> specs = {
      {"build-data",
       "Build the multimodal dataset from dialogues and a caption pool",
       {{"--dialogues", "dialogues"}, {"--captions", "captions"}, {"--ner", "ner"}, {"--lexicon", "lexicon"},
        {"--embeddings", "embeddings"}, {"--cache-dir", "cache_dir"}, {"--out", "out"}},
       {{"--format", "data.format"}, {"--ablation", "data.ablation"}}},
      {"stats", "Print dataset statistics", {{"--data", "data"}, {"--out", "out"}}, {}},
      {"retrieve",
       "Retrieve turn-level images for every dialogue turn",
       {{"--dialogues", "dialogues"}, {"--captions", "captions"}, {"--embeddings", "embeddings"}, {"--out", "out"}},
       {{"--format", "data.format"}, {"--k", "data.k"}}},
      {"fetch-images",
       "Extract entities and fetch entity-level images",
       {{"--dialogues", "dialogues"}, {"--ner", "ner"}, {"--lexicon", "lexicon"}, {"--cache-dir", "cache_dir"},
        {"--out", "out"}},
       {{"--format", "data.format"}}},
      {"train",
       "Train a model on a dataset file",
       {{"--data", "data"}, {"--valid", "valid"}, {"--out", "out"}},
       {{"--variant", "model.variant"}, {"--steps", "train.total_steps"}}},
      {"generate", "Generate responses for a dataset file", {{"--ckpt", "ckpt"}, {"--input", "input"}, {"--out", "out"}}, {}},
      {"evaluate",
       "Score responses against references",
       {{"--hyp", "hyp"}, {"--ref", "ref"}, {"--vectors", "vectors"}, {"--ckpt", "ckpt"}, {"--data", "data"},
        {"--out", "out"}},
       {{"--ppl-mode", "eval.ppl_mode"}}},
      {"chat", "Chat with a trained model on the terminal", {{"--ckpt", "ckpt"}}, {}},
  };
  for (const auto& spec : specs) {
    auto* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "Override a configuration value, section.key=value")->take_all();
    sub->add_option("--seed", values["seed"], "Random seed");
    sub->add_option("--log-level", log_level, "debug, info, warn or error");
    for (const auto& [flag, field] : spec.paths) sub->add_option(flag, paths[field], std::string("Path for ") + field);
    for (const auto& [flag, key] : spec.values) sub->add_option(flag, values[key], std::string("Sets ") + key);
    if (std::string_view(spec.name) == "generate") {
      sub->add_option("--decode-config", decode_file, "JSON file with decode settings")->check(CLI::ExistingFile);
    }
    if (std::string_view(spec.name) == "stats") sub->add_flag("--json", stats_json, "Print JSON instead of a table");
  }

  std::vector<const char*> argv{"resee"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  const auto* sub = app.get_subcommands().front();
  try {
    log::set_level(parse_level(log_level));
    Context ctx{RunConfig{}, in, out, stats_json};
    auto& cfg = ctx.cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    if (!decode_file.empty()) {
      std::ifstream f(decode_file);
      nlohmann::json layer;
      try {
        layer["decode"] = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(kModule), decode_file + ": " + e.what());
      }
      cfg.merge(layer, decode_file);
    }
    cfg.apply_env([](const char* name) { return std::getenv(name); });
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(std::string(kModule), "--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, v] : values) {
      if (!v.empty()) cfg.set(key, v);
    }
    for (const auto& [field, v] : paths) {
      if (!v.empty()) cfg.set("paths." + field, v);
    }

    const std::string name = sub->get_name();
    if (name == "build-data") return cmd_build_data(ctx);
    if (name == "stats") return cmd_stats(ctx);
    if (name == "retrieve") return cmd_retrieve(ctx);
    if (name == "fetch-images") return cmd_fetch_images(ctx);
    if (name == "train") return cmd_train(ctx);
    if (name == "generate") return cmd_generate(ctx);
    if (name == "evaluate") return cmd_evaluate(ctx);
    if (name == "chat") return cmd_chat(ctx);
    err << "error: cli: unknown subcommand " << name << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << kModule << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace resee::cli
