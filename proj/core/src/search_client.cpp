#include "resee/search_client.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "image_json.hpp"
#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/rng.hpp"
#include "resee/text.hpp"

namespace resee::entity {
namespace {

constexpr std::string_view kModule = "entity_pipeline";
using detail::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string normalized_query(std::string_view q) { return text::to_lower(text::trim(q)); }

std::string slug(std::string_view q) {
  std::string out;
  for (char c : normalized_query(q)) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += c;
    else if (!out.empty() && out.back() != '-') out += '-';
  }
  return out.empty() ? "q" : out;
}

}  // namespace

MockSearchClient::MockSearchClient(std::size_t images_per_query, Provider provider, std::size_t feature_dim)
    : images_per_query_(images_per_query), provider_(provider), feature_dim_(feature_dim) {}

void MockSearchClient::script(std::string_view query, std::vector<SearchResponse> responses) {
  std::lock_guard lock(mutex_);
  scripts_[normalized_query(query)] = std::move(responses);
}

void MockSearchClient::set_default(SearchResponse response) {
  std::lock_guard lock(mutex_);
  default_ = std::move(response);
}

SearchResponse MockSearchClient::search(std::string_view query, std::size_t n) {
  ++requests_;
  SearchResponse resp;
  {
    std::lock_guard lock(mutex_);
    const auto key = normalized_query(query);
    if (auto it = scripts_.find(key); it != scripts_.end() && !it->second.empty()) {
      auto& cur = cursor_[key];
      resp = it->second[std::min(cur, it->second.size() - 1)];
      ++cur;
    } else if (default_) {
      resp = *default_;
    } else {
      const auto name = std::string(to_string(provider_));
      for (std::size_t i = 0; i < images_per_query_; ++i) {
        ImageRef ref;
        ref.locator = "mock://" + name + "/" + slug(query) + "/" + std::to_string(i);
        ref.provider = provider_;
        ref.license_tag = "mock-cc0";
        if (feature_dim_ > 0) {
          Rng rng(mix64(fnv1a64(ref.locator)));
          ref.feature.emplace(feature_dim_);
          for (auto& x : *ref.feature) x = rng.normal();
        }
        resp.images.push_back(std::move(ref));
      }
    }
  }
  if (resp.images.size() > n) resp.images.resize(n);
  return resp;
}

HttpSearchClient::HttpSearchClient(HttpSearchConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError(std::string(kModule), "empty provider endpoint");
}

SearchResponse HttpSearchClient::search(std::string_view query, std::size_t n) {
  ++requests_;
  const auto scheme_end = config_.endpoint.find("://");
  const auto path_start =
      config_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string base = config_.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);

  httplib::Params params;
  params.emplace("q", std::string(query));
  if (config_.style == HttpApiStyle::kPixabay) {
    params.emplace("key", config_.api_key);
    params.emplace("per_page", std::to_string(std::max<std::size_t>(n, 3)));
    params.emplace("image_type", "photo");
  } else {
    params.emplace("count", std::to_string(n));
    params.emplace("t", "images");
    if (!config_.api_key.empty()) params.emplace("key", config_.api_key);
  }

  auto res = client.Get(path, params, httplib::Headers{});
  if (!res) {
    return {SearchStatus::kTransient, {}, "connection failed: " + httplib::to_string(res.error())};
  }
  if (res->status == 429 || res->status >= 500) {
    return {SearchStatus::kTransient, {}, "http status " + std::to_string(res->status)};
  }
  if (res->status >= 400) return {SearchStatus::kPermanent, {}, "http status " + std::to_string(res->status)};

  SearchResponse out;
  try {
    const auto body = json::parse(res->body);
    const json* items = nullptr;
    const char* field = nullptr;
    if (config_.style == HttpApiStyle::kPixabay) {
      items = body.contains("hits") ? &body.at("hits") : nullptr;
      field = "webformatURL";
    } else if (body.contains("data") && body["data"].contains("result")) {
      items = &body["data"]["result"]["items"];
      field = "media";
    }
    if (items && items->is_array()) {
      for (const auto& item : *items) {
        if (!item.contains(field) || !item.at(field).is_string()) continue;
        ImageRef ref;
        ref.locator = item.at(field).get<std::string>();
        ref.provider = config_.provider;
        ref.license_tag = config_.license_tag;
        if (item.contains("license") && item.at("license").is_string()) ref.license_tag = item.at("license");
        out.images.push_back(std::move(ref));
        if (out.images.size() == n) break;
      }
    }
  } catch (const json::exception& e) {
    return {SearchStatus::kPermanent, {}, std::string("malformed response: ") + e.what()};
  }
  return out;
}

std::vector<HttpSearchConfig> http_configs_from_env() {
  std::vector<HttpSearchConfig> out;
  const auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  if (auto ep = env("RESEE_PROVIDER1_ENDPOINT"); !ep.empty()) {
    out.push_back({ep, env("RESEE_PROVIDER1_KEY"), HttpApiStyle::kPixabay, Provider::kProvider1, "royalty-free", 10});
  }
  if (auto ep = env("RESEE_PROVIDER2_ENDPOINT"); !ep.empty()) {
    out.push_back({ep, env("RESEE_PROVIDER2_KEY"), HttpApiStyle::kQwant, Provider::kProvider2, "see-source", 10});
  }
  return out;
}

RateLimitedClient::RateLimitedClient(std::unique_ptr<SearchClient> inner, double requests_per_second, Clock clock,
                                     SleepFn sleep)
    : inner_(std::move(inner)), clock_(std::move(clock)), sleep_(std::move(sleep)) {
  if (!(requests_per_second > 0.0)) throw ConfigError(std::string(kModule), "rate limit must be positive");
  interval_ = std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / requests_per_second));
  if (!clock_) clock_ = [] { return std::chrono::steady_clock::now(); };
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

SearchResponse RateLimitedClient::search(std::string_view query, std::size_t n) {
  {
    std::lock_guard lock(mutex_);
    const auto now = clock_();
    if (next_slot_ && *next_slot_ > now) {
      const auto wait = std::chrono::ceil<std::chrono::milliseconds>(*next_slot_ - now);
      sleep_(wait);
      next_slot_ = *next_slot_ + interval_;
    } else {
      next_slot_ = now + interval_;
    }
  }
  return inner_->search(query, n);
}

CachingClient::CachingClient(std::unique_ptr<SearchClient> inner, std::filesystem::path cache_dir)
    : inner_(std::move(inner)), dir_(std::move(cache_dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path CachingClient::entry_path(std::string_view query) const {
  const auto key = std::string(to_string(inner_->provider())) + "\n" + normalized_query(query);
  return dir_ / (hex64(fnv1a64(key)) + ".json");
}

SearchResponse CachingClient::search(std::string_view query, std::size_t n) {
  const auto path = entry_path(query);
  std::shared_ptr<std::mutex> key_lock;
  {
    std::lock_guard lock(mutex_);
    auto& slot = key_locks_[path.string()];
    if (!slot) slot = std::make_shared<std::mutex>();
    key_lock = slot;
  }
  std::lock_guard guard(*key_lock);

  if (std::filesystem::exists(path)) {
    try {
      const auto j = json::parse(detail::read_file(path, kModule));
      const auto requested = j.at("requested_n").get<std::size_t>();
      const auto& imgs = j.at("images");
      if (j.at("query").get<std::string>() == normalized_query(query) && (requested >= n || imgs.size() < requested)) {
        SearchResponse resp;
        for (const auto& ij : imgs) resp.images.push_back(detail::image_from_json(ij, kModule, path.string()));
        if (resp.images.size() > n) resp.images.resize(n);
        ++hits_;
        return resp;
      }
    } catch (const std::exception& e) {
      log::warn(kModule, "ignoring unreadable cache entry " + path.string() + ": " + e.what());
    }
  }

  auto resp = inner_->search(query, n);
  if (resp.status == SearchStatus::kOk) {
    json images = json::array();
    for (const auto& ref : resp.images) images.push_back(detail::image_to_json(ref));
    const json record = {{"provider", std::string(to_string(inner_->provider()))},
                         {"query", normalized_query(query)},
                         {"requested_n", n},
                         {"images", std::move(images)}};
    auto tmp = path;
    tmp += ".tmp";
    detail::write_file(tmp, record.dump(), kModule);
    std::filesystem::rename(tmp, path);
  }
  return resp;
}

}  // namespace resee::entity
