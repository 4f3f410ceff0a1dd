#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "resee/image_ref.hpp"

namespace resee::entity {

enum class SearchStatus { kOk, kTransient, kPermanent };

struct SearchResponse {
  SearchStatus status = SearchStatus::kOk;
  std::vector<ImageRef> images;
  std::string message;
};

class SearchClient {
 public:
  virtual ~SearchClient() = default;
  virtual Provider provider() const = 0;
  virtual SearchResponse search(std::string_view query, std::size_t n) = 0;
  /// Requests that reached the underlying backend.
  virtual std::size_t backend_requests() const = 0;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
  std::size_t max_attempts = 4;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{5000};
  SleepFn sleep;  // defaults to std::this_thread::sleep_for
};

/// Deterministic offline provider. Unless scripted, a query yields
/// `images_per_query` refs with locators derived from the query text.
class MockSearchClient final : public SearchClient {
 public:
  explicit MockSearchClient(std::size_t images_per_query = 5, Provider provider = Provider::kMock,
                            std::size_t feature_dim = 0);

  /// Responses returned, in order, for a specific query (case-insensitive).
  /// After the script is consumed the last response repeats.
  void script(std::string_view query, std::vector<SearchResponse> responses);
  /// Response returned for any query without a script.
  void set_default(SearchResponse response);

  Provider provider() const override { return provider_; }
  SearchResponse search(std::string_view query, std::size_t n) override;
  std::size_t backend_requests() const override { return requests_; }

 private:
  std::size_t images_per_query_;
  Provider provider_;
  std::size_t feature_dim_;
  std::optional<SearchResponse> default_;
  std::map<std::string, std::vector<SearchResponse>, std::less<>> scripts_;
  std::map<std::string, std::size_t, std::less<>> cursor_;
  std::atomic<std::size_t> requests_{0};
  std::mutex mutex_;
};

enum class HttpApiStyle {
  kPixabay,  // {"hits": [{"webformatURL": ...}]}, key via "key" parameter
  kQwant,    // {"data": {"result": {"items": [{"media": ...}]}}}
};

struct HttpSearchConfig {
  std::string endpoint;  // scheme://host[:port]/path
  std::string api_key;
  HttpApiStyle style = HttpApiStyle::kPixabay;
  Provider provider = Provider::kProvider1;
  std::string license_tag;
  int timeout_seconds = 10;
};

/// Thin client for JSON image-search endpoints. 5xx, 429 and connection
/// failures are transient; other 4xx are permanent.
class HttpSearchClient final : public SearchClient {
 public:
  explicit HttpSearchClient(HttpSearchConfig config);
  Provider provider() const override { return config_.provider; }
  SearchResponse search(std::string_view query, std::size_t n) override;
  std::size_t backend_requests() const override { return requests_; }

 private:
  HttpSearchConfig config_;
  std::atomic<std::size_t> requests_{0};
};

/// Reads provider endpoints and keys from the environment:
/// RESEE_PROVIDER1_ENDPOINT / RESEE_PROVIDER1_KEY (pixabay style) and
/// RESEE_PROVIDER2_ENDPOINT / RESEE_PROVIDER2_KEY (qwant style).
std::vector<HttpSearchConfig> http_configs_from_env();

/// Enforces a minimum interval between backend calls.
class RateLimitedClient final : public SearchClient {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;
  RateLimitedClient(std::unique_ptr<SearchClient> inner, double requests_per_second, Clock clock = {},
                    SleepFn sleep = {});
  Provider provider() const override { return inner_->provider(); }
  SearchResponse search(std::string_view query, std::size_t n) override;
  std::size_t backend_requests() const override { return inner_->backend_requests(); }

 private:
  std::unique_ptr<SearchClient> inner_;
  std::chrono::nanoseconds interval_;
  Clock clock_;
  SleepFn sleep_;
  std::mutex mutex_;
  std::optional<std::chrono::steady_clock::time_point> next_slot_;
};

/// Content-addressed on-disk cache: one JSON record per (provider,
/// normalized query). Only successful responses are cached.
class CachingClient final : public SearchClient {
 public:
  CachingClient(std::unique_ptr<SearchClient> inner, std::filesystem::path cache_dir);
  Provider provider() const override { return inner_->provider(); }
  SearchResponse search(std::string_view query, std::size_t n) override;
  std::size_t backend_requests() const override { return inner_->backend_requests(); }
  std::size_t hits() const { return hits_; }

  std::filesystem::path entry_path(std::string_view query) const;

 private:
  std::unique_ptr<SearchClient> inner_;
  std::filesystem::path dir_;
  std::atomic<std::size_t> hits_{0};
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
};

}  // namespace resee::entity
