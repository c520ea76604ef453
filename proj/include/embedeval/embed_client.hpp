#pragma once

// Client for the common embeddings wire shape:
//   POST {base_url}/embeddings  {"model": ..., "input": [texts]}
//   -> {"data": [{"index": i, "embedding": [...]}, ...]}

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "core.hpp"

namespace embedeval {

inline constexpr const char* kApiKeyEnv = "EMBEDEVAL_API_KEY";

struct RetryPolicy {
  int max_attempts = 4;
  int initial_backoff_ms = 500;
  double multiplier = 2.0;
};

struct EmbedEndpointConfig {
  std::string base_url;
  std::string model_name;
  std::string api_key;  // never taken from the command line; see api_key_from_env()
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  int timeout_seconds = 60;
  std::function<void(const std::string&)> log;  // optional
};

inline std::string api_key_from_env() {
  const char* v = std::getenv(kApiKeyEnv);
  return v ? std::string(v) : std::string();
}

struct EmbedStats {
  std::size_t total_requests = 0;
  std::vector<int> attempts_per_batch;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

inline ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("base url '" + url + "' lacks a scheme (http:// or https://)");
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  out.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

inline bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

struct BatchResult {
  std::vector<std::vector<float>> rows;
  int attempts = 0;
};

inline std::vector<std::vector<float>> parse_embedding_response(const std::string& body, std::size_t expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw RemoteError(std::string("embeddings response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("data") || !j["data"].is_array())
    throw RemoteError("embeddings response lacks a 'data' array");
  std::vector<std::vector<float>> rows(expected);
  std::vector<bool> seen(expected, false);
  for (const auto& item : j["data"]) {
    if (!item.is_object() || !item.contains("index") || !item["index"].is_number_integer() ||
        !item.contains("embedding") || !item["embedding"].is_array())
      throw RemoteError("embeddings response item lacks index/embedding");
    const auto idx = item["index"].get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= expected || seen[static_cast<std::size_t>(idx)])
      throw RemoteError("embeddings response has out-of-range or duplicate index " + std::to_string(idx));
    seen[static_cast<std::size_t>(idx)] = true;
    auto& row = rows[static_cast<std::size_t>(idx)];
    for (const auto& x : item["embedding"]) {
      if (!x.is_number()) throw RemoteError("embeddings response has a non-numeric entry");
      row.push_back(static_cast<float>(x.get<double>()));
    }
  }
  for (std::size_t i = 0; i < expected; ++i)
    if (!seen[i]) throw RemoteError("embeddings response is missing index " + std::to_string(i));
  return rows;
}

inline BatchResult fetch_batch(const EmbedEndpointConfig& config, const ParsedUrl& url,
                               std::span<const std::string> texts, std::atomic<std::size_t>& requests) {
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(config.timeout_seconds, 0);
  client.set_read_timeout(config.timeout_seconds, 0);
  client.set_write_timeout(config.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);

  nlohmann::json body{{"model", config.model_name}, {"input", nlohmann::json::array()}};
  for (const auto& t : texts) body["input"].push_back(t);
  const std::string payload = body.dump();
  const std::string path = url.path_prefix + "/embeddings";

  std::string last_error;
  for (int attempt = 1; attempt <= config.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      const double wait = config.retry.initial_backoff_ms * std::pow(config.retry.multiplier, attempt - 2);
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(wait)));
    }
    ++requests;
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      if (config.log) config.log("embeddings batch succeeded after " + std::to_string(attempt) + " attempt(s)");
      return {parse_embedding_response(res->body, texts.size()), attempt};
    } else if (!transient_status(res->status)) {
      throw RemoteError("embeddings endpoint returned HTTP " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
    } else {
      last_error = "HTTP " + std::to_string(res->status);
    }
    if (config.log)
      config.log("embeddings attempt " + std::to_string(attempt) + "/" + std::to_string(config.retry.max_attempts) +
                 " failed: " + last_error);
  }
  throw RemoteError("embeddings endpoint failed after " + std::to_string(config.retry.max_attempts) +
                    " attempt(s): " + last_error);
}

}  // namespace detail

/// Embeds `texts` in batches with up to max_in_flight concurrent requests.
/// Row i of the result is text i with id ids[i]; the result is not
/// normalized.
inline EmbeddingMatrix embed_records(const EmbedEndpointConfig& config, const std::vector<std::string>& ids,
                                     const std::vector<std::string>& texts, EmbedStats* stats = nullptr) {
  if (texts.empty()) throw UsageError("nothing to embed");
  if (ids.size() != texts.size()) throw UsageError("embed: ids and texts differ in length");
  if (config.batch_size == 0) throw UsageError("batch size must be >= 1");
  if (config.max_in_flight == 0) throw UsageError("max in-flight requests must be >= 1");
  if (config.retry.max_attempts < 1) throw UsageError("retry max attempts must be >= 1");
  const auto url = detail::parse_base_url(config.base_url);

  const std::size_t n_batches = (texts.size() + config.batch_size - 1) / config.batch_size;
  std::vector<std::optional<detail::BatchResult>> results(n_batches);
  std::vector<std::exception_ptr> errors(n_batches);
  std::atomic<std::size_t> next{0}, requests{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_batches || failed.load()) return;
      const std::size_t begin = b * config.batch_size;
      const std::size_t count = std::min(config.batch_size, texts.size() - begin);
      try {
        results[b] = detail::fetch_batch(config, url, std::span(texts).subspan(begin, count), requests);
      } catch (...) {
        errors[b] = std::current_exception();
        failed.store(true);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t workers = std::min(config.max_in_flight, n_batches);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (stats) {
    stats->total_requests = requests.load();
    stats->attempts_per_batch.assign(n_batches, 0);
    for (std::size_t b = 0; b < n_batches; ++b)
      if (results[b]) stats->attempts_per_batch[b] = results[b]->attempts;
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t dim = 0;
  std::vector<float> values;
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (const auto& row : results[b]->rows) {
      if (dim == 0) dim = row.size();
      if (row.size() != dim || dim == 0)
        throw RemoteError("embedding dimension mismatch: got " + std::to_string(row.size()) + ", expected " +
                          std::to_string(dim));
      values.insert(values.end(), row.begin(), row.end());
    }
  }
  return EmbeddingMatrix(ids, dim, std::move(values), false);
}

/// Same as embed_records with ids "0", "1", ...
inline EmbeddingMatrix embed_texts(const EmbedEndpointConfig& config, const std::vector<std::string>& texts,
                                   EmbedStats* stats = nullptr) {
  std::vector<std::string> ids;
  ids.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(std::to_string(i));
  return embed_records(config, ids, texts, stats);
}

}  // namespace embedeval
