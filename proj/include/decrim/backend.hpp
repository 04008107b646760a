#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "decrim/core.hpp"

namespace decrim {

enum class Role { system, user, assistant };

std::string to_string(Role v);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

struct GenerationRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;  // non-empty, last message role = user
  DecodingParams decoding;
  int max_output_tokens = 1024;

  void validate() const;
  const std::string& last_user_content() const;
};

struct GenerationResult {
  std::string text;
  long input_tokens = 0;
  long output_tokens = 0;
  long latency_ms = 0;
  bool cache_hit = false;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
  virtual const std::string& model_id() const = 0;
  // Upstream usage, aggregated per model. Cache wrappers report their inner backend's.
  virtual std::map<std::string, TokenUsage> usage() const { return {}; }
  virtual long call_count() const { return 0; }
};

// Convenience: single user message with the backend's own model id.
GenerationRequest make_request(const TextBackend& backend, std::string user_prompt,
                               DecodingParams decoding = {}, int max_output_tokens = 1024);

long approx_token_count(const std::string& text);

struct MockRule {
  std::string needle;  // substring match against the last user message
  std::vector<std::string> replies;
  bool repeat_last = false;
  size_t next = 0;
};

struct MockOptions {
  std::string model_id = "mock";
  long latency_ms = 0;
};

// Deterministic scripted backend. FIFO mode when no rules are registered,
// prefix-matcher mode otherwise (first rule whose needle occurs in the last
// user message wins; optional default reply catches the rest).
class MockBackend : public TextBackend {
 public:
  explicit MockBackend(MockOptions options = {});

  void enqueue(std::string reply);
  void enqueue_all(const std::vector<std::string>& replies);
  void add_rule(std::string needle, std::vector<std::string> replies, bool repeat_last = false);
  void set_default_reply(std::string reply);

  GenerationResult generate(const GenerationRequest& request) override;
  const std::string& model_id() const override { return options_.model_id; }
  std::map<std::string, TokenUsage> usage() const override;
  long call_count() const override;
  std::vector<GenerationRequest> requests() const;

 private:
  MockOptions options_;
  mutable std::mutex mu_;
  std::deque<std::string> script_;
  std::vector<MockRule> rules_;
  std::optional<std::string> default_reply_;
  std::vector<GenerationRequest> requests_;
  TokenUsage usage_;
  long calls_ = 0;
};

// Token-bucket rate limiter shared per endpoint; acquire() blocks until a
// token is available.
class TokenBucket {
 public:
  TokenBucket(double capacity, double refill_per_sec);
  void acquire();

 private:
  std::mutex mu_;
  double capacity_;
  double tokens_;
  double refill_per_sec_;
  std::chrono::steady_clock::time_point last_refill_;
};

struct HttpBackendOptions {
  std::string base_url;  // e.g. "http://127.0.0.1:8080"
  std::string path = "/v1/chat/completions";
  std::string model_id;
  std::string api_key_env;  // env var holding the bearer token; empty = none
  int max_attempts = 5;
  int initial_backoff_ms = 1000;
  double backoff_multiplier = 2.0;
  int max_backoff_ms = 30000;
  bool jitter = true;
  unsigned jitter_seed = 0;  // 0 = nondeterministic
  int timeout_sec = 120;
  std::shared_ptr<TokenBucket> limiter;
  std::function<void(int)> sleeper;  // injectable for tests; default sleeps
};

// Chat-completion JSON-over-HTTP client. Transient failures (connect errors,
// 408/429/5xx) are retried with jittered exponential backoff; auth failures
// (401/403) are not.
class HttpBackend : public TextBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  GenerationResult generate(const GenerationRequest& request) override;
  const std::string& model_id() const override { return options_.model_id; }
  std::map<std::string, TokenUsage> usage() const override;
  long call_count() const override;

 private:
  HttpBackendOptions options_;
  std::string host_;
  int port_ = 80;
  bool tls_ = false;
  mutable std::mutex mu_;
  std::map<std::string, TokenUsage> usage_;
  long calls_ = 0;
  unsigned jitter_state_;
};

struct CacheOptions {
  std::string dir;
  bool cache_unseeded_sampling = false;
};

// Persistent disk cache keyed by a SHA-256 digest of (model_id, messages,
// decoding, max_output_tokens). Unseeded sampling requests bypass the cache
// unless explicitly enabled. Identical concurrent requests are collapsed to
// one upstream call via per-key locking.
class CachingBackend : public TextBackend {
 public:
  CachingBackend(std::shared_ptr<TextBackend> inner, CacheOptions options);

  GenerationResult generate(const GenerationRequest& request) override;
  const std::string& model_id() const override { return inner_->model_id(); }
  std::map<std::string, TokenUsage> usage() const override { return inner_->usage(); }
  long call_count() const override { return inner_->call_count(); }

  static std::string cache_key(const GenerationRequest& request);
  std::vector<std::string> list_entries() const;
  size_t clear();

 private:
  std::string entry_path(const std::string& key) const;
  std::shared_ptr<TextBackend> inner_;
  CacheOptions options_;
  std::mutex map_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
};

struct PriceEntry {
  double input_usd_per_1m = 0.0;
  double output_usd_per_1m = 0.0;
};

class PriceTable {
 public:
  PriceTable() = default;
  void set(const std::string& model_id, PriceEntry entry);
  bool has(const std::string& model_id) const;
  const PriceEntry& get(const std::string& model_id) const;  // throws on unknown model
  static PriceTable from_json(const json& j);
  json to_json() const;

 private:
  std::map<std::string, PriceEntry> entries_;
};

// cost = input_tokens * input_price/1e6 + output_tokens * output_price/1e6.
double estimate_cost(const std::string& model_id, const TokenUsage& usage, const PriceTable& prices);
double estimate_cost(const std::map<std::string, TokenUsage>& usage, const PriceTable& prices);
double round_one_decimal(double usd);
std::string format_usd(double usd);  // "$6.5" — one decimal, report parity

std::string sha256_hex(const std::string& bytes);

}  // namespace decrim
