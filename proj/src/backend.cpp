#include "decrim/backend.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <thread>

namespace decrim {

std::string to_string(Role v) {
  switch (v) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw std::invalid_argument("unknown role: \"" + s + "\"");
}

void GenerationRequest::validate() const {
  if (model_id.empty()) throw std::invalid_argument("request requires a model_id");
  if (messages.empty()) throw std::invalid_argument("request requires at least one message");
  if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be > 0");
  if (decoding.mode == DecodingParams::Mode::sampling && decoding.temperature <= 0) {
    throw std::invalid_argument("sampling requires temperature > 0");
  }
}

const std::string& GenerationRequest::last_user_content() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return it->content;
  }
  static const std::string empty;
  return empty;
}

GenerationRequest make_request(const TextBackend& backend, std::string user_prompt,
                               DecodingParams decoding, int max_output_tokens) {
  GenerationRequest req;
  req.model_id = backend.model_id();
  req.messages.push_back({Role::user, std::move(user_prompt)});
  req.decoding = decoding;
  req.max_output_tokens = max_output_tokens;
  return req;
}

long approx_token_count(const std::string& text) {
  return static_cast<long>((text.size() + 3) / 4);
}

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {}

void MockBackend::enqueue(std::string reply) {
  std::lock_guard<std::mutex> lock(mu_);
  script_.push_back(std::move(reply));
}

void MockBackend::enqueue_all(const std::vector<std::string>& replies) {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& r : replies) script_.push_back(r);
}

void MockBackend::add_rule(std::string needle, std::vector<std::string> replies,
                           bool repeat_last) {
  if (replies.empty()) throw std::invalid_argument("mock rule requires at least one reply");
  std::lock_guard<std::mutex> lock(mu_);
  rules_.push_back(MockRule{std::move(needle), std::move(replies), repeat_last, 0});
}

void MockBackend::set_default_reply(std::string reply) {
  std::lock_guard<std::mutex> lock(mu_);
  default_reply_ = std::move(reply);
}

GenerationResult MockBackend::generate(const GenerationRequest& request) {
  request.validate();
  std::string reply;
  {
    std::lock_guard<std::mutex> lock(mu_);
    requests_.push_back(request);
    ++calls_;
    const std::string& probe = request.last_user_content();
    bool found = false;
    if (!rules_.empty()) {
      for (auto& rule : rules_) {
        if (probe.find(rule.needle) == std::string::npos) continue;
        if (rule.next >= rule.replies.size()) {
          if (!rule.repeat_last) {
            throw std::runtime_error("mock rule \"" + rule.needle + "\" is out of replies");
          }
          reply = rule.replies.back();
        } else {
          reply = rule.replies[rule.next++];
        }
        found = true;
        break;
      }
    } else if (!script_.empty()) {
      reply = std::move(script_.front());
      script_.pop_front();
      found = true;
    }
    if (!found) {
      if (!default_reply_) {
        const std::string head = probe.substr(0, std::min<size_t>(probe.size(), 120));
        throw std::runtime_error("mock backend has no reply for request starting \"" + head +
                                 "\"");
      }
      reply = *default_reply_;
    }
    long input = 0;
    for (const auto& m : request.messages) input += approx_token_count(m.content);
    usage_.input_tokens += input;
    usage_.output_tokens += approx_token_count(reply);
  }
  if (options_.latency_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));
  }
  GenerationResult res;
  res.text = std::move(reply);
  long input = 0;
  for (const auto& m : request.messages) input += approx_token_count(m.content);
  res.input_tokens = input;
  res.output_tokens = approx_token_count(res.text);
  res.latency_ms = options_.latency_ms;
  return res;
}

std::map<std::string, TokenUsage> MockBackend::usage() const {
  std::lock_guard<std::mutex> lock(mu_);
  return {{options_.model_id, usage_}};
}

long MockBackend::call_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

std::vector<GenerationRequest> MockBackend::requests() const {
  std::lock_guard<std::mutex> lock(mu_);
  return requests_;
}

TokenBucket::TokenBucket(double capacity, double refill_per_sec)
    : capacity_(capacity), tokens_(capacity), refill_per_sec_(refill_per_sec),
      last_refill_(std::chrono::steady_clock::now()) {
  if (capacity <= 0 || refill_per_sec <= 0) {
    throw std::invalid_argument("token bucket requires positive capacity and refill rate");
  }
}

void TokenBucket::acquire() {
  while (true) {
    long wait_ms = 0;
    {
      std::lock_guard<std::mutex> lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      const double elapsed =
          std::chrono::duration_cast<std::chrono::duration<double>>(now - last_refill_).count();
      tokens_ = std::min(capacity_, tokens_ + elapsed * refill_per_sec_);
      last_refill_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait_ms = static_cast<long>(std::ceil((1.0 - tokens_) / refill_per_sec_ * 1000.0));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(std::max(1L, wait_ms)));
  }
}

std::string CachingBackend::cache_key(const GenerationRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back(json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  const json canonical{{"model_id", request.model_id},
                       {"messages", messages},
                       {"decoding", decoding_to_json(request.decoding)},
                       {"max_output_tokens", request.max_output_tokens}};
  return sha256_hex(canonical.dump());
}

CachingBackend::CachingBackend(std::shared_ptr<TextBackend> inner, CacheOptions options)
    : inner_(std::move(inner)), options_(std::move(options)) {
  if (!inner_) throw std::invalid_argument("cache requires an inner backend");
  if (options_.dir.empty()) throw std::invalid_argument("cache requires a directory");
  std::filesystem::create_directories(options_.dir);
}

std::string CachingBackend::entry_path(const std::string& key) const {
  return (std::filesystem::path(options_.dir) / (key + ".json")).string();
}

GenerationResult CachingBackend::generate(const GenerationRequest& request) {
  request.validate();
  const bool unseeded_sampling =
      request.decoding.mode == DecodingParams::Mode::sampling && !request.decoding.seed;
  if (unseeded_sampling && !options_.cache_unseeded_sampling) {
    return inner_->generate(request);
  }
  const std::string key = cache_key(request);
  std::shared_ptr<std::mutex> key_lock;
  {
    std::lock_guard<std::mutex> lock(map_mu_);
    auto& slot = key_locks_[key];
    if (!slot) slot = std::make_shared<std::mutex>();
    key_lock = slot;
  }
  std::lock_guard<std::mutex> lock(*key_lock);
  const std::string path = entry_path(key);
  if (std::filesystem::exists(path)) {
    const json j = json::parse(read_file(path));
    GenerationResult res;
    res.text = j.at("text").get<std::string>();
    res.input_tokens = j.value("input_tokens", 0L);
    res.output_tokens = j.value("output_tokens", 0L);
    res.latency_ms = 0;
    res.cache_hit = true;
    return res;
  }
  GenerationResult res = inner_->generate(request);
  const json entry{{"text", res.text},
                   {"input_tokens", res.input_tokens},
                   {"output_tokens", res.output_tokens}};
  write_file_atomic(path, entry.dump());
  return res;
}

std::vector<std::string> CachingBackend::list_entries() const {
  std::vector<std::string> keys;
  for (const auto& entry : std::filesystem::directory_iterator(options_.dir)) {
    if (entry.path().extension() == ".json") keys.push_back(entry.path().stem().string());
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

size_t CachingBackend::clear() {
  size_t removed = 0;
  for (const auto& entry : std::filesystem::directory_iterator(options_.dir)) {
    if (entry.path().extension() == ".json") {
      std::filesystem::remove(entry.path());
      ++removed;
    }
  }
  return removed;
}

void PriceTable::set(const std::string& model_id, PriceEntry entry) {
  if (entry.input_usd_per_1m < 0 || entry.output_usd_per_1m < 0) {
    throw std::invalid_argument("prices must be non-negative");
  }
  entries_[model_id] = entry;
}

bool PriceTable::has(const std::string& model_id) const {
  return entries_.count(model_id) > 0;
}

const PriceEntry& PriceTable::get(const std::string& model_id) const {
  const auto it = entries_.find(model_id);
  if (it == entries_.end()) {
    throw std::invalid_argument("no price entry for model \"" + model_id + "\"");
  }
  return it->second;
}

PriceTable PriceTable::from_json(const json& j) {
  PriceTable t;
  for (const auto& [model, entry] : j.items()) {
    PriceEntry e;
    e.input_usd_per_1m = entry.at("input_usd_per_1m").get<double>();
    e.output_usd_per_1m = entry.at("output_usd_per_1m").get<double>();
    t.set(model, e);
  }
  return t;
}

json PriceTable::to_json() const {
  json j = json::object();
  for (const auto& [model, e] : entries_) {
    j[model] = json{{"input_usd_per_1m", e.input_usd_per_1m},
                    {"output_usd_per_1m", e.output_usd_per_1m}};
  }
  return j;
}

double estimate_cost(const std::string& model_id, const TokenUsage& usage,
                     const PriceTable& prices) {
  const PriceEntry& e = prices.get(model_id);
  return usage.input_tokens * e.input_usd_per_1m / 1e6 +
         usage.output_tokens * e.output_usd_per_1m / 1e6;
}

double estimate_cost(const std::map<std::string, TokenUsage>& usage, const PriceTable& prices) {
  double total = 0.0;
  for (const auto& [model, u] : usage) total += estimate_cost(model, u, prices);
  return total;
}

double round_one_decimal(double usd) { return std::round(usd * 10.0) / 10.0; }

std::string format_usd(double usd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "$%.1f", round_one_decimal(usd));
  return buf;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("cannot allocate digest context");
  if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace decrim
