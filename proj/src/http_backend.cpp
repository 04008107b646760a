#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#include "decrim/backend.hpp"

namespace decrim {

namespace {

bool retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw std::invalid_argument("http backend requires a base_url");
  if (options_.model_id.empty()) throw std::invalid_argument("http backend requires a model_id");
  if (options_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (!options_.api_key_env.empty() && std::getenv(options_.api_key_env.c_str()) == nullptr) {
    throw std::runtime_error("environment variable " + options_.api_key_env + " is not set");
  }
  tls_ = options_.base_url.rfind("https://", 0) == 0;
  jitter_state_ = options_.jitter_seed != 0 ? options_.jitter_seed
                                            : std::random_device{}();
}

GenerationResult HttpBackend::generate(const GenerationRequest& request) {
  request.validate();
  if (options_.limiter) options_.limiter->acquire();

  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back(json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body{{"model", request.model_id},
            {"messages", messages},
            {"max_tokens", request.max_output_tokens}};
  if (request.decoding.mode == DecodingParams::Mode::greedy) {
    body["temperature"] = 0.0;
  } else {
    body["temperature"] = request.decoding.temperature;
  }
  if (request.decoding.seed) body["seed"] = *request.decoding.seed;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!options_.api_key_env.empty()) {
    headers.emplace("Authorization",
                    std::string("Bearer ") + std::getenv(options_.api_key_env.c_str()));
  }

  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout_sec, 0);
    client.set_read_timeout(options_.timeout_sec, 0);
    client.set_write_timeout(options_.timeout_sec, 0);
    auto res = client.Post(options_.path, headers, payload, "application/json");
    const long latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++calls_;
    }

    bool retry = false;
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      retry = true;
    } else if (res->status == 200) {
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("malformed completion response: ") + e.what());
      }
      const auto& choices = reply.at("choices");
      if (!choices.is_array() || choices.empty()) {
        throw std::runtime_error("completion response has no choices");
      }
      GenerationResult out;
      out.text = choices[0].at("message").at("content").get<std::string>();
      if (reply.contains("usage")) {
        out.input_tokens = reply["usage"].value("prompt_tokens", 0L);
        out.output_tokens = reply["usage"].value("completion_tokens", 0L);
      } else {
        out.input_tokens = approx_token_count(payload);
        out.output_tokens = approx_token_count(out.text);
      }
      out.latency_ms = latency;
      {
        std::lock_guard<std::mutex> lock(mu_);
        auto& u = usage_[request.model_id];
        u.input_tokens += out.input_tokens;
        u.output_tokens += out.output_tokens;
      }
      return out;
    } else if (retryable_status(res->status)) {
      last_error = "status " + std::to_string(res->status) + ": " +
                   res->body.substr(0, std::min<size_t>(res->body.size(), 200));
      retry = true;
    } else {
      throw std::runtime_error("request rejected with status " + std::to_string(res->status) +
                               ": " +
                               res->body.substr(0, std::min<size_t>(res->body.size(), 200)));
    }

    if (retry && attempt < options_.max_attempts) {
      double delay = options_.initial_backoff_ms;
      for (int i = 1; i < attempt; ++i) delay *= options_.backoff_multiplier;
      delay = std::min<double>(delay, options_.max_backoff_ms);
      if (options_.jitter) {
        std::lock_guard<std::mutex> lock(mu_);
        std::mt19937 rng(jitter_state_);
        std::uniform_real_distribution<double> dist(0.5, 1.0);
        delay *= dist(rng);
        jitter_state_ = rng();
      }
      const int delay_ms = static_cast<int>(delay);
      if (options_.sleeper) {
        options_.sleeper(delay_ms);
      } else {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      }
    }
  }
  throw std::runtime_error("request failed after " + std::to_string(options_.max_attempts) +
                           " attempts; last error: " + last_error);
}

std::map<std::string, TokenUsage> HttpBackend::usage() const {
  std::lock_guard<std::mutex> lock(mu_);
  return usage_;
}

long HttpBackend::call_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

}  // namespace decrim
