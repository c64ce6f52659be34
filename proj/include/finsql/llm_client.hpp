#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finsql/error.hpp"
#include "finsql/http.hpp"
#include "finsql/text.hpp"

namespace finsql::llm {

struct CompletionRequest {
  std::string prompt;
  std::size_t n = 1;
  double temperature = 0.0;
  std::size_t max_tokens = 512;
  std::vector<std::string> stop;

  void validate() const {
    if (n < 1) throw Error("sample count must be at least 1");
    if (max_tokens < 1) throw Error("max_tokens must be at least 1");
    if (!(temperature >= 0.0)) throw Error("temperature must be non-negative");
  }
};

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
};

struct CompletionResponse {
  std::vector<std::string> samples;
  Usage usage;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual CompletionResponse complete(const CompletionRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

// Script entries are consumed in order, n per request. An entry may be a
// string (a sample) or {"error": "timeout"|"transport"|"auth"|"rate_limited"|
// "malformed"} to make that request fail.
class MockBackend : public CompletionBackend {
 public:
  struct Entry {
    std::string text;
    std::optional<std::string> error;
  };

  explicit MockBackend(std::vector<Entry> script) : script_(std::move(script)) {}
  explicit MockBackend(const std::vector<std::string>& texts) {
    for (const auto& t : texts) script_.push_back({t, std::nullopt});
  }
  MockBackend(MockBackend&& o) noexcept : script_(std::move(o.script_)), next_(o.next_), calls_(o.calls_) {}

  static MockBackend from_json(const nlohmann::json& j) {
    std::vector<Entry> entries;
    for (const auto& e : j) {
      if (e.is_string()) {
        entries.push_back({e.get<std::string>(), std::nullopt});
      } else if (e.is_object() && e.contains("error")) {
        entries.push_back({"", e.at("error").get<std::string>()});
      } else {
        throw Error("mock script entries must be strings or {\"error\": ...} objects");
      }
    }
    return MockBackend(std::move(entries));
  }

  static MockBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read mock script " + path.string());
    return from_json(nlohmann::json::parse(in));
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    req.validate();
    std::lock_guard lock(mutex_);
    ++calls_;
    CompletionResponse res;
    res.usage.prompt_tokens = text::word_count(req.prompt);
    for (std::size_t i = 0; i < req.n; ++i) {
      if (next_ >= script_.size()) throw TransportError("mock script exhausted");
      const Entry& e = script_[next_++];
      if (e.error) raise(*e.error);
      res.usage.output_tokens += text::word_count(e.text);
      res.samples.push_back(e.text);
    }
    return res;
  }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }
  std::size_t consumed() const {
    std::lock_guard lock(mutex_);
    return next_;
  }

 private:
  [[noreturn]] static void raise(const std::string& kind) {
    if (kind == "timeout") throw Timeout("scripted timeout");
    if (kind == "auth") throw AuthError("scripted auth failure");
    if (kind == "rate_limited") throw RateLimited("scripted rate limit");
    if (kind == "malformed") throw MalformedResponse("scripted malformed response");
    throw TransportError("scripted transport failure");
  }

  std::vector<Entry> script_;
  std::size_t next_ = 0;
  std::size_t calls_ = 0;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Remote endpoint
// ---------------------------------------------------------------------------

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds initial_delay{250};
  double multiplier = 2.0;

  // Delay after the given failed attempt (1-based).
  std::chrono::milliseconds delay_after(std::size_t attempt) const {
    double d = static_cast<double>(initial_delay.count());
    for (std::size_t i = 1; i < attempt; ++i) d *= multiplier;
    return std::chrono::milliseconds(static_cast<long long>(d));
  }
};

struct RemoteConfig {
  std::string url;
  std::string model;
  std::string credential_env;  // name of the environment variable holding the API key
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{60000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> getenv_lookup(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

// POSTs {model, prompt, n, temperature, max_tokens, stop} and expects
// {samples:[{text}], usage:{prompt_tokens, output_tokens}}.
class RemoteBackend : public CompletionBackend {
 public:
  RemoteBackend(RemoteConfig config, std::shared_ptr<HttpTransport> transport,
                Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); },
                EnvLookup env = getenv_lookup)
      : config_(std::move(config)),
        transport_(std::move(transport)),
        sleeper_(std::move(sleeper)),
        env_(std::move(env)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
    if (config_.retry.max_attempts < 1) throw Error("retry cap must be at least 1");
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    req.validate();
    HttpHeaders headers = {{"Content-Type", "application/json"}};
    if (!config_.credential_env.empty()) {
      const auto key = env_(config_.credential_env);
      if (!key) throw AuthError("credential environment variable " + config_.credential_env + " is not set");
      headers.emplace_back("Authorization", "Bearer " + *key);
    }
    const nlohmann::json body = {{"model", config_.model},         {"prompt", req.prompt},
                                 {"n", req.n},                     {"temperature", req.temperature},
                                 {"max_tokens", req.max_tokens},   {"stop", req.stop}};
    const std::string payload = body.dump();

    for (std::size_t attempt = 1;; ++attempt) {
      const bool last = attempt >= config_.retry.max_attempts;
      HttpResponse res;
      try {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<>& s;
          ~Release() { s.release(); }
        } release{slots_};
        res = transport_->post(config_.url, payload, headers, config_.timeout);
      } catch (const Timeout&) {
        if (last) throw;
        sleeper_(config_.retry.delay_after(attempt));
        continue;
      } catch (const TransportError&) {
        if (last) throw;
        sleeper_(config_.retry.delay_after(attempt));
        continue;
      }
      if (res.status == 200) return parse(res.body, req.n);
      if (res.status == 401 || res.status == 403) throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res.status) + ")");
      const bool transient = res.status == 429 || res.status >= 500;
      if (!transient) throw TransportError("endpoint returned HTTP " + std::to_string(res.status));
      if (last) {
        if (res.status == 429) throw RateLimited("rate limited after " + std::to_string(attempt) + " attempts");
        throw TransportError("endpoint returned HTTP " + std::to_string(res.status) + " after " + std::to_string(attempt) + " attempts");
      }
      sleeper_(config_.retry.delay_after(attempt));
    }
  }

 private:
  static CompletionResponse parse(const std::string& body, std::size_t n) {
    CompletionResponse out;
    try {
      const auto j = nlohmann::json::parse(body);
      for (const auto& s : j.at("samples")) out.samples.push_back(s.at("text").get<std::string>());
      if (j.contains("usage")) {
        out.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
        out.usage.output_tokens = j["usage"].value("output_tokens", std::size_t{0});
      }
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponse(std::string("unexpected response body: ") + e.what());
    }
    if (out.samples.size() != n)
      throw MalformedResponse("expected " + std::to_string(n) + " samples, got " + std::to_string(out.samples.size()));
    return out;
  }

  RemoteConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleeper_;
  EnvLookup env_;
  std::counting_semaphore<> slots_;
};

// Runs requests concurrently; responses come back in request order. A
// failed request rethrows its error when its result is collected.
inline std::vector<CompletionResponse> complete_all(CompletionBackend& backend, const std::vector<CompletionRequest>& reqs) {
  std::vector<std::future<CompletionResponse>> pending;
  pending.reserve(reqs.size());
  for (const auto& r : reqs) pending.push_back(std::async(std::launch::async, [&backend, &r] { return backend.complete(r); }));
  std::vector<CompletionResponse> out;
  out.reserve(reqs.size());
  for (auto& f : pending) out.push_back(f.get());
  return out;
}

// ---------------------------------------------------------------------------
// Endpoint strings: "mock:<script.json>" or "remote:<url>"
// ---------------------------------------------------------------------------

inline std::unique_ptr<CompletionBackend> make_backend(const std::string& endpoint, RemoteConfig config = {},
                                                       std::shared_ptr<HttpTransport> transport = nullptr) {
  if (text::istarts_with(endpoint, "mock:"))
    return std::make_unique<MockBackend>(MockBackend::from_file(endpoint.substr(5)));
  if (text::istarts_with(endpoint, "remote:")) {
    config.url = endpoint.substr(7);
    if (!transport) transport = std::make_shared<HttplibTransport>();
    return std::make_unique<RemoteBackend>(std::move(config), std::move(transport));
  }
  throw Error("endpoint must be mock:<script> or remote:<url>, got '" + endpoint + "'");
}

// ---------------------------------------------------------------------------
// SQL extraction
// ---------------------------------------------------------------------------

// The last fenced code block or "SQL:"-prefixed line, whichever comes later;
// failing that, the last line starting with SELECT.
inline std::optional<std::string> extract_sql(std::string_view response) {
  const auto lines = text::split_lines(response);
  std::optional<std::string> found;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = text::trim(lines[i]);
    if (line.starts_with("```")) {
      std::string block;
      std::size_t j = i + 1;
      for (; j < lines.size() && !text::trim(lines[j]).starts_with("```"); ++j) {
        if (!block.empty()) block += "\n";
        block += lines[j];
      }
      const auto trimmed = text::trim(block);
      if (!trimmed.empty()) found = std::string(trimmed);
      i = j;
    } else if (text::istarts_with(line, "SQL:")) {
      const auto rest = text::trim(line.substr(4));
      if (!rest.empty()) found = std::string(rest);
    }
  }
  if (found) return found;
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const auto line = text::trim(*it);
    if (text::istarts_with(line, "SELECT")) return std::string(line);
  }
  return std::nullopt;
}

// One request with sample_count = n; samples without extractable SQL become
// empty strings so calibration drops them.
inline std::vector<std::string> sample_candidates(CompletionBackend& backend, const std::string& prompt, std::size_t n,
                                                  double temperature = 0.8, std::size_t max_tokens = 512) {
  CompletionRequest req;
  req.prompt = prompt;
  req.n = n;
  req.temperature = temperature;
  req.max_tokens = max_tokens;
  const auto res = backend.complete(req);
  std::vector<std::string> out;
  out.reserve(res.samples.size());
  for (const auto& s : res.samples) out.push_back(extract_sql(s).value_or(""));
  return out;
}

}  // namespace finsql::llm
