#pragma once

// HTTP+JSON client plumbing shared by the extractor, judge, grounding and
// model-under-test clients, plus the retry policy all of them use.

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fivl/error.hpp"

namespace fivl {

using json = nlohmann::json;

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

// Runs `fn`, retrying on TransportError with exponential backoff. Any other
// exception propagates immediately.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= std::max(1, policy.max_attempts)) throw;
    }
    if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
  }
}

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path = "/";

  // Splits "http://host:port/some/path" into base and path.
  static Endpoint parse(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw InvalidArgument("endpoint URL needs a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
  }
};

inline constexpr const char* kDefaultCredentialEnv = "FIVL_API_KEY";

class HttpJsonTransport {
 public:
  explicit HttpJsonTransport(Endpoint endpoint, std::string credential_env = kDefaultCredentialEnv,
                             std::chrono::seconds timeout = std::chrono::seconds(60))
      : endpoint_(std::move(endpoint)), credential_env_(std::move(credential_env)),
        timeout_(timeout) {}

  json post(const json& body) const {
    httplib::Client client(endpoint_.base);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (const char* key = std::getenv(credential_env_.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    auto res = client.Post(endpoint_.path, headers, body.dump(), "application/json");
    if (!res) throw TransportError("request to " + endpoint_.base + endpoint_.path +
                                   " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
      throw ProtocolError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                          res->body.substr(0, 200));
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
  }

 private:
  Endpoint endpoint_;
  std::string credential_env_;
  std::chrono::seconds timeout_;
};

struct ChatMessage {
  std::string role;
  std::string content;
  std::vector<std::string> images_png_base64;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
};

inline json to_json(const ChatRequest& req) {
  json msgs = json::array();
  for (const auto& m : req.messages) {
    json jm = {{"role", m.role}, {"content", m.content}};
    if (!m.images_png_base64.empty()) jm["images"] = m.images_png_base64;
    msgs.push_back(std::move(jm));
  }
  return {{"model", req.model}, {"messages", std::move(msgs)}, {"temperature", req.temperature}};
}

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the assistant content text. Implementations must be thread-safe.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Response contract: {"content": "..."}. The OpenAI-style
// {"choices":[{"message":{"content":"..."}}]} shape is accepted as well.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpJsonTransport transport) : transport_(std::move(transport)) {}

  std::string complete(const ChatRequest& request) override {
    const json res = transport_.post(to_json(request));
    if (res.is_object() && res.contains("content") && res["content"].is_string())
      return res["content"].get<std::string>();
    if (res.is_object() && res.contains("choices") && res["choices"].is_array() &&
        !res["choices"].empty()) {
      const auto& msg = res["choices"][0].value("message", json::object());
      if (msg.contains("content") && msg["content"].is_string())
        return msg["content"].get<std::string>();
    }
    throw ProtocolError("chat response has no string 'content'");
  }

 private:
  HttpJsonTransport transport_;
};

// Deterministic in-process client driven by a callback. Used for offline runs
// and tests.
class FunctionChatClient final : public ChatClient {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  explicit FunctionChatClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

}  // namespace fivl
