#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "insight/core/error.hpp"

namespace insight {

inline constexpr const char* kApiKeyVariable = "INSIGHT_LLM_API_KEY";

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct EndpointConfig {
  /// Scheme, host and optional port, optionally followed by a path prefix.
  std::string base_url = "https://api.openai.com";
  std::string model = "gpt-4";
  double temperature = 0.0;
  double timeout_s = 120.0;
  std::size_t max_retries = 3;
  std::chrono::milliseconds backoff{1000};
  bool offline = false;
  std::filesystem::path offline_dir = ".";
  /// Receives one line per retry; stderr when empty.
  std::function<void(const std::string&)> log;
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // request path of the chat endpoint
};

inline SplitUrl split_chat_url(const std::string& base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("LLM base URL needs a scheme: " + base);
  const std::string scheme = base.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("LLM base URL must be http or https: " + base);
  const auto slash = base.find('/', scheme_end + 3);
  SplitUrl u;
  u.origin = base.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  const bool has_version = prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0;
  u.path = prefix + (has_version ? "" : "/v1") + "/chat/completions";
  return u;
}

inline std::string utc_stamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

inline std::string write_offline(const std::vector<ChatMessage>& messages, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create offline prompt directory " + dir.string() + ": " + ec.message());
  const std::string stamp = utc_stamp();
  std::filesystem::path path = dir / ("prompt-" + stamp + ".txt");
  for (int i = 1; std::filesystem::exists(path); ++i) path = dir / ("prompt-" + stamp + "-" + std::to_string(i) + ".txt");
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) out << "\n\n";
    out << "### " << messages[i].role << "\n\n" << messages[i].content;
  }
  out << "\n";
  if (!out) throw IoError("cannot write offline prompt " + path.string());
  return path.string();
}

}  // namespace detail

inline nlohmann::json chat_request_body(const std::vector<ChatMessage>& messages, const EndpointConfig& cfg) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model}, {"temperature", cfg.temperature}, {"messages", msgs}};
}

/// One chat completion. Online it returns the assistant text; offline it
/// writes the messages to a timestamped file under `offline_dir` and
/// returns that file's path without touching the network. Connection
/// failures, 429 and 5xx are retried with exponential backoff.
inline std::string llm_chat(const std::vector<ChatMessage>& messages, const EndpointConfig& cfg) {
  if (messages.empty()) throw ContractError("llm_chat needs at least one message");
  if (cfg.offline) return detail::write_offline(messages, cfg.offline_dir);

  const char* key = std::getenv(kApiKeyVariable);
  if (key == nullptr || *key == '\0') {
    throw ConfigError(std::string("online LLM calls need the API key in ") + kApiKeyVariable + " (or use --offline)");
  }
  const auto url = detail::split_chat_url(cfg.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};
  const std::string body = chat_request_body(messages, cfg).dump();
  const auto log = cfg.log ? cfg.log : [](const std::string& line) { std::cerr << line << "\n"; };

  for (std::size_t attempt = 0;; ++attempt) {
    const auto res = client.Post(url.path, headers, body, "application/json");
    int status = 0;
    std::string reason;
    if (!res) {
      reason = httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      try {
        const auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed chat completion response: ") + e.what());
      }
    } else {
      status = res->status;
      reason = "HTTP " + std::to_string(status);
    }
    const bool transient = status == 0 || status == 429 || status >= 500;
    if (!transient || attempt >= cfg.max_retries) {
      throw TransportError("chat completion failed after " + std::to_string(attempt + 1) + " attempt(s): " + reason,
                           status);
    }
    const auto wait = cfg.backoff * (1LL << std::min<std::size_t>(attempt, 16));
    log("llm_chat: " + reason + ", retry " + std::to_string(attempt + 1) + "/" + std::to_string(cfg.max_retries) +
        " in " + std::to_string(wait.count()) + " ms");
    std::this_thread::sleep_for(wait);
  }
}

}  // namespace insight
