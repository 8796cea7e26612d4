#pragma once

#include <cstdlib>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "lmds/labeler.hpp"

namespace lmds {

struct EndpointAddress {
  std::string scheme_host_port;  // "http://host:port"
  std::string path;              // "/v1/chat/completions"
};

inline EndpointAddress parse_endpoint_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    fail(ErrorKind::config, "endpoint_url must include a scheme: " + url);
  if (url.compare(0, scheme_end, "http") != 0)
    fail(ErrorKind::config, "only http:// endpoints are supported (built without TLS): " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Request body for the chat-completion endpoint.
inline nlohmann::json chat_request_body(const LabelerConfig& config, const std::string& prompt) {
  return {{"model", config.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", config.temperature},
          {"max_tokens", config.max_output_tokens}};
}

/// Extracts choices[0].message.content. Throws TransportError on any other shape.
inline std::string chat_response_content(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw TransportError("endpoint returned a non-JSON body");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw TransportError("endpoint response lacks choices[0].message.content");
  }
}

/// Chat-completion JSON POST client. The bearer token, if any, is read from
/// the environment variable named by config.api_key_env.
class HttpChatBackend : public CompletionBackend {
 public:
  explicit HttpChatBackend(LabelerConfig config)
      : config_(std::move(config)), address_(parse_endpoint_url(config_.endpoint_url)) {
    config_.validate();
    if (!config_.api_key_env.empty()) {
      if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }
  }

  std::string complete(const std::string& prompt) override {
    httplib::Client client(address_.scheme_host_port);
    const auto timeout = config_.request_timeout;
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(address_.path, headers, chat_request_body(config_, prompt).dump(),
                           "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
    return chat_response_content(res->body);
  }

  std::string id() const override { return config_.model_name; }

 private:
  LabelerConfig config_;
  EndpointAddress address_;
  std::string api_key_;
};

}  // namespace lmds
