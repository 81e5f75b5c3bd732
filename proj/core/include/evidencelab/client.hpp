#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

namespace evidencelab {

// Blocking WebSocket client speaking the session protocol. Used by the
// scripted participant driver and tests.
class WsClient {
 public:
  WsClient(const std::string& host, std::uint16_t port, const std::string& path = "/ws");
  ~WsClient();
  WsClient(const WsClient&) = delete;
  WsClient& operator=(const WsClient&) = delete;

  void send(const nlohmann::json& message);
  nlohmann::json receive();
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct HttpResponse {
  int status = 0;
  std::string content_type;
  std::string body;
};

HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& method,
                          const std::string& target, const std::string& body = {}, const std::string& token = {});

}  // namespace evidencelab
