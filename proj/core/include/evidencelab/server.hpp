#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "evidencelab/session.hpp"

namespace evidencelab {

struct ServerConfig {
  std::string address = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::filesystem::path log_dir;
  std::string experimenter_token;  // empty: generated at start-up
};

// WebSocket participants on /ws, experimenter HTTP API under /api. One thread
// per connection; each session's mutations are serialized by SessionManager.
//
//   POST /api/sessions                      create from a SessionConfig body
//   GET  /api/sessions                      progress of every session
//   GET  /api/sessions/{id}                 progress plus payment statements
//   POST /api/sessions/{id}/payment         resolve payment
//   GET  /api/sessions/{id}/events.jsonl    raw event log
//   GET  /api/sessions/{id}/forecasts.csv   per-forecast export
//   GET  /api/sessions/{id}/blocks.csv      per-block export
//
// API calls need "Authorization: Bearer <token>" or "?token=<token>".
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  void wait();  // blocks until stop()

  std::uint16_t port() const;
  const std::string& experimenter_token() const;
  SessionManager& sessions();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evidencelab
