#include "evidencelab/server.hpp"

#include <sys/socket.h>

#include <atomic>
#include <condition_variable>
#include <list>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "evidencelab/errors.hpp"
#include "evidencelab/protocol.hpp"

namespace evidencelab {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

std::string generate_token() {
  std::random_device rd;
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < 4; ++i) os << rd();
  return os.str();
}

struct Peer {
  websocket::stream<tcp::socket> ws;
  std::mutex write_mutex;

  explicit Peer(tcp::socket s) : ws(std::move(s)) {}

  void send(const json& m) {
    std::lock_guard lock(write_mutex);
    beast::error_code ec;
    ws.text(true);
    ws.write(asio::buffer(m.dump()), ec);
  }
};

std::pair<std::string, std::map<std::string, std::string>> split_target(std::string_view target) {
  std::map<std::string, std::string> query;
  const auto q = target.find('?');
  std::string path(target.substr(0, q));
  if (q != std::string_view::npos) {
    std::string_view rest = target.substr(q + 1);
    while (!rest.empty()) {
      const auto amp = rest.find('&');
      const auto kv = rest.substr(0, amp);
      const auto eq = kv.find('=');
      query[std::string(kv.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(kv.substr(eq + 1));
      if (amp == std::string_view::npos) break;
      rest = rest.substr(amp + 1);
    }
  }
  return {path, query};
}

std::string_view target_of(const http::request<http::string_body>& req) {
  return {req.target().data(), req.target().size()};
}

std::vector<std::string> path_parts(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

struct Server::Impl {
  ServerConfig config;
  SessionManager manager;
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::uint16_t bound_port = 0;
  std::atomic<bool> stopping{false};
  std::thread accept_thread;

  std::mutex conn_mutex;
  struct Conn {
    std::thread thread;
    int fd = -1;
    std::shared_ptr<std::atomic<bool>> finished;
  };
  std::list<Conn> conns;

  // (session, participant) -> live WebSocket
  std::mutex route_mutex;
  std::map<std::pair<std::string, int>, std::shared_ptr<Peer>> routes;

  std::mutex stop_mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;

  explicit Impl(ServerConfig c) : config(std::move(c)), manager(config.log_dir) {
    if (config.experimenter_token.empty()) config.experimenter_token = generate_token();
  }

  void accept_loop() {
    while (!stopping) {
      beast::error_code ec;
      tcp::socket socket(io);
      acceptor.accept(socket, ec);
      if (stopping) break;
      if (ec) continue;
      std::lock_guard lock(conn_mutex);
      conns.remove_if([](Conn& c) {
        if (!*c.finished) return false;
        c.thread.join();
        return true;
      });
      auto finished = std::make_shared<std::atomic<bool>>(false);
      const int fd = socket.native_handle();
      conns.push_back(Conn{std::thread([this, s = std::move(socket), finished]() mutable {
                             serve(std::move(s));
                             *finished = true;
                           }),
                           fd, finished});
    }
  }

  void serve(tcp::socket socket) {
    beast::flat_buffer buffer;
    beast::error_code ec;
    for (;;) {
      http::request<http::string_body> req;
      http::read(socket, buffer, req, ec);
      if (ec) return;
      if (websocket::is_upgrade(req)) {
        if (split_target(target_of(req)).first == "/ws") serve_ws(std::move(socket), req);
        return;
      }
      auto res = route_http(req);
      res.keep_alive(req.keep_alive());
      res.prepare_payload();
      http::write(socket, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    socket.shutdown(tcp::socket::shutdown_send, ec);
  }

  // ---- WebSocket participants ----

  void serve_ws(tcp::socket socket, http::request<http::string_body> req) {
    auto peer = std::make_shared<Peer>(std::move(socket));
    beast::error_code ec;
    peer->ws.accept(req, ec);
    if (ec) return;
    std::string session_id;
    std::optional<int> participant;

    auto deliver = [&](const Outbound& o) {
      if (o.participant < 0) {
        peer->send(o.message);
        return;
      }
      std::shared_ptr<Peer> target;
      {
        std::lock_guard lock(route_mutex);
        const auto it = routes.find({session_id, o.participant});
        if (it != routes.end()) target = it->second;
      }
      if (target) target->send(o.message);
    };

    beast::flat_buffer buffer;
    for (;;) {
      buffer.clear();
      peer->ws.read(buffer, ec);
      if (ec) break;
      json msg;
      try {
        msg = json::parse(beast::buffers_to_string(buffer.data()));
        if (!msg.is_object()) throw InvalidArgument("message must be a JSON object");
      } catch (const std::exception& e) {
        peer->send(protocol::error(session_id, 0, protocol::code::invalid, e.what()));
        continue;
      }
      std::uint64_t seq = 0;
      if (msg.contains("seq") && msg["seq"].is_number_unsigned()) seq = msg["seq"].get<std::uint64_t>();
      try {
        const auto type = msg.value("type", std::string{});
        if (type == protocol::kJoin) {
          if (participant) {
            peer->send(protocol::error(session_id, 0, protocol::code::protocol_order, "already joined", seq));
            continue;
          }
          const auto sid = protocol::require_string(msg, "session");
          if (!manager.contains(sid)) {
            peer->send(protocol::error(sid, 0, protocol::code::not_found, "unknown session", seq));
            continue;
          }
          std::optional<std::string> token;
          if (msg.contains("token") && msg["token"].is_string()) token = msg["token"].get<std::string>();
          session_id = sid;
          const auto joined = manager.join(
              sid, token, seq,
              [&](int p) {
                std::lock_guard lock(route_mutex);
                routes[{sid, p}] = peer;
              },
              deliver);
          if (joined) participant = joined;
          else session_id.clear();
          continue;
        }
        if (!participant) {
          peer->send(protocol::error(session_id, 0, protocol::code::not_joined, "join a session first", seq));
          continue;
        }
        manager.handle(session_id, *participant, msg, deliver);
      } catch (const std::exception& e) {
        peer->send(protocol::error(session_id, 0, protocol::code::invalid, e.what(), seq));
      }
    }
    if (participant) {
      std::lock_guard lock(route_mutex);
      const auto it = routes.find({session_id, *participant});
      if (it != routes.end() && it->second == peer) routes.erase(it);
    }
  }

  // ---- HTTP experimenter API ----

  using Response = http::response<http::string_body>;

  Response reply(const http::request<http::string_body>& req, http::status status, std::string body,
                 std::string_view type = "application/json") {
    Response res{status, req.version()};
    res.set(http::field::content_type, std::string(type));
    res.set(http::field::access_control_allow_origin, "*");
    res.body() = std::move(body);
    return res;
  }

  Response json_reply(const http::request<http::string_body>& req, http::status status, const json& j) {
    return reply(req, status, j.dump());
  }

  Response error_reply(const http::request<http::string_body>& req, http::status status, std::string_view message) {
    return json_reply(req, status, json{{"error", message}});
  }

  Response route_http(const http::request<http::string_body>& req) {
    const auto [path, query] = split_target(target_of(req));
    if (req.method() == http::verb::options) {
      auto res = reply(req, http::status::no_content, "");
      res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
      res.set(http::field::access_control_allow_headers, "Authorization, Content-Type");
      return res;
    }
    const auto parts = path_parts(path);
    if (parts.size() == 2 && parts[0] == "api" && parts[1] == "health") return json_reply(req, http::status::ok, json{{"ok", true}});
    if (parts.empty() || parts[0] != "api") return error_reply(req, http::status::not_found, "not found");

    std::string presented;
    const auto auth = req[http::field::authorization];
    if (auth.starts_with("Bearer ")) presented = std::string(auth.substr(7));
    if (const auto it = query.find("token"); it != query.end()) presented = it->second;
    if (presented != config.experimenter_token) return error_reply(req, http::status::unauthorized, "unauthorized");

    try {
      if (parts.size() == 2 && parts[1] == "sessions") {
        if (req.method() == http::verb::post) {
          const auto cfg = json::parse(req.body().empty() ? std::string("{}") : req.body()).get<SessionConfig>();
          const auto created = manager.create(cfg);
          return json_reply(req, http::status::created, json{{"session", created.session_id}, {"tokens", created.tokens}});
        }
        if (req.method() == http::verb::get) {
          json out = json::array();
          for (const auto& id : manager.session_ids())
            manager.with_session(id, [&](const Session& s) { out.push_back(s.progress()); });
          return json_reply(req, http::status::ok, out);
        }
        return error_reply(req, http::status::method_not_allowed, "method not allowed");
      }
      if (parts.size() >= 3 && parts[1] == "sessions") {
        const auto& id = parts[2];
        if (!manager.contains(id)) return error_reply(req, http::status::not_found, "unknown session");
        if (parts.size() == 3 && req.method() == http::verb::get) {
          json out;
          manager.with_session(id, [&](const Session& s) {
            out = s.progress();
            json statements = json::array();
            for (const auto& st : s.statements()) statements.push_back(to_json(st));
            out["statements"] = std::move(statements);
          });
          return json_reply(req, http::status::ok, out);
        }
        if (parts.size() == 4 && parts[3] == "payment" && req.method() == http::verb::post) {
          const auto statements = manager.resolve_payment(id, [&](const Outbound& o) { push(id, o); });
          json out = json::array();
          for (const auto& st : statements) out.push_back(to_json(st));
          return json_reply(req, http::status::ok, json{{"session", id}, {"statements", out}});
        }
        if (parts.size() == 4 && req.method() == http::verb::get) {
          if (parts[3] == "events.jsonl") return reply(req, http::status::ok, manager.event_log(id), "application/x-ndjson");
          if (parts[3] == "forecasts.csv" || parts[3] == "blocks.csv") {
            std::ostringstream os;
            manager.with_session(id, [&](const Session& s) {
              parts[3] == "forecasts.csv" ? s.write_forecast_csv(os) : s.write_block_csv(os);
            });
            return reply(req, http::status::ok, os.str(), "text/csv");
          }
        }
      }
      return error_reply(req, http::status::not_found, "not found");
    } catch (const ProtocolError& e) {
      return error_reply(req, http::status::conflict, e.what());
    } catch (const InvalidArgument& e) {
      return error_reply(req, http::status::bad_request, e.what());
    } catch (const json::exception& e) {
      return error_reply(req, http::status::bad_request, e.what());
    }
  }

  // Server-initiated messages (payment statements) go to whoever is connected.
  void push(const std::string& session_id, const Outbound& o) {
    std::shared_ptr<Peer> target;
    {
      std::lock_guard lock(route_mutex);
      const auto it = routes.find({session_id, o.participant});
      if (it != routes.end()) target = it->second;
    }
    if (target) target->send(o.message);
  }
};

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& m = *impl_;
  const auto address = asio::ip::make_address(m.config.address);
  tcp::endpoint ep(address, m.config.port);
  m.acceptor.open(ep.protocol());
  m.acceptor.set_option(asio::socket_base::reuse_address(true));
  m.acceptor.bind(ep);
  m.acceptor.listen();
  m.bound_port = m.acceptor.local_endpoint().port();
  m.accept_thread = std::thread([&m] { m.accept_loop(); });
}

void Server::stop() {
  auto& m = *impl_;
  if (m.stopping.exchange(true)) return;
  if (m.accept_thread.joinable()) {
    ::shutdown(m.acceptor.native_handle(), SHUT_RDWR);
    m.accept_thread.join();
  }
  beast::error_code ec;
  m.acceptor.close(ec);
  {
    std::lock_guard lock(m.conn_mutex);
    for (auto& c : m.conns)
      if (!*c.finished) ::shutdown(c.fd, SHUT_RDWR);
  }
  for (auto& c : m.conns) c.thread.join();
  m.conns.clear();
  {
    std::lock_guard lock(m.stop_mutex);
    m.stopped = true;
  }
  m.stopped_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

std::uint16_t Server::port() const { return impl_->bound_port; }
const std::string& Server::experimenter_token() const { return impl_->config.experimenter_token; }
SessionManager& Server::sessions() { return impl_->manager; }

}  // namespace evidencelab
