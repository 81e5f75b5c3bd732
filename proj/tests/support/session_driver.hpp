#pragma once

// In-process participant harness around evidencelab::Session.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidencelab/session.hpp"

namespace driver {

using nlohmann::json;

struct Driver {
  std::vector<evidencelab::Event> events;  // declared first: start() appends to it
  evidencelab::Session session;
  std::map<int, std::vector<json>> inbox;  // -1 collects replies to anonymous requests
  std::uint64_t client_seq = 0;

  explicit Driver(const evidencelab::SessionConfig& config,
                  std::optional<std::vector<std::string>> tokens = std::nullopt)
      : session(start(config, std::move(tokens), events)) {}

  void take(const evidencelab::Session::Result& r, int requester) {
    events.insert(events.end(), r.events.begin(), r.events.end());
    for (const auto& o : r.out) inbox[o.participant < 0 ? requester : o.participant].push_back(o.message);
  }

  std::optional<int> join(const std::optional<std::string>& token = std::nullopt) {
    const auto r = session.join(token, ++client_seq);
    take(r, r.participant.value_or(-1));
    return r.participant;
  }

  void send(int p, json msg) {
    msg["seq"] = ++client_seq;
    take(session.handle(p, msg), p);
  }

  void pay() { take(session.resolve_payment(), -1); }

  std::vector<json> of_type(int p, const std::string& type) const {
    std::vector<json> out;
    const auto it = inbox.find(p);
    if (it == inbox.end()) return out;
    for (const auto& m : it->second)
      if (m.at("type") == type) out.push_back(m);
    return out;
  }

  json last(int p) const { return inbox.at(p).back(); }

  void elicit(int p, int risk_row, int ambiguity_row) {
    send(p, {{"type", "elicit_submit"}, {"list", "risk"}, {"switch_row", risk_row}});
    send(p, {{"type", "elicit_submit"}, {"list", "ambiguity"}, {"switch_row", ambiguity_row}});
  }

  // Plays the participant's current block at a stationary target, guessing
  // the revealed majority (red on a tie).
  void play_block(int p, int target) {
    const auto& params = session.config().params;
    int remaining = params.budget;
    while (remaining > 0) {
      send(p, {{"type", "flip_request"}, {"n", evidencelab::stationary_flip(target, remaining, params)}});
      const json fr = last(p);
      if (fr.at("type") != "flip_result") throw std::runtime_error("flip failed: " + fr.dump());
      const bool red = fr.at("reds").get<int>() >= fr.at("greens").get<int>();
      send(p, {{"type", "forecast_submit"}, {"guess", red ? "red" : "green"}});
      remaining = of_type(p, "forecast_result").back().at("remaining").get<int>();
    }
  }

  void ack(int p) { send(p, {{"type", "block_ack"}}); }

 private:
  static evidencelab::Session start(const evidencelab::SessionConfig& config,
                                    std::optional<std::vector<std::string>> tokens,
                                    std::vector<evidencelab::Event>& events) {
    auto [s, e] = evidencelab::Session::create(config, std::move(tokens));
    events.push_back(e);
    return std::move(s);
  }
};

inline std::vector<std::string> tokens(int count) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back("tok" + std::to_string(i));
  return out;
}

}  // namespace driver
