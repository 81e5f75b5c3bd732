#include "evidencelab/protocol.hpp"

#include <cstdio>
#include <cstdlib>

#include "evidencelab/errors.hpp"

namespace evidencelab::protocol {

using nlohmann::json;

json envelope(std::string_view type, std::string_view session, std::string_view actor, std::uint64_t seq) {
  return json{{"type", type}, {"session", session}, {"actor", actor}, {"seq", seq}};
}

json error(std::string_view session, std::uint64_t seq, std::string_view code, std::string_view message,
           std::optional<std::uint64_t> reply_to) {
  json j = envelope(kError, session, "server", seq);
  j["code"] = code;
  j["message"] = message;
  if (reply_to) j["reply_to"] = *reply_to;
  return j;
}

std::string format_money(Cents cents) {
  const long long c = cents;
  const long long a = std::llabs(c);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", c < 0 ? "-" : "", a / 100, a % 100);
  return buf;
}

json to_json(const ForecastRecord& r) {
  return json{{"flips", r.flips},     {"reds", r.reds},
              {"greens", r.greens},   {"guess", to_string(r.guess)},
              {"majority", to_string(r.majority)}, {"correct", r.correct}};
}

ForecastRecord forecast_record_from_json(const json& j) {
  ForecastRecord r;
  r.flips = j.at("flips").get<int>();
  r.reds = j.at("reds").get<int>();
  r.greens = j.at("greens").get<int>();
  r.guess = parse_color(j.at("guess").get<std::string>());
  r.majority = parse_color(j.at("majority").get<std::string>());
  r.correct = j.at("correct").get<bool>();
  return r;
}

json feedback_body(const FeedbackPacket& packet) {
  json history = json::array();
  for (const auto& r : packet.history) history.push_back(to_json(r));
  json body{{"block", packet.block},
            {"own",
             {{"member", packet.member},
              {"score", packet.score},
              {"average_flips", packet.average_flips},
              {"history", std::move(history)}}}};
  if (packet.peer_average_flips || packet.peer_scores) {
    json peers = json::object();
    if (packet.peer_average_flips) {
      json row = json::object();
      for (const auto& [id, v] : *packet.peer_average_flips) row[std::to_string(id)] = v;
      peers[std::string(kPeerStrategiesKey)] = std::move(row);
    }
    if (packet.peer_scores) {
      json row = json::object();
      for (const auto& [id, v] : *packet.peer_scores) row[std::to_string(id)] = v;
      peers[std::string(kPeerScoresKey)] = std::move(row);
    }
    body["peers"] = std::move(peers);
  }
  return body;
}

FeedbackPacket feedback_from_json(const json& body) {
  FeedbackPacket p;
  p.block = body.at("block").get<int>();
  const auto& own = body.at("own");
  p.member = own.at("member").get<int>();
  p.score = own.at("score").get<int>();
  p.average_flips = own.at("average_flips").get<double>();
  for (const auto& r : own.at("history")) p.history.push_back(forecast_record_from_json(r));
  if (body.contains("peers")) {
    const auto& peers = body.at("peers");
    if (peers.contains(std::string(kPeerStrategiesKey))) {
      std::map<int, double> m;
      for (const auto& [k, v] : peers.at(std::string(kPeerStrategiesKey)).items()) m[std::stoi(k)] = v.get<double>();
      p.peer_average_flips = std::move(m);
    }
    if (peers.contains(std::string(kPeerScoresKey))) {
      std::map<int, int> m;
      for (const auto& [k, v] : peers.at(std::string(kPeerScoresKey)).items()) m[std::stoi(k)] = v.get<int>();
      p.peer_scores = std::move(m);
    }
  }
  return p;
}

const json& require(const json& msg, std::string_view field) {
  const auto it = msg.find(field);
  if (it == msg.end() || it->is_null()) throw InvalidArgument("missing field '" + std::string(field) + "'");
  return *it;
}

std::string require_string(const json& msg, std::string_view field) {
  const auto& v = require(msg, field);
  if (!v.is_string()) throw InvalidArgument("field '" + std::string(field) + "' must be a string");
  return v.get<std::string>();
}

int require_int(const json& msg, std::string_view field) {
  const auto& v = require(msg, field);
  if (!v.is_number_integer()) throw InvalidArgument("field '" + std::string(field) + "' must be an integer");
  return v.get<int>();
}

}  // namespace evidencelab::protocol
