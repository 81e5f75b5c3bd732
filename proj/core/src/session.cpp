#include "evidencelab/session.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>

#include "evidencelab/csv.hpp"
#include "evidencelab/errors.hpp"
#include "evidencelab/protocol.hpp"
#include "evidencelab/theory.hpp"

namespace evidencelab {

using nlohmann::json;
namespace proto = protocol;

namespace {

std::string random_hex(int bytes) {
  std::random_device rd;
  std::string out;
  static constexpr char kHex[] = "0123456789abcdef";
  for (int i = 0; i < bytes; ++i) {
    const auto b = rd() & 0xff;
    out += kHex[b >> 4];
    out += kHex[b & 0xf];
  }
  return out;
}

std::string actor_for(int p) { return "p" + std::to_string(p); }

json colors_json(const Deck& deck, std::span<const int> positions) {
  json out = json::array();
  for (int i : positions) out.push_back(to_string(deck.color(i)));
  return out;
}

json member_block_json(const MemberBlockLog& m) {
  json records = json::array();
  for (const auto& r : m.records) records.push_back(proto::to_json(r));
  return json{{"member", m.member},
              {"block", m.block},
              {"scheme", to_string(m.scheme)},
              {"records", std::move(records)},
              {"score", m.score},
              {"average_flips", m.average_flips},
              {"rank", m.rank ? json(*m.rank) : json(nullptr)},
              {"payoff_cents", m.payoff},
              {"luck", m.luck},
              {"reldist", m.reldist}};
}

json outcome_json(const ElicitationOutcome& o) {
  json j{{"list", to_string(o.list)},     {"switch_row", o.switch_row}, {"safe_choices", safe_choices(o.switch_row)},
         {"guess", to_string(o.guess)},   {"row", o.row},               {"chose_sure", o.chose_sure},
         {"payoff_cents", o.payoff}};
  if (!o.chose_sure) {
    j["urn_reds"] = o.urn_reds;
    j["ball"] = to_string(o.ball);
  }
  return j;
}

}  // namespace

bool valid_session_id(std::string_view id) noexcept {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

void ElicitationSpec::validate() const {
  if (rows < 1) throw InvalidArgument("elicitation needs at least one row");
  if (sure_step <= 0) throw InvalidArgument("sure amounts must increase");
  if (prize <= 0) throw InvalidArgument("gamble prize must be positive");
  if (urn_balls < 1 || risk_reds < 0 || risk_reds > urn_balls) throw InvalidArgument("bad urn composition");
}

void SessionConfig::validate() const {
  if (!valid_session_id(session_id)) throw InvalidArgument("session id must be 1-64 characters of [A-Za-z0-9_-]");
  params.validate();
  elicitation.validate();
  if (groups < 1) throw InvalidArgument("a session needs at least one group");
  if (treatment.group_size != params.group_size || treatment.blocks != params.blocks)
    throw InvalidArgument("treatment and params disagree on group size or block count");
  if (show_up < 0) throw InvalidArgument("show-up payment must be non-negative");
}

void to_json(json& j, const SessionConfig& c) {
  j = json{{"session_id", c.session_id},
           {"treatment", c.treatment.name()},
           {"params", c.params},
           {"elicitation",
            {{"enabled", c.elicitation.enabled},
             {"rows", c.elicitation.rows},
             {"sure_step_cents", c.elicitation.sure_step},
             {"prize_cents", c.elicitation.prize},
             {"urn_balls", c.elicitation.urn_balls},
             {"risk_reds", c.elicitation.risk_reds}}},
           {"groups", c.groups},
           {"seed", c.seed},
           {"show_up_cents", c.show_up}};
}

void from_json(const json& j, SessionConfig& c) {
  c = SessionConfig{};
  c.session_id = j.value("session_id", std::string{});
  if (j.contains("params")) c.params = j.at("params").get<GameParams>();
  if (j.contains("treatment")) c.treatment = TreatmentConfig::parse(j.at("treatment").get<std::string>());
  c.treatment.blocks = c.params.blocks;
  c.treatment.group_size = c.params.group_size;
  if (j.contains("elicitation")) {
    const auto& e = j.at("elicitation");
    c.elicitation.enabled = e.value("enabled", c.elicitation.enabled);
    c.elicitation.rows = e.value("rows", c.elicitation.rows);
    c.elicitation.sure_step = e.value("sure_step_cents", c.elicitation.sure_step);
    c.elicitation.prize = e.value("prize_cents", c.elicitation.prize);
    c.elicitation.urn_balls = e.value("urn_balls", c.elicitation.urn_balls);
    c.elicitation.risk_reds = e.value("risk_reds", c.elicitation.risk_reds);
  }
  c.groups = j.value("groups", c.groups);
  c.seed = j.value("seed", c.seed);
  c.show_up = j.value("show_up_cents", c.show_up);
}

std::string_view to_string(ElicitationList l) noexcept {
  return l == ElicitationList::risk ? "risk" : "ambiguity";
}

ElicitationList parse_elicitation_list(std::string_view s) {
  if (s == "risk") return ElicitationList::risk;
  if (s == "ambiguity") return ElicitationList::ambiguity;
  throw InvalidArgument("list must be 'risk' or 'ambiguity'");
}

ElicitationOutcome resolve_elicitation(const ElicitationSpec& spec, ElicitationList list, int switch_row, Color guess,
                                       Rng& rng) {
  ElicitationOutcome o;
  o.list = list;
  o.switch_row = switch_row;
  o.guess = guess;
  o.row = uniform_int(rng, 1, spec.rows);
  o.chose_sure = o.row >= switch_row;
  if (o.chose_sure) {
    o.payoff = spec.sure_amount(o.row);
    return o;
  }
  o.urn_reds = list == ElicitationList::risk ? spec.risk_reds : uniform_int(rng, 0, spec.urn_balls);
  o.ball = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(spec.urn_balls))) < o.urn_reds
               ? Color::red
               : Color::green;
  o.payoff = o.ball == guess ? spec.prize : 0;
  return o;
}

json to_json(const PaymentStatement& s) {
  json elicitation = json::array();
  std::optional<int> ra, safe_amb;
  for (const auto& o : s.elicitation) {
    elicitation.push_back(outcome_json(o));
    (o.list == ElicitationList::risk ? ra : safe_amb) = safe_choices(o.switch_row);
  }
  json j{{"group", s.group},
         {"member", s.member},
         {"show_up_cents", s.show_up},
         {"elicitation", std::move(elicitation)},
         {"selected_block", s.selected_block},
         {"scheme", to_string(s.scheme)},
         {"score", s.score},
         {"rank", s.rank ? json(*s.rank) : json(nullptr)},
         {"forecasting_cents", s.forecasting},
         {"total_cents", s.total},
         {"total", proto::format_money(s.total)}};
  if (ra) j["RA"] = *ra;
  if (ra && safe_amb) j["AA"] = *safe_amb - *ra;
  return j;
}

std::vector<int> rank_group(std::uint64_t seed, int group, int block, std::span<const int> scores) {
  Rng rng = make_stream(seed, {stream_tag("rank"), static_cast<std::uint64_t>(group), static_cast<std::uint64_t>(block)});
  return rank_by_score(scores, rng);
}

void to_json(json& j, const Event& e) {
  j = json{{"seq", e.seq}, {"ts", e.ts_ms}, {"actor", e.actor}, {"type", e.type}, {"payload", e.payload}};
}

void from_json(const json& j, Event& e) {
  e.seq = j.at("seq").get<std::uint64_t>();
  e.ts_ms = j.value("ts", std::int64_t{0});
  e.actor = j.at("actor").get<std::string>();
  e.type = j.at("type").get<std::string>();
  e.payload = j.value("payload", json::object());
}

std::vector<Event> read_event_log(std::istream& is) {
  std::vector<Event> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<Event>());
    } catch (const json::exception& e) {
      throw InvalidArgument("event log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::lobby:
      return "lobby";
    case Phase::elicitation:
      return "elicitation";
    case Phase::playing:
      return "playing";
    case Phase::waiting:
      return "waiting";
    case Phase::feedback:
      return "feedback";
    case Phase::done:
      return "done";
  }
  return "lobby";
}

// ---- Session: construction and replay ----

std::pair<Session, Event> Session::create(const SessionConfig& config, std::optional<std::vector<std::string>> tokens) {
  config.validate();
  std::vector<std::string> t;
  if (tokens) {
    t = std::move(*tokens);
    if (static_cast<int>(t.size()) != config.capacity()) throw InvalidArgument("one token per seat required");
  } else {
    for (int i = 0; i < config.capacity(); ++i) t.push_back(random_hex(16));
  }
  Session s;
  Event e = s.make_event("experimenter", "created", json{{"config", config}, {"tokens", t}});
  s.apply(e);
  return {std::move(s), std::move(e)};
}

Session Session::replay(std::span<const Event> events) {
  if (events.empty() || events.front().type != "created") throw InvalidArgument("event log must start with 'created'");
  Session s;
  for (const auto& e : events) s.apply(e);
  return s;
}

Event Session::make_event(std::string actor, std::string type, json payload) const {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  return Event{next_seq_, std::chrono::duration_cast<std::chrono::milliseconds>(now).count(), std::move(actor),
               std::move(type), std::move(payload)};
}

Session::Result Session::commit(Event e) {
  Result r;
  r.out = apply(e);
  r.events.push_back(std::move(e));
  return r;
}

std::vector<Outbound> Session::apply(const Event& e) {
  if (e.seq != next_seq_)
    throw InvalidArgument("event sequence gap: expected " + std::to_string(next_seq_) + ", got " + std::to_string(e.seq));
  const auto& pl = e.payload;
  auto participant = [&] {
    const int p = pl.at("participant").get<int>();
    if (p < 0 || p >= static_cast<int>(participants_.size())) throw InvalidArgument("event names an unknown seat");
    return p;
  };
  if (e.type == "created") {
    if (next_seq_ != 1) throw InvalidArgument("'created' must be the first event");
    config_ = pl.at("config").get<SessionConfig>();
    config_.validate();
    tokens_ = pl.at("tokens").get<std::vector<std::string>>();
    if (static_cast<int>(tokens_.size()) != config_.capacity()) throw InvalidArgument("token count mismatch");
    participants_.assign(tokens_.size(), Participant{});
    for (std::size_t i = 0; i < tokens_.size(); ++i) participants_[i].token = tokens_[i];
    ++next_seq_;
    return {};
  }
  ++next_seq_;
  if (e.type == "joined") return apply_join(participant());
  if (e.type == "elicitation_submitted")
    return apply_elicit(participant(), parse_elicitation_list(pl.at("list").get<std::string>()),
                        pl.at("switch_row").get<int>(), parse_color(pl.value("guess", std::string("red"))));
  if (e.type == "flip") return apply_flip(participant(), pl.at("n").get<int>());
  if (e.type == "forecast") return apply_forecast(participant(), parse_color(pl.at("guess").get<std::string>()));
  if (e.type == "block_ack") return apply_ack(participant());
  if (e.type == "payment_resolved") return apply_payment();
  throw InvalidArgument("unknown event type '" + e.type + "'");
}

// ---- messages ----

json Session::message(std::string_view type) const { return proto::envelope(type, id(), "server", last_seq()); }

json Session::error(std::string_view code, std::string_view text, std::uint64_t reply_to) const {
  return proto::error(id(), last_seq(), code, text, reply_to);
}

json Session::config_message(int p, bool with_token) const {
  const auto& P = participants_[static_cast<std::size_t>(p)];
  const auto& params = config_.params;
  json m = message(proto::kConfig);
  m["participant"] = P.group >= 0 ? json{{"group", P.group + 1}, {"member", P.member}}
                                  : json{{"group", nullptr}, {"member", nullptr}};
  if (with_token) m["token"] = P.token;
  m["phase"] = to_string(P.phase);
  m["treatment"] = {{"name", config_.treatment.name()},
                    {"rewards", to_string(config_.treatment.rewards)},
                    {"feedback", to_string(config_.treatment.feedback)}};
  m["params"] = {{"M", params.cards},
                 {"N", params.budget},
                 {"n_min", params.min_flips},
                 {"n_max", params.max_flips},
                 {"blocks", params.blocks},
                 {"group_size", params.group_size}};

  json rows = json::array();
  for (int r = 1; r <= config_.elicitation.rows; ++r)
    rows.push_back({{"row", r},
                    {"sure_cents", config_.elicitation.sure_amount(r)},
                    {"sure", proto::format_money(config_.elicitation.sure_amount(r))}});
  json el{{"enabled", config_.elicitation.enabled},
          {"rows", std::move(rows)},
          {"prize_cents", config_.elicitation.prize},
          {"risk_switch_row", P.switch_risk ? json(*P.switch_risk) : json(nullptr)},
          {"ambiguity_switch_row", P.switch_ambiguity ? json(*P.switch_ambiguity) : json(nullptr)}};
  if (P.switch_risk) el["RA"] = safe_choices(*P.switch_risk, config_.elicitation.rows);
  if (P.switch_risk && P.switch_ambiguity)
    el["AA"] = safe_choices(*P.switch_ambiguity, config_.elicitation.rows) -
               safe_choices(*P.switch_risk, config_.elicitation.rows);
  m["elicitation"] = std::move(el);

  m["block"] = P.block;
  m["period"] = P.period + (P.phase == Phase::playing ? 1 : 0);
  m["remaining"] = P.state.remaining;
  m["score"] = P.state.score;
  m["forecasts"] = P.state.forecasts();
  if (P.block > 0) {
    const auto scheme = config_.treatment.scheme_for_block(P.block);
    m["pay"] = {{"scheme", to_string(scheme)},
                {"piece_rate_cents", params.piece_rate},
                {"prize_rates_cents", params.prize_rates}};
  }

  std::string awaiting = "none";
  json legal = json::array();
  switch (P.phase) {
    case Phase::lobby:
      awaiting = P.joined ? "group" : "join";
      break;
    case Phase::elicitation:
      awaiting = "elicitation";
      break;
    case Phase::playing:
      if (P.pending) {
        awaiting = "forecast";
        m["pending"] = {{"n", P.pending->positions.size()},
                        {"positions", P.pending->positions},
                        {"colors", colors_json(*P.deck, P.pending->positions)},
                        {"reds", P.pending->reds},
                        {"greens", P.pending->greens}};
      } else {
        awaiting = "flip";
        legal = legal_flip_choices(P.state.remaining, params);
      }
      break;
    case Phase::waiting:
      awaiting = "group";
      break;
    case Phase::feedback:
      awaiting = P.acked ? "group" : "ack";
      break;
    case Phase::done:
      awaiting = paid_ ? "none" : "payment";
      break;
  }
  m["awaiting"] = awaiting;
  m["legal"] = std::move(legal);
  return m;
}

FeedbackPacket Session::packet_for(int p, int block) const {
  const auto& P = participants_[static_cast<std::size_t>(p)];
  const auto& g = groups_[static_cast<std::size_t>(P.group)];
  std::vector<BlockState> states;
  for (int q : g.members) {
    const auto& b = participants_[static_cast<std::size_t>(q)].blocks.at(static_cast<std::size_t>(block - 1));
    states.push_back(BlockState{0, b.score, b.records});
  }
  return make_feedback_packets(config_.treatment, block, states).at(static_cast<std::size_t>(P.member - 1));
}

std::vector<Outbound> Session::resume(int p) const {
  std::vector<Outbound> out{{p, config_message(p, true)}};
  const auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.phase == Phase::feedback && !P.acked) {
    json m = message(proto::kBlockFeedback);
    m.update(proto::feedback_body(packet_for(p, P.block)));
    out.push_back({p, std::move(m)});
  }
  if (P.statement) {
    json m = message(proto::kPaymentStatement);
    m["statement"] = to_json(*P.statement);
    out.push_back({p, std::move(m)});
  }
  return out;
}

// ---- commands ----

Session::Result Session::join(const std::optional<std::string>& token, std::uint64_t reply_to) {
  Result r;
  int p = -1;
  if (token) {
    const auto found = participant_for_token(*token);
    if (!found) {
      r.out.push_back({-1, error(proto::code::unknown_token, "unknown join token", reply_to)});
      return r;
    }
    p = *found;
    if (participants_[static_cast<std::size_t>(p)].joined) {
      r.participant = p;
      r.out = resume(p);
      return r;
    }
  } else {
    for (std::size_t i = 0; i < participants_.size(); ++i)
      if (!participants_[i].joined) {
        p = static_cast<int>(i);
        break;
      }
    if (p < 0) {
      r.out.push_back({-1, error(proto::code::waitlist_rejected, "session is full", reply_to)});
      return r;
    }
  }
  r = commit(make_event(actor_for(p), "joined", json{{"participant", p}}));
  r.participant = p;
  return r;
}

Session::Result Session::handle(int p, const json& msg) {
  std::uint64_t reply_to = 0;
  if (msg.is_object() && msg.contains("seq") && msg["seq"].is_number_unsigned()) reply_to = msg["seq"].get<std::uint64_t>();
  auto fail = [&](std::string_view code, std::string_view text) {
    Result r;
    r.out.push_back({p, error(code, text, reply_to)});
    return r;
  };
  if (p < 0 || p >= static_cast<int>(participants_.size()) || !participants_[static_cast<std::size_t>(p)].joined)
    return fail(proto::code::not_joined, "join the session first");
  const auto& P = participants_[static_cast<std::size_t>(p)];

  try {
    const auto type = proto::require_string(msg, "type");
    if (type == proto::kElicitSubmit) {
      if (P.phase != Phase::elicitation) return fail(proto::code::protocol_order, "elicitation is not open");
      const auto list = parse_elicitation_list(proto::require_string(msg, "list"));
      const int row = proto::require_int(msg, "switch_row");
      if (row < 1 || row > config_.elicitation.rows + 1)
        return fail(proto::code::invalid, "switch_row must be in 1.." + std::to_string(config_.elicitation.rows + 1));
      if ((list == ElicitationList::risk ? P.switch_risk : P.switch_ambiguity).has_value())
        return fail(proto::code::duplicate_submission, "this list was already submitted");
      const Color guess = msg.contains("guess") ? parse_color(proto::require_string(msg, "guess")) : Color::red;
      return commit(make_event(actor_for(p), "elicitation_submitted",
                               json{{"participant", p},
                                    {"list", to_string(list)},
                                    {"switch_row", row},
                                    {"guess", to_string(guess)}}));
    }
    if (type == proto::kFlipRequest) {
      if (P.phase != Phase::playing) {
        if (P.phase == Phase::waiting || P.phase == Phase::feedback || P.phase == Phase::done)
          throw BlockComplete();
        return fail(proto::code::protocol_order, "no block in progress");
      }
      if (P.pending) return fail(proto::code::protocol_order, "cards already flipped this period; submit a forecast");
      const int n = proto::require_int(msg, "n");
      if (!is_legal_flip(n, P.state.remaining, config_.params))
        throw IllegalFlip(n, legal_flip_choices(P.state.remaining, config_.params));
      return commit(make_event(actor_for(p), "flip", json{{"participant", p}, {"n", n}}));
    }
    if (type == proto::kForecastSubmit) {
      if (P.phase != Phase::playing || !P.pending)
        return fail(proto::code::protocol_order, "forecast before flipping cards");
      const Color guess = parse_color(proto::require_string(msg, "guess"));
      return commit(make_event(actor_for(p), "forecast", json{{"participant", p}, {"guess", to_string(guess)}}));
    }
    if (type == proto::kBlockAck) {
      if (P.phase != Phase::feedback || P.acked) return fail(proto::code::protocol_order, "nothing to acknowledge");
      return commit(make_event(actor_for(p), "block_ack", json{{"participant", p}}));
    }
    if (type == proto::kJoin) return fail(proto::code::protocol_order, "already joined");
    return fail(proto::code::invalid, "unknown message type '" + type + "'");
  } catch (const IllegalFlip& e) {
    auto r = fail(proto::code::illegal_flip, e.what());
    r.out.back().message["legal"] = e.legal();
    r.out.back().message["requested"] = e.requested();
    return r;
  } catch (const BlockComplete& e) {
    return fail(proto::code::block_complete, e.what());
  } catch (const ProtocolError& e) {
    return fail(proto::code::protocol_order, e.what());
  } catch (const InvalidArgument& e) {
    return fail(proto::code::invalid, e.what());
  } catch (const json::exception& e) {
    return fail(proto::code::invalid, e.what());
  }
}

Session::Result Session::resolve_payment() {
  if (paid_) throw ProtocolError("payment already resolved");
  if (groups_.empty()) throw ProtocolError("no group has formed");
  if (!finished()) throw ProtocolError("not every group has finished its blocks");
  return commit(make_event("experimenter", "payment_resolved", json::object()));
}

// ---- state transitions ----

std::vector<Outbound> Session::apply_join(int p) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.joined) throw InvalidArgument("seat joined twice");
  P.joined = true;
  P.join_order = joined_++;
  join_queue_.push_back(p);

  std::vector<int> formed;
  if (static_cast<int>(join_queue_.size()) == config_.params.group_size) {
    const int g = static_cast<int>(groups_.size());
    Rng rng = make_stream(config_.seed, {stream_tag("group"), static_cast<std::uint64_t>(g)});
    std::vector<int> seats = join_queue_;
    for (std::size_t i = seats.size(); i > 1; --i) std::swap(seats[i - 1], seats[uniform_below(rng, i)]);
    Group group;
    group.members = seats;
    group.block = 1;
    groups_.push_back(std::move(group));
    for (std::size_t i = 0; i < seats.size(); ++i) {
      auto& Q = participants_[static_cast<std::size_t>(seats[i])];
      Q.group = g;
      Q.member = static_cast<int>(i) + 1;
      if (config_.elicitation.enabled)
        Q.phase = Phase::elicitation;
      else
        start_block(seats[i], 1);
    }
    formed = join_queue_;
    join_queue_.clear();
  }

  std::vector<Outbound> out{{p, config_message(p, true)}};
  for (int q : formed)
    if (q != p) out.push_back({q, config_message(q, false)});
  return out;
}

std::vector<Outbound> Session::apply_elicit(int p, ElicitationList list, int row, Color guess) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.phase != Phase::elicitation) throw ProtocolError("elicitation is not open");
  auto& slot = list == ElicitationList::risk ? P.switch_risk : P.switch_ambiguity;
  if (slot) throw ProtocolError("list already submitted");
  slot = row;
  (list == ElicitationList::risk ? P.guess_risk : P.guess_ambiguity) = guess;
  if (P.switch_risk && P.switch_ambiguity) start_block(p, 1);
  return {{p, config_message(p, false)}};
}

void Session::start_block(int p, int block) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  P.block = block;
  P.period = 0;
  P.state = BlockState::start(config_.params);
  P.deck.reset();
  P.pending.reset();
  P.acked = false;
  P.phase = Phase::playing;
}

std::vector<Outbound> Session::apply_flip(int p, int n) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.phase != Phase::playing) throw ProtocolError("no block in progress");
  if (P.pending) throw ProtocolError("cards already flipped this period");
  Rng rng = make_stream(config_.seed, {stream_tag("deck"), static_cast<std::uint64_t>(P.group),
                                       static_cast<std::uint64_t>(P.member), static_cast<std::uint64_t>(P.block),
                                       static_cast<std::uint64_t>(P.period + 1)});
  Deck deck = Deck::deal(config_.params.cards, rng);
  auto fr = flip(P.state, deck, n, config_.params, rng);
  P.deck = deck;

  json m = message(proto::kFlipResult);
  m["block"] = P.block;
  m["period"] = P.period + 1;
  m["n"] = n;
  m["positions"] = fr.positions;
  m["colors"] = colors_json(deck, fr.positions);
  m["reds"] = fr.reds;
  m["greens"] = fr.greens;
  m["remaining"] = P.state.remaining - n;
  P.pending = std::move(fr);
  return {{p, std::move(m)}};
}

std::vector<Outbound> Session::apply_forecast(int p, Color guess) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.phase != Phase::playing || !P.pending || !P.deck) throw ProtocolError("forecast before flipping cards");
  const auto rec = submit_forecast(P.state, *P.deck, guess);
  ++P.period;

  json m = message(proto::kForecastResult);
  m["block"] = P.block;
  m["period"] = P.period;
  m["guess"] = to_string(rec.guess);
  m["majority"] = to_string(rec.majority);
  m["correct"] = rec.correct;
  json deck = json::array();
  for (int i = 0; i < P.deck->size(); ++i) deck.push_back(to_string(P.deck->color(i)));
  m["deck"] = std::move(deck);
  m["score"] = P.state.score;
  m["remaining"] = P.state.remaining;
  m["forecasts"] = P.state.forecasts();
  m["legal"] = P.state.complete() ? json::array() : json(legal_flip_choices(P.state.remaining, config_.params));
  m["block_complete"] = P.state.complete();
  P.deck.reset();
  P.pending.reset();

  std::vector<Outbound> out{{p, std::move(m)}};
  if (!P.state.complete()) return out;

  MemberBlockLog entry;
  entry.member = P.member;
  entry.block = P.block;
  entry.scheme = config_.treatment.scheme_for_block(P.block);
  entry.records = P.state.records;
  entry.score = P.state.score;
  entry.average_flips = P.state.average_flips();
  entry.luck = luck(entry.records, entry.score, config_.params.cards);
  P.blocks.push_back(std::move(entry));
  P.phase = Phase::waiting;

  const auto& g = groups_[static_cast<std::size_t>(P.group)];
  const bool all_done = std::all_of(g.members.begin(), g.members.end(), [&](int q) {
    return participants_[static_cast<std::size_t>(q)].phase == Phase::waiting;
  });
  if (!all_done) {
    out.push_back({p, config_message(p, false)});
    return out;
  }
  auto more = end_block(P.group);
  out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  return out;
}

std::vector<Outbound> Session::end_block(int gi) {
  auto& g = groups_[static_cast<std::size_t>(gi)];
  const int b = g.block;
  const auto scheme = config_.treatment.scheme_for_block(b);
  std::vector<int> scores, forecasts;
  for (int q : g.members) {
    const auto& e = participants_[static_cast<std::size_t>(q)].blocks.at(static_cast<std::size_t>(b - 1));
    scores.push_back(e.score);
    forecasts.push_back(static_cast<int>(e.records.size()));
  }
  std::vector<int> ranks;
  if (scheme == RewardScheme::competitive) ranks = rank_group(config_.seed, gi, b, scores);
  const auto metrics = group_metrics(scores, forecasts);
  for (std::size_t i = 0; i < g.members.size(); ++i) {
    auto& e = participants_[static_cast<std::size_t>(g.members[i])].blocks.at(static_cast<std::size_t>(b - 1));
    if (!ranks.empty()) e.rank = ranks[i];
    e.payoff = block_payoff(e.score, scheme, e.rank, config_.params);
    e.reldist = metrics.reldist[i];
  }
  g.metrics.push_back({b, metrics.spearman, metrics.flip_sd});

  std::vector<Outbound> out;
  if (b < config_.params.blocks) {
    for (int q : g.members) {
      auto& Q = participants_[static_cast<std::size_t>(q)];
      Q.phase = Phase::feedback;
      Q.acked = false;
    }
    for (int q : g.members) {
      json m = message(proto::kBlockFeedback);
      m.update(proto::feedback_body(packet_for(q, b)));
      out.push_back({q, std::move(m)});
    }
  } else {
    g.done = true;
    for (int q : g.members) participants_[static_cast<std::size_t>(q)].phase = Phase::done;
    for (int q : g.members) out.push_back({q, config_message(q, false)});
  }
  return out;
}

std::vector<Outbound> Session::apply_ack(int p) {
  auto& P = participants_[static_cast<std::size_t>(p)];
  if (P.phase != Phase::feedback || P.acked) throw ProtocolError("nothing to acknowledge");
  P.acked = true;
  auto& g = groups_[static_cast<std::size_t>(P.group)];
  const bool all = std::all_of(g.members.begin(), g.members.end(),
                               [&](int q) { return participants_[static_cast<std::size_t>(q)].acked; });
  if (!all) return {{p, config_message(p, false)}};

  ++g.block;
  std::vector<Outbound> out;
  const bool notice = g.block == 2 && config_.treatment.rewards == RewardScheme::competitive;
  for (int q : g.members) {
    start_block(q, g.block);
    json m = config_message(q, false);
    if (notice) m["notice"] = proto::kCompetitiveNotice;
    out.push_back({q, std::move(m)});
  }
  return out;
}

std::vector<Outbound> Session::apply_payment() {
  if (paid_) throw ProtocolError("payment already resolved");
  Rng select = make_stream(config_.seed, {stream_tag("select")});
  selected_block_ = uniform_int(select, 1, config_.params.blocks);
  paid_ = true;
  std::vector<Outbound> out;
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    auto& P = participants_[i];
    if (P.group < 0) continue;
    PaymentStatement s;
    s.participant = static_cast<int>(i);
    s.group = P.group + 1;
    s.member = P.member;
    s.show_up = config_.show_up;
    if (config_.elicitation.enabled) {
      for (auto list : {ElicitationList::risk, ElicitationList::ambiguity}) {
        Rng rng = make_stream(config_.seed, {stream_tag("elicit"), i, static_cast<std::uint64_t>(list)});
        const bool risk = list == ElicitationList::risk;
        s.elicitation.push_back(resolve_elicitation(config_.elicitation, list,
                                                    risk ? *P.switch_risk : *P.switch_ambiguity,
                                                    risk ? P.guess_risk : P.guess_ambiguity, rng));
      }
    }
    const auto& b = P.blocks.at(static_cast<std::size_t>(selected_block_ - 1));
    s.selected_block = selected_block_;
    s.scheme = b.scheme;
    s.score = b.score;
    s.rank = b.rank;
    s.forecasting = b.payoff;
    s.total = s.show_up + s.forecasting;
    for (const auto& o : s.elicitation) s.total += o.payoff;
    P.statement = s;

    json m = message(proto::kPaymentStatement);
    m["statement"] = to_json(s);
    out.push_back({static_cast<int>(i), std::move(m)});
  }
  return out;
}

// ---- queries ----

bool Session::finished() const {
  return !groups_.empty() && std::all_of(groups_.begin(), groups_.end(), [](const Group& g) { return g.done; });
}

std::optional<int> Session::participant_for_token(const std::string& token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == token) return static_cast<int>(i);
  return std::nullopt;
}

Phase Session::phase(int p) const { return participants_.at(static_cast<std::size_t>(p)).phase; }

std::vector<PaymentStatement> Session::statements() const {
  std::vector<PaymentStatement> out;
  for (const auto& P : participants_)
    if (P.statement) out.push_back(*P.statement);
  return out;
}

json Session::snapshot() const {
  json parts = json::array();
  for (const auto& P : participants_) {
    json blocks = json::array();
    for (const auto& b : P.blocks) blocks.push_back(member_block_json(b));
    json current = json::array();
    for (const auto& r : P.state.records) current.push_back(proto::to_json(r));
    json j{{"token", P.token},
           {"joined", P.joined},
           {"join_order", P.join_order},
           {"group", P.group},
           {"member", P.member},
           {"phase", to_string(P.phase)},
           {"switch_risk", P.switch_risk ? json(*P.switch_risk) : json(nullptr)},
           {"switch_ambiguity", P.switch_ambiguity ? json(*P.switch_ambiguity) : json(nullptr)},
           {"guess_risk", to_string(P.guess_risk)},
           {"guess_ambiguity", to_string(P.guess_ambiguity)},
           {"block", P.block},
           {"period", P.period},
           {"remaining", P.state.remaining},
           {"score", P.state.score},
           {"current", std::move(current)},
           {"blocks", std::move(blocks)},
           {"acked", P.acked}};
    if (P.deck) j["deck"] = {{"red_bits", P.deck->colors()}, {"revealed", P.deck->revealed()}};
    if (P.pending) j["pending"] = P.pending->positions;
    if (P.statement) j["statement"] = to_json(*P.statement);
    parts.push_back(std::move(j));
  }
  json groups = json::array();
  for (const auto& g : groups_) {
    json metrics = json::array();
    for (const auto& m : g.metrics)
      metrics.push_back({{"block", m.block}, {"spearman", csv::number(m.spearman)}, {"flip_sd", m.flip_sd}});
    groups.push_back({{"members", g.members}, {"block", g.block}, {"done", g.done}, {"metrics", std::move(metrics)}});
  }
  return json{{"config", config_},        {"tokens", tokens_},         {"participants", std::move(parts)},
              {"groups", std::move(groups)}, {"join_queue", join_queue_}, {"joined", joined_},
              {"selected_block", selected_block_}, {"paid", paid_},     {"last_seq", last_seq()}};
}

std::uint64_t Session::state_hash() const { return fnv1a(snapshot().dump()); }

json Session::progress() const {
  json groups = json::array();
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    json members = json::array();
    for (std::size_t i = 0; i < groups_[g].members.size(); ++i) {
      const auto& P = participants_[static_cast<std::size_t>(groups_[g].members[i])];
      members.push_back({{"member", i + 1},
                         {"phase", to_string(P.phase)},
                         {"block", P.block},
                         {"blocks_completed", P.blocks.size()},
                         {"remaining", P.state.remaining}});
    }
    groups.push_back({{"group", g + 1},
                      {"block", groups_[g].block},
                      {"blocks_completed", groups_[g].metrics.size()},
                      {"done", groups_[g].done},
                      {"members", std::move(members)}});
  }
  return json{{"session", id()},
              {"treatment", config_.treatment.name()},
              {"capacity", config_.capacity()},
              {"joined", joined_},
              {"waiting_for_group", join_queue_.size()},
              {"groups", std::move(groups)},
              {"finished", finished()},
              {"paid", paid_},
              {"selected_block", paid_ ? json(selected_block_) : json(nullptr)},
              {"last_seq", last_seq()}};
}

std::vector<SessionLog> Session::group_logs(bool include_current) const {
  std::vector<SessionLog> out;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const auto& g = groups_[gi];
    SessionLog log;
    log.session_id = id();
    log.treatment = config_.treatment;
    log.seed = config_.seed;
    log.group = static_cast<int>(gi) + 1;
    log.policies.assign(g.members.size(), "human");
    log.groups = g.metrics;
    log.selected_block = paid_ ? selected_block_ : 0;
    const int completed = static_cast<int>(g.metrics.size());
    for (int b = 1; b <= config_.params.blocks; ++b) {
      for (int q : g.members) {
        const auto& P = participants_[static_cast<std::size_t>(q)];
        if (b <= static_cast<int>(P.blocks.size()) && (b <= completed || include_current)) {
          log.members.push_back(P.blocks[static_cast<std::size_t>(b - 1)]);
        } else if (include_current && P.block == b && P.phase == Phase::playing && !P.state.records.empty()) {
          MemberBlockLog partial;
          partial.member = P.member;
          partial.block = b;
          partial.scheme = config_.treatment.scheme_for_block(b);
          partial.records = P.state.records;
          partial.score = P.state.score;
          log.members.push_back(std::move(partial));
        }
      }
    }
    if (paid_)
      for (int q : g.members) log.payments.push_back(participants_[static_cast<std::size_t>(q)].statement->forecasting);
    out.push_back(std::move(log));
  }
  return out;
}

void Session::write_forecast_csv(std::ostream& os) const {
  write_forecast_csv_header(os);
  for (const auto& log : group_logs(true)) write_forecast_csv_rows(os, log);
}

void Session::write_block_csv(std::ostream& os) const {
  write_block_csv_header(os);
  for (const auto& log : group_logs(false)) write_block_csv_rows(os, log);
}

// ---- SessionManager ----

SessionManager::SessionManager(std::filesystem::path log_dir) : log_dir_(std::move(log_dir)) {
  if (log_dir_.empty()) return;
  std::filesystem::create_directories(log_dir_);
  for (const auto& entry : std::filesystem::directory_iterator(log_dir_)) {
    if (entry.path().extension() != ".jsonl") continue;
    std::ifstream in(entry.path());
    if (!in) throw Error("cannot read " + entry.path().string());
    auto events = read_event_log(in);
    if (events.empty()) continue;
    auto slot = std::make_shared<Slot>();
    slot->session = std::make_unique<Session>(Session::replay(events));
    slot->events = std::move(events);
    slots_[slot->session->id()] = std::move(slot);
  }
}

SessionManager::Created SessionManager::create(SessionConfig config) {
  std::lock_guard lock(mutex_);
  if (config.session_id.empty()) {
    do config.session_id = "s" + random_hex(4);
    while (slots_.count(config.session_id));
  }
  if (slots_.count(config.session_id)) throw InvalidArgument("duplicate session id '" + config.session_id + "'");
  auto [session, event] = Session::create(config);
  auto slot = std::make_shared<Slot>();
  slot->session = std::make_unique<Session>(std::move(session));
  persist(*slot, {event});
  Created c{slot->session->id(), slot->session->tokens()};
  slots_[c.session_id] = std::move(slot);
  return c;
}

std::shared_ptr<SessionManager::Slot> SessionManager::slot(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = slots_.find(session_id);
  if (it == slots_.end()) throw InvalidArgument("unknown session '" + session_id + "'");
  return it->second;
}

void SessionManager::persist(Slot& slot, const std::vector<Event>& events) {
  if (events.empty()) return;
  if (!log_dir_.empty()) {
    const auto path = log_dir_ / (slot.session->id() + ".jsonl");
    std::ofstream out(path, std::ios::app);
    for (const auto& e : events) out << json(e).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to " + path.string());
  }
  slot.events.insert(slot.events.end(), events.begin(), events.end());
}

std::optional<int> SessionManager::join(const std::string& session_id, const std::optional<std::string>& token,
                                        std::uint64_t reply_to, const std::function<void(int)>& bind,
                                        const Deliver& deliver) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  auto r = s->session->join(token, reply_to);
  persist(*s, r.events);
  if (r.participant && bind) bind(*r.participant);
  for (const auto& o : r.out) deliver(o);
  return r.participant;
}

void SessionManager::handle(const std::string& session_id, int participant, const json& message,
                            const Deliver& deliver) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  auto r = s->session->handle(participant, message);
  persist(*s, r.events);
  for (const auto& o : r.out) deliver(o);
}

std::vector<PaymentStatement> SessionManager::resolve_payment(const std::string& session_id, const Deliver& deliver) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  auto r = s->session->resolve_payment();
  persist(*s, r.events);
  for (const auto& o : r.out) deliver(o);
  return s->session->statements();
}

std::vector<std::string> SessionManager::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : slots_) out.push_back(id);
  return out;
}

bool SessionManager::contains(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return slots_.count(session_id) != 0;
}

void SessionManager::with_session(const std::string& session_id, const std::function<void(const Session&)>& fn) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  fn(*s->session);
}

std::string SessionManager::event_log(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  std::string out;
  for (const auto& e : s->events) out += json(e).dump() + '\n';
  return out;
}

}  // namespace evidencelab
