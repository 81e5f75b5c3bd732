#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "evidencelab/protocol.hpp"
#include "evidencelab/session.hpp"
#include "session_driver.hpp"

using namespace evidencelab;
using driver::Driver;
using nlohmann::json;

namespace {

SessionConfig config(const std::string& treatment, int groups = 1, bool elicitation = true) {
  SessionConfig c;
  c.session_id = "t1";
  c.treatment = TreatmentConfig::parse(treatment);
  c.groups = groups;
  c.seed = 99;
  c.elicitation.enabled = elicitation;
  return c;
}

// Joins everyone, submits elicitation and returns participant indices.
std::vector<int> fill(Driver& d, int count) {
  std::vector<int> ps;
  for (int i = 0; i < count; ++i) ps.push_back(*d.join());
  if (d.session.config().elicitation.enabled)
    for (int p : ps) d.elicit(p, 13, 15);
  return ps;
}

void play_all(Driver& d, const std::vector<int>& ps, int target = 5) {
  const int blocks = d.session.config().params.blocks;
  for (int b = 1; b <= blocks; ++b) {
    for (int p : ps) d.play_block(p, target);
    if (b < blocks)
      for (int p : ps) d.ack(p);
  }
}

}  // namespace

TEST(SessionConfigJson, RoundTrip) {
  auto c = config("competitive/scores", 2);
  c.show_up = 700;
  const json j = c;
  const auto back = j.get<SessionConfig>();
  EXPECT_EQ(json(back), j);
  EXPECT_EQ(back.capacity(), 10);
  auto bad = c;
  bad.groups = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Lobby, TenJoinersFormTwoGroups) {
  Driver d(config("noncompetitive/none", 2));
  std::set<std::pair<int, int>> seats;
  std::vector<int> ps;
  for (int i = 0; i < 10; ++i) ps.push_back(*d.join());
  for (int p : ps) {
    const auto cfgs = d.of_type(p, "config");
    ASSERT_FALSE(cfgs.empty());
    const auto& c = cfgs.back();
    EXPECT_EQ(c.at("phase"), "elicitation");
    seats.insert({c.at("participant").at("group").get<int>(), c.at("participant").at("member").get<int>()});
  }
  EXPECT_EQ(seats.size(), 10u);
  EXPECT_EQ(seats.begin()->first, 1);
  EXPECT_EQ(seats.rbegin()->first, 2);
  EXPECT_FALSE(d.join().has_value());
  EXPECT_EQ(d.inbox.at(-1).back().at("code"), "waitlist_rejected");
}

TEST(Lobby, GroupingIsDeterministic) {
  auto seats = [] {
    Driver d(config("noncompetitive/none", 2), driver::tokens(10));
    std::vector<json> out;
    for (int i = 0; i < 10; ++i) {
      const int p = *d.join();
      (void)p;
    }
    for (int p = 0; p < 10; ++p) out.push_back(d.of_type(p, "config").back().at("participant"));
    return out;
  };
  EXPECT_EQ(seats(), seats());
}

TEST(Lobby, TokensReconnect) {
  Driver d(config("noncompetitive/none"), driver::tokens(5));
  EXPECT_EQ(d.join("tok3"), 3);
  EXPECT_FALSE(d.join("nope").has_value());
  EXPECT_EQ(d.inbox.at(-1).back().at("code"), "unknown_token");
  EXPECT_EQ(d.join("tok3"), 3);
  EXPECT_EQ(d.last(3).at("type"), "config");
  EXPECT_EQ(d.last(3).at("token"), "tok3");
  EXPECT_EQ(d.session.participant_for_token("tok3"), 3);
}

TEST(Elicitation, RowsAndSwitchRows) {
  Driver d(config("noncompetitive/none"));
  const auto ps = fill(d, 5);
  const auto c = d.of_type(ps[0], "config").front();
  const auto& rows = c.at("elicitation").at("rows");
  ASSERT_EQ(rows.size(), 20u);
  EXPECT_EQ(rows[6].at("sure"), "0.70");
  EXPECT_EQ(rows[6].at("sure_cents"), 70);
  const auto after = d.of_type(ps[0], "config").back();
  EXPECT_EQ(after.at("elicitation").at("RA"), 8);
  EXPECT_EQ(after.at("elicitation").at("AA"), -2);
  EXPECT_EQ(after.at("phase"), "playing");
  EXPECT_EQ(after.at("block"), 1);
  EXPECT_EQ(safe_choices(21), 0);
  EXPECT_EQ(safe_choices(1), 20);
}

TEST(Elicitation, RejectsDuplicatesAndBadRows) {
  Driver d(config("noncompetitive/none"));
  const int p = *d.join();
  d.send(p, {{"type", "elicit_submit"}, {"list", "risk"}, {"switch_row", 5}});
  EXPECT_EQ(d.last(p).at("code"), "protocol_order");
  for (int i = 0; i < 4; ++i) d.join();
  d.send(p, {{"type", "elicit_submit"}, {"list", "risk"}, {"switch_row", 22}});
  EXPECT_EQ(d.last(p).at("code"), "invalid");
  d.send(p, {{"type", "elicit_submit"}, {"list", "risk"}, {"switch_row", 21}});
  d.send(p, {{"type", "elicit_submit"}, {"list", "risk"}, {"switch_row", 4}});
  EXPECT_EQ(d.last(p).at("code"), "duplicate_submission");
  EXPECT_EQ(d.last(p).at("reply_to"), d.client_seq);
}

TEST(Elicitation, ResolutionRules) {
  const ElicitationSpec spec;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto sure = resolve_elicitation(spec, ElicitationList::risk, 1, Color::red, rng);
    EXPECT_TRUE(sure.chose_sure);
    EXPECT_EQ(sure.payoff, spec.sure_amount(sure.row));
    const auto urn = resolve_elicitation(spec, ElicitationList::ambiguity, 21, Color::green, rng);
    EXPECT_FALSE(urn.chose_sure);
    EXPECT_GE(urn.urn_reds, 0);
    EXPECT_LE(urn.urn_reds, 20);
    EXPECT_EQ(urn.payoff, urn.ball == Color::green ? spec.prize : 0);
  }
  const auto risk = resolve_elicitation(spec, ElicitationList::risk, 21, Color::red, rng);
  EXPECT_EQ(risk.urn_reds, 10);
}

TEST(Play, FlipLegalityAndOrder) {
  Driver d(config("noncompetitive/none", 1, false));
  const auto ps = fill(d, 5);
  const int p = ps[0];
  d.send(p, {{"type", "forecast_submit"}, {"guess", "red"}});
  EXPECT_EQ(d.last(p).at("code"), "protocol_order");
  d.send(p, {{"type", "flip_request"}, {"n", 4}});
  EXPECT_EQ(d.last(p).at("code"), "illegal_flip");
  EXPECT_EQ(d.last(p).at("requested"), 4);
  EXPECT_EQ(d.last(p).at("legal"), json::array({5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}));
  // Burn 93 flips so 7 remain.
  int remaining = 100;
  for (int n : {15, 15, 15, 15, 15, 13, 5}) {
    d.send(p, {{"type", "flip_request"}, {"n", n}});
    ASSERT_EQ(d.last(p).at("type"), "flip_result");
    EXPECT_EQ(d.last(p).at("positions").size(), static_cast<std::size_t>(n));
    d.send(p, {{"type", "flip_request"}, {"n", 5}});
    EXPECT_EQ(d.last(p).at("code"), "protocol_order");
    d.send(p, {{"type", "forecast_submit"}, {"guess", "green"}});
    remaining -= n;
    EXPECT_EQ(d.last(p).at("remaining"), remaining);
  }
  EXPECT_EQ(remaining, 7);
  EXPECT_EQ(d.last(p).at("legal"), json::array({7}));
  d.send(p, {{"type", "flip_request"}, {"n", 5}});
  EXPECT_EQ(d.last(p).at("code"), "illegal_flip");
  d.send(p, {{"type", "flip_request"}, {"n", 7}});
  d.send(p, {{"type", "forecast_submit"}, {"guess", "red"}});
  EXPECT_EQ(d.of_type(p, "forecast_result").back().at("block_complete"), true);
  d.send(p, {{"type", "flip_request"}, {"n", 5}});
  EXPECT_EQ(d.last(p).at("code"), "block_complete");
  EXPECT_EQ(d.session.phase(p), Phase::waiting);
}

TEST(Play, FeedbackKeysFollowTreatment) {
  for (const auto& t : TreatmentConfig::grid()) {
    Driver d(config(t.name(), 1, false));
    const auto ps = fill(d, 5);
    for (int p : ps) d.play_block(p, 7);
    for (int p : ps) {
      const auto fb = d.of_type(p, "block_feedback");
      ASSERT_EQ(fb.size(), 1u) << t.name();
      const auto& m = fb.front();
      EXPECT_TRUE(m.contains("own"));
      EXPECT_FALSE(m.at("own").contains("rank"));
      EXPECT_EQ(m.contains("peers"), t.feedback != FeedbackCondition::none) << t.name();
      if (m.contains("peers")) {
        const auto& peers = m.at("peers");
        EXPECT_EQ(peers.contains(protocol::kPeerStrategiesKey), t.discloses_strategies()) << t.name();
        EXPECT_EQ(peers.contains(protocol::kPeerScoresKey), t.discloses_scores()) << t.name();
      }
      const auto back = protocol::feedback_from_json(m);
      EXPECT_EQ(back.peer_average_flips.has_value(), t.discloses_strategies());
      EXPECT_EQ(back.peer_scores.has_value(), t.discloses_scores());
    }
  }
}

TEST(Play, CompetitiveNoticeOnceBeforeBlockTwo) {
  for (const std::string name : {"competitive/none", "noncompetitive/none"}) {
    Driver d(config(name, 1, false));
    const auto ps = fill(d, 5);
    play_all(d, ps);
    for (int p : ps) {
      int notices = 0, notice_block = 0;
      for (const auto& c : d.of_type(p, "config"))
        if (c.contains("notice")) {
          ++notices;
          notice_block = c.at("block").get<int>();
          EXPECT_EQ(c.at("notice"), protocol::kCompetitiveNotice);
        }
      EXPECT_EQ(notices, name == "competitive/none" ? 1 : 0);
      if (notices) EXPECT_EQ(notice_block, 2);
      EXPECT_EQ(d.of_type(p, "block_feedback").size(), 3u);
    }
  }
}

TEST(Payment, StatementsAddUp) {
  Driver d(config("competitive/both"));
  const auto ps = fill(d, 5);
  EXPECT_THROW(d.pay(), ProtocolError);
  play_all(d, ps);
  EXPECT_TRUE(d.session.finished());
  d.pay();
  EXPECT_THROW(d.pay(), ProtocolError);
  const auto statements = d.session.statements();
  ASSERT_EQ(statements.size(), 5u);
  std::set<int> ranks;
  for (const auto& s : statements) {
    Cents expected = s.show_up + s.forecasting;
    for (const auto& o : s.elicitation) expected += o.payoff;
    EXPECT_EQ(s.total, expected);
    ASSERT_EQ(s.elicitation.size(), 2u);
    if (s.selected_block == 1) {
      EXPECT_EQ(s.forecasting, s.score * 150);
    } else {
      ASSERT_TRUE(s.rank.has_value());
      ranks.insert(*s.rank);
      EXPECT_EQ(s.forecasting, s.score * d.session.config().params.prize_rates[*s.rank - 1]);
    }
    const auto msg = d.of_type(s.participant, "payment_statement");
    ASSERT_EQ(msg.size(), 1u);
    EXPECT_EQ(msg.front().at("statement").at("total_cents"), s.total);
    EXPECT_EQ(msg.front().at("statement").at("RA"), 8);
    EXPECT_EQ(msg.front().at("statement").at("total"), protocol::format_money(s.total));
  }
  if (statements.front().selected_block > 1) EXPECT_EQ(ranks.size(), 5u);
}

TEST(Payment, MoneyFormatting) {
  EXPECT_EQ(protocol::format_money(900), "9.00");
  EXPECT_EQ(protocol::format_money(-50), "-0.50");
  EXPECT_EQ(protocol::format_money(7), "0.07");
}

TEST(Replay, RebuildsIdenticalState) {
  Driver d(config("competitive/strategies"));
  const auto ps = fill(d, 5);
  d.play_block(ps[0], 6);
  d.play_block(ps[1], 9);
  const auto mid = Session::replay(d.events);
  EXPECT_EQ(mid.state_hash(), d.session.state_hash());
  for (int p : {ps[2], ps[3], ps[4]}) d.play_block(p, 11);
  for (int p : ps) d.ack(p);
  const auto again = Session::replay(d.events);
  EXPECT_EQ(again.state_hash(), d.session.state_hash());
  EXPECT_EQ(again.snapshot(), d.session.snapshot());
  EXPECT_NE(again.state_hash(), mid.state_hash());

  std::stringstream log;
  for (const auto& e : d.events) log << json(e).dump() << '\n';
  const auto events = read_event_log(log);
  EXPECT_EQ(Session::replay(events).state_hash(), d.session.state_hash());
}

TEST(Export, CsvSchemasMatchSimulator) {
  Driver d(config("competitive/scores", 1, false));
  const auto ps = fill(d, 5);
  play_all(d, ps, 8);
  std::ostringstream f, b, sf, sb;
  d.session.write_forecast_csv(f);
  d.session.write_block_csv(b);
  write_forecast_csv_header(sf);
  write_block_csv_header(sb);
  EXPECT_EQ(f.str().substr(0, f.str().find('\n') + 1), sf.str());
  EXPECT_EQ(b.str().substr(0, b.str().find('\n') + 1), sb.str());
  // 4 blocks x 5 members plus the header.
  const std::string blocks = b.str();
  EXPECT_EQ(std::count(blocks.begin(), blocks.end(), '\n'), 21);
}

TEST(Dashboard, ProgressHasNoParticipantContent) {
  Driver d(config("noncompetitive/scores"));
  fill(d, 3);
  const auto pr = d.session.progress();
  const auto text = pr.dump();
  EXPECT_EQ(text.find("tok"), std::string::npos);
  EXPECT_EQ(text.find("\"guess\""), std::string::npos);
}

TEST(SessionIds, Validation) {
  EXPECT_TRUE(valid_session_id("abc-01_X"));
  EXPECT_FALSE(valid_session_id(""));
  EXPECT_FALSE(valid_session_id("a/b"));
  EXPECT_FALSE(valid_session_id(std::string(65, 'a')));
}

TEST(Manager, PersistsAndReplaysLogs) {
  const auto dir = std::filesystem::temp_directory_path() / ("evl_mgr_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::uint64_t hash = 0;
  {
    SessionManager m(dir);
    auto c = config("noncompetitive/none", 1, false);
    c.session_id = "persist";
    const auto created = m.create(c);
    EXPECT_EQ(created.tokens.size(), 5u);
    EXPECT_THROW(m.create(c), InvalidArgument);
    std::vector<json> got;
    const auto p = m.join("persist", created.tokens[2], 1, [](int) {}, [&](const Outbound& o) { got.push_back(o.message); });
    EXPECT_EQ(p, 2);
    m.with_session("persist", [&](const Session& s) { hash = s.state_hash(); });
  }
  SessionManager again(dir);
  ASSERT_TRUE(again.contains("persist"));
  again.with_session("persist", [&](const Session& s) { EXPECT_EQ(s.state_hash(), hash); });
  EXPECT_THROW(again.with_session("missing", [](const Session&) {}), InvalidArgument);
  std::filesystem::remove_all(dir);
}
