#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "evidencelab/simlab.hpp"
#include "evidencelab/theory.hpp"

using namespace evidencelab;

namespace {

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::vector<PolicyKind> all(PolicyKind k, int n = 5) { return std::vector<PolicyKind>(static_cast<std::size_t>(n), k); }

}  // namespace

TEST(Treatments, GridHasEightNamedCells) {
  const auto grid = TreatmentConfig::grid();
  ASSERT_EQ(grid.size(), 8u);
  std::set<std::string> names;
  for (const auto& t : grid) {
    names.insert(t.name());
    EXPECT_EQ(TreatmentConfig::parse(t.name()).name(), t.name());
  }
  EXPECT_EQ(names.size(), 8u);
  EXPECT_EQ(grid.front().rewards, RewardScheme::noncompetitive);
  EXPECT_EQ(grid.back().rewards, RewardScheme::competitive);
  EXPECT_THROW(TreatmentConfig::parse("competitive/gossip"), InvalidArgument);
  EXPECT_EQ(TreatmentConfig::parse("competitive/both").scheme_for_block(1), RewardScheme::noncompetitive);
  EXPECT_EQ(TreatmentConfig::parse("competitive/both").scheme_for_block(2), RewardScheme::competitive);
}

TEST(Luck, WorkedValue) {
  // Three forecasts at 5 flips, two right.
  std::vector<ForecastRecord> r(3, ForecastRecord{5, 3, 2, Color::red, Color::red, true});
  r[2].correct = false;
  const double p = correct_forecast_prob(5, 15);
  EXPECT_NEAR(luck(r, 1, 15), 1 - 3 * (2 * p - 1), 1e-12);
}

TEST(GroupMetrics, RelDistAndSpearman) {
  const std::vector<int> scores{10, 8, 6, 4, 2}, forecasts{20, 15, 12, 8, 7};
  const auto g = group_metrics(scores, forecasts);
  EXPECT_EQ(g.reldist, (std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0}));
  EXPECT_DOUBLE_EQ(g.spearman, 1.0);
  // Population SD of {20, 15, 12, 8, 7}.
  const double mean = 62.0 / 5;
  double v = 0;
  for (int f : forecasts) v += (f - mean) * (f - mean);
  EXPECT_NEAR(g.flip_sd, std::sqrt(v / 5), 1e-12);
}

TEST(GroupMetrics, AllTied) {
  const std::vector<int> scores{3, 3, 3, 3, 3}, forecasts{20, 20, 20, 20, 20};
  const auto g = group_metrics(scores, forecasts);
  for (double r : g.reldist) EXPECT_DOUBLE_EQ(r, 0.5);
  EXPECT_TRUE(std::isnan(g.spearman));
  EXPECT_DOUBLE_EQ(g.flip_sd, 0.0);
}

TEST(Spearman, AverageRanks) {
  const std::vector<double> x{1, 2, 2, 3}, y{4, 3, 3, 1};
  EXPECT_NEAR(spearman(x, y), -1.0, 1e-12);
  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 1, 4, 3, 5};
  EXPECT_NEAR(spearman(a, b), 0.8, 1e-12);
}

TEST(Feedback, DisclosureFollowsTreatment) {
  const GameParams g;
  std::vector<BlockState> states(5, BlockState::start(g));
  for (int i = 0; i < 5; ++i) {
    states[i].score = i;
    states[i].records.assign(3, ForecastRecord{7, 4, 3, Color::red, Color::red, true});
  }
  for (const auto& t : TreatmentConfig::grid()) {
    const auto packets = make_feedback_packets(t, 1, states);
    ASSERT_EQ(packets.size(), 5u);
    for (const auto& p : packets) {
      EXPECT_EQ(p.peer_average_flips.has_value(), t.discloses_strategies()) << t.name();
      EXPECT_EQ(p.peer_scores.has_value(), t.discloses_scores()) << t.name();
      EXPECT_EQ(p.history.size(), 3u);
    }
  }
  EXPECT_DOUBLE_EQ(round_two_decimals(100.0 / 3), 33.33);
  EXPECT_DOUBLE_EQ(round_two_decimals(6.666), 6.67);
}

TEST(Session, StationaryFiveUsesTwentyForecasts) {
  const GameParams g;
  const auto log = run_session(TreatmentConfig::parse("noncompetitive/none"), all(Stationary{5}), g, 3);
  ASSERT_EQ(log.members.size(), 20u);
  std::vector<int> f;
  for (const auto& m : log.members) {
    EXPECT_EQ(m.records.size(), 20u);
    EXPECT_DOUBLE_EQ(m.average_flips, 5.0);
    f.push_back(static_cast<int>(m.records.size()));
  }
  for (const auto& gb : log.groups) EXPECT_DOUBLE_EQ(gb.flip_sd, 0.0);
}

TEST(Session, Deterministic) {
  const GameParams g;
  const auto t = TreatmentConfig::parse("competitive/both");
  const auto a = run_session(t, all(ImitateMean{}), g, 42);
  const auto b = run_session(t, all(ImitateMean{}), g, 42);
  std::ostringstream x, y;
  write_block_csv_rows(x, a);
  write_block_csv_rows(y, b);
  EXPECT_EQ(x.str(), y.str());
  const auto c = run_session(t, all(ImitateMean{}), g, 43);
  std::ostringstream z;
  write_block_csv_rows(z, c);
  EXPECT_NE(x.str(), z.str());
}

TEST(Session, RecomputeIsIdempotent) {
  const GameParams g;
  const auto log = run_session(TreatmentConfig::parse("competitive/scores"), all(DistanceResponsive{}), g, 8);
  auto raw = log;
  for (auto& m : raw.members) {
    m.score = -99;
    m.rank.reset();
    m.payoff = 0;
    m.luck = 0;
    m.reldist = 0;
  }
  raw.groups.clear();
  raw.payments.clear();
  const auto again = recompute_metrics(raw, g);
  std::ostringstream x, y;
  write_block_csv_rows(x, log);
  write_block_csv_rows(y, again);
  EXPECT_EQ(x.str(), y.str());
  EXPECT_EQ(again.payments, log.payments);
}

TEST(Session, RanksAndPayoffsAgree) {
  const GameParams g;
  const auto log = run_session(TreatmentConfig::parse("competitive/none"), all(QreMatcher{1.4, 7}), g, 19);
  for (int b = 1; b <= 4; ++b) {
    std::vector<int> seen;
    for (int m = 1; m <= 5; ++m) {
      const auto& e = log.at(b, m);
      if (b == 1) {
        EXPECT_FALSE(e.rank.has_value());
        EXPECT_EQ(e.payoff, e.score * g.piece_rate);
        continue;
      }
      ASSERT_TRUE(e.rank.has_value());
      seen.push_back(*e.rank);
      EXPECT_EQ(e.payoff, e.score * g.prize_rates[static_cast<std::size_t>(*e.rank - 1)]);
      for (int o = 1; o <= 5; ++o)
        if (log.at(b, o).score > e.score) EXPECT_LT(*log.at(b, o).rank, *e.rank);
    }
    if (b > 1) {
      std::sort(seen.begin(), seen.end());
      EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4, 5}));
    }
  }
  ASSERT_EQ(log.payments.size(), 5u);
  for (int m = 1; m <= 5; ++m) EXPECT_EQ(log.payments[m - 1], log.at(log.selected_block, m).payoff);
}

TEST(Session, UndisclosedPolicyFails) {
  const GameParams g;
  EXPECT_THROW(run_session(TreatmentConfig::parse("competitive/strategies"), all(FollowLeader{}), g, 1),
               InformationViolation);
}

TEST(Csv, Headers) {
  std::ostringstream f, b;
  write_forecast_csv_header(f);
  write_block_csv_header(b);
  EXPECT_EQ(first_line(f.str()), "session,treatment,group,member,block,period,flips,reds,greens,guess,majority,correct");
  EXPECT_EQ(first_line(b.str()),
            "session,treatment,group,member,block,scheme,forecasts,score,average_flips,rank,payoff_cents,luck,reldist,"
            "spearman,flip_sd,selected");
}

TEST(Scenario, JsonRoundTripAndRun) {
  const auto j = nlohmann::json::parse(R"({"seed": 7, "sessions": 3,
      "treatments": ["noncompetitive/none", "competitive/both"],
      "policies": {"kind": "stationary", "flips": 5}})");
  const auto s = ScenarioConfig::from_json(j);
  EXPECT_EQ(s.policies.size(), 5u);
  EXPECT_EQ(ScenarioConfig::from_json(s.to_json()).to_json(), s.to_json());
  const auto logs = run_scenario(s, 2);
  ASSERT_EQ(logs.size(), 6u);
  const auto again = run_scenario(s, 1);
  for (std::size_t i = 0; i < logs.size(); ++i) {
    EXPECT_EQ(logs[i].session_id, again[i].session_id);
    EXPECT_EQ(logs[i].payments, again[i].payments);
  }
  const auto grid = treatment_table(logs, s.treatments);
  EXPECT_EQ(grid.treatments.size(), 2u);
  const auto& cell = grid.cells.at({"competitive/both", 2});
  EXPECT_EQ(cell.count, 15u);
  EXPECT_DOUBLE_EQ(cell.forecasts_mean, 20.0);
  EXPECT_DOUBLE_EQ(cell.forecasts_sd, 0.0);
  std::ostringstream os;
  write_summary_csv(os, grid);
  EXPECT_NE(os.str().find("competitive/both"), std::string::npos);
}

TEST(Scenario, RejectsBadConfig) {
  EXPECT_THROW(ScenarioConfig::from_json(nlohmann::json::parse(R"({"seed": 1})")), InvalidArgument);
  EXPECT_THROW(ScenarioConfig::from_json(nlohmann::json::parse(
                   R"({"policies": [{"kind": "dp-optimal"}, {"kind": "dp-optimal"}]})")),
               InvalidArgument);
}

TEST(Summary, MissingTreatmentWarns) {
  const GameParams g;
  std::vector<SessionLog> logs{run_session(TreatmentConfig::parse("noncompetitive/none"), all(Stationary{7}), g, 1)};
  const auto grid = treatment_table(logs);
  EXPECT_EQ(grid.treatments.size(), 1u);
  EXPECT_EQ(grid.warnings.size(), 7u);
}
