#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evidencelab/equilibrium.hpp"
#include "oracles.hpp"

using namespace evidencelab;

TEST(BlockScores, Deterministic) {
  const GameParams g;
  Rng a = make_stream(9, {stream_tag("t")});
  Rng b = make_stream(9, {stream_tag("t")});
  const auto x = simulate_block_scores({7, 11}, 500, g, a);
  const auto y = simulate_block_scores({7, 11}, 500, g, b);
  EXPECT_EQ(x.scores, y.scores);
  EXPECT_EQ(x.sims(), 500u);
  EXPECT_EQ(x.group_size, 5);
}

TEST(BlockScores, StationaryFiveMatchesExpectation) {
  const GameParams g;
  Rng rng(21);
  const std::size_t sims = 40000;
  const auto s = simulate_block_scores({5, 5}, sims, g, rng);
  std::vector<double> v;
  for (std::size_t i = 0; i < sims; ++i) v.push_back(s.at(i, 0));
  const auto [mean, se] = oracle::mean_se(v);
  const double p = correct_forecast_prob(5, 15);
  EXPECT_NEAR(mean, 20 * (2 * p - 1), 3 * se);
  EXPECT_NEAR(mean, 8.291015625, 3 * se);
}

TEST(BlockScores, FifteenScheduleVariance) {
  // [15 x 6, 10]: variance is the sum of per-forecast Bernoulli variances.
  const GameParams g;
  Rng rng(4);
  const std::size_t sims = 40000;
  const auto s = simulate_block_scores({15, 15}, sims, g, rng);
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < sims; ++i) {
    sum += s.at(i, 2);
    sq += double(s.at(i, 2)) * s.at(i, 2);
  }
  const double mean = sum / sims, var = sq / sims - mean * mean;
  const double p15 = correct_forecast_prob(15, 15), p10 = correct_forecast_prob(10, 15);
  EXPECT_DOUBLE_EQ(p15, 1.0);
  EXPECT_NEAR(mean, 6 + (2 * p10 - 1), 0.02);
  EXPECT_NEAR(var, 4 * p10 * (1 - p10), 0.03);
}

TEST(CompetitivePayoffs, PrizeSchedule) {
  const GameParams g;
  Rng rng(1);
  const std::vector<int> scores{8, 6, 6, 3, -1};
  const auto pay = competitive_payoffs(scores, g, rng);
  ASSERT_EQ(pay.size(), 5u);
  EXPECT_DOUBLE_EQ(pay[0], 20.0);
  EXPECT_DOUBLE_EQ(pay[1], 9.0);
  EXPECT_DOUBLE_EQ(pay[2], 9.0);
  EXPECT_DOUBLE_EQ(pay[3], 4.5);
  EXPECT_DOUBLE_EQ(pay[4], -0.5);
}

TEST(CompetitivePayoffs, TiedTopIsFair) {
  const GameParams g;
  Rng rng(77);
  const std::vector<int> scores{5, 5, 1, 0, 0};
  const int trials = 20000;
  int first = 0;
  for (int t = 0; t < trials; ++t) {
    const auto pay = competitive_payoffs(scores, g, rng);
    if (pay[0] == 12.5) ++first;
    EXPECT_DOUBLE_EQ(pay[0] + pay[1], 12.5 + 7.5);
  }
  const double share = double(first) / trials, se = std::sqrt(0.25 / trials);
  EXPECT_NEAR(share, 0.5, 4 * se);
}

TEST(BestResponse, SmallRunIsReproducible) {
  EquilibriumConfig cfg;
  cfg.sims = 2000;
  cfg.seed = 5;
  cfg.threads = 1;
  const auto a = best_response(5, UtilitySpec::risk_neutral(), cfg);
  const auto b = best_response(5, UtilitySpec::risk_neutral(), cfg);
  ASSERT_EQ(a.row.size(), 11u);
  for (std::size_t i = 0; i < a.row.size(); ++i) {
    EXPECT_EQ(a.row[i].deviant, 5 + int(i));
    EXPECT_DOUBLE_EQ(a.row[i].mean, b.row[i].mean);
  }
  EXPECT_EQ(a.best, b.best);
  EXPECT_GE(a.gap, 0.0);
}

TEST(BestResponse, ThreadCountDoesNotChangeResult) {
  EquilibriumConfig cfg;
  cfg.sims = 9000;
  cfg.seed = 3;
  cfg.threads = 1;
  const auto a = best_response(9, UtilitySpec::cara(0.5), cfg);
  cfg.threads = 3;
  const auto b = best_response(9, UtilitySpec::cara(0.5), cfg);
  for (std::size_t i = 0; i < a.row.size(); ++i) EXPECT_DOUBLE_EQ(a.row[i].mean, b.row[i].mean);
}

TEST(BestResponse, RiskNeutralPrefersFewFlips) {
  EquilibriumConfig cfg;
  cfg.sims = 20000;
  cfg.seed = 11;
  const auto br = best_response(10, UtilitySpec::risk_neutral(), cfg);
  EXPECT_LE(br.best, 6);
  // Fifteen flips per forecast leave too few forecasts to compete.
  EXPECT_LT(br.row.back().mean, br.row.front().mean);
}

TEST(FixedPoints, FromHandBuiltMap) {
  BestResponseMap m;
  for (int n = 5; n <= 15; ++n) {
    BestResponse r;
    r.others = n;
    r.best = n == 9 ? 9 : 5;
    m.rows.push_back(r);
  }
  EXPECT_EQ(symmetric_fixed_points(m), (std::vector<int>{5, 9}));
  EXPECT_FALSE(m.ambiguous());
  m.rows[3].ambiguous = true;
  EXPECT_TRUE(m.ambiguous());
  EXPECT_EQ(m.at(12).others, 12);
}

TEST(EquilibriumCsv, Headers) {
  EquilibriumConfig cfg;
  cfg.sims = 200;
  cfg.params.cards = 7;
  cfg.params.budget = 30;
  cfg.params.min_flips = 3;
  cfg.params.max_flips = 5;
  const auto eq = find_symmetric_equilibria(UtilitySpec::risk_neutral(), cfg);
  std::ostringstream a, b, c;
  write_payoff_matrix_csv(a, eq.map);
  write_best_response_csv(b, eq.map);
  write_equilibria_csv(c, eq);
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "utility,n_others,n_deviant,mean,se");
  EXPECT_EQ(b.str().substr(0, b.str().find('\n')), "utility,n_others,n_opt,runner_up,gap,gap_se,ambiguous");
  EXPECT_EQ(c.str().substr(0, c.str().find('\n')), "utility,n_star,mean,se,gap,gap_se,ambiguous");
  // 3 n_others rows x 3 deviants plus the header.
  const std::string matrix = a.str();
  EXPECT_EQ(std::count(matrix.begin(), matrix.end(), '\n'), 10);
}
