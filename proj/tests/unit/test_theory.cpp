#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "evidencelab/theory.hpp"
#include "oracles.hpp"

using namespace evidencelab;

namespace {

double binomial(int n, int k) {
  double c = 1;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

// Posterior that red is the deck majority, by counting hidden completions.
double posterior_oracle(int flips, int reds, int cards) {
  const int hidden = cards - flips;
  double favourable = 0;
  for (int k = 0; k <= hidden; ++k)
    if (2 * (reds + k) > cards) favourable += binomial(hidden, k);
  return favourable / std::ldexp(1.0, hidden);
}

}  // namespace

TEST(Probability, PublishedValues) {
  EXPECT_NEAR(correct_forecast_prob(5, 15), 0.707, 0.0005);
  EXPECT_NEAR(correct_forecast_prob(10, 15), 0.793, 0.0005);
  const auto p5 = correct_forecast_prob_exact(5, 15);
  // 11588 / 2^14 in lowest terms.
  EXPECT_EQ(p5.numerator << (14 - p5.log2_denominator), 11588u);
  EXPECT_EQ(p5.numerator % 2, 1u);
}

TEST(Probability, MatchesAllDecksEnumeration) {
  for (int m = 3; m <= 13; m += 2)
    for (int n = 1; n <= m; ++n)
      EXPECT_NEAR(correct_forecast_prob(n, m), oracle::brute_force_correct_prob(n, m), 1e-12) << "M=" << m << " n=" << n;
}

TEST(Probability, WhichCardsAreRevealedDoesNotMatter) {
  const int m = 9;
  for (std::uint64_t mask = 1; mask < (1u << m); ++mask) {
    const int n = std::popcount(mask);
    EXPECT_NEAR(oracle::brute_force_correct_prob_subset(mask, m), correct_forecast_prob(n, m), 1e-12);
  }
}

TEST(Probability, EvenFlipAddsNothing) {
  for (int k = 1; 2 * k <= 15; ++k) EXPECT_NEAR(correct_forecast_prob(2 * k, 15), correct_forecast_prob(2 * k - 1, 15), 1e-12);
}

TEST(Probability, FullRevealIsCertain) { EXPECT_DOUBLE_EQ(correct_forecast_prob(15, 15), 1.0); }

TEST(Posterior, MatchesCompletionCount) {
  for (int n = 1; n <= 15; ++n)
    for (int r = 0; r <= n; ++r) {
      if (2 * r <= n) continue;
      EXPECT_NEAR(majority_prob_given_flips(n, r, 15), posterior_oracle(n, r, 15), 1e-14);
    }
  EXPECT_NEAR(majority_prob_given_flips(5, 5, 15), 0.9453125, 1e-12);
  EXPECT_NEAR(majority_prob_given_flips(5, 4, 15), 848.0 / 1024, 1e-12);
}

TEST(Posterior, TieAndMinorityAreRejected) {
  EXPECT_THROW(majority_prob_given_flips(4, 2, 15), InvalidArgument);
  EXPECT_THROW(majority_prob_given_flips(5, 2, 15), InvalidArgument);
  EXPECT_DOUBLE_EQ(red_majority_prob(4, 2, 15), 0.5);
  EXPECT_NEAR(red_majority_prob(5, 1, 15), 1 - majority_prob_given_flips(5, 4, 15), 1e-15);
}

TEST(Score, WorkedExampleTenVersusTwoFives) {
  const double one_ten = 2 * correct_forecast_prob(10, 15) - 1;
  const double two_fives = 2 * (2 * correct_forecast_prob(5, 15) - 1);
  EXPECT_NEAR(one_ten, 0.585, 0.001);
  EXPECT_NEAR(two_fives, 0.829, 0.001);
}

TEST(Score, LiteralStationaryMoments) {
  const GameParams p;
  const auto m5 = expected_block_score(5, p);
  EXPECT_NEAR(m5.mean, 20 * (2 * 0.707275390625 - 1), 1e-12);
  EXPECT_NEAR(m5.sd, std::sqrt(20 * 4 * 0.707275390625 * (1 - 0.707275390625)), 1e-12);
  EXPECT_NEAR(expected_block_score(15, p).sd, 0.0, 1e-12);
}

TEST(Score, ScheduleMomentsUseRealBlock) {
  const GameParams p;
  const auto m15 = stationary_score_moments(15, p);
  const double p10 = correct_forecast_prob(10, 15);
  EXPECT_NEAR(m15.mean, 6 + (2 * p10 - 1), 1e-12);
  EXPECT_NEAR(m15.sd, std::sqrt(4 * p10 * (1 - p10)), 1e-12);
  EXPECT_NEAR(stationary_score_moments(5, p).mean, expected_block_score(5, p).mean, 1e-12);
}

TEST(Score, ScheduleDistributionSumsToOne) {
  const auto d = schedule_score_distribution(stationary_schedule(7, GameParams{}), 15);
  EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-12);
}

TEST(Score, ExpectedScoreOfRecords) {
  std::vector<ForecastRecord> recs(20, ForecastRecord{5, 3, 2, Color::red, Color::red, true});
  EXPECT_NEAR(12 - expected_score(recs, 15), 3.709, 0.0005);
}

TEST(Utility, CaraMatchesClosedForm) {
  const auto u = UtilitySpec::cara(0.5);
  EXPECT_NEAR(u(2.0), (1 - std::exp(-1.0)) / 0.5, 1e-14);
  EXPECT_NEAR(u(-1.5), (1 - std::exp(0.75)) / 0.5, 1e-14);
  EXPECT_THROW(UtilitySpec::cara(0).validate(), InvalidArgument);
}

TEST(Utility, ProspectShape) {
  const auto u = UtilitySpec::prospect(0.5, 0.9);
  EXPECT_NEAR(u(4.0), 2.0, 1e-14);
  EXPECT_NEAR(u(-4.0), -std::pow(4.0, 0.9), 1e-14);
  EXPECT_EQ(u.label(), "prospect(0.5;0.9)");
}

TEST(Utility, CaraArgmaxUnderFloorK) {
  const GameParams p;
  auto argmax = [&](double a, KRounding r) {
    int best = 5;
    double bu = -1e300;
    for (int n = 5; n <= 15; ++n) {
      const double u = expected_block_utility(n, UtilitySpec::cara(a), p, r);
      if (u > bu + 1e-12) best = n, bu = u;
    }
    return best;
  };
  EXPECT_EQ(argmax(0.1, KRounding::floor), 5);
  EXPECT_EQ(argmax(0.5, KRounding::floor), 15);
  EXPECT_EQ(argmax(0.5, KRounding::nearest), 15);
}

TEST(Utility, ScheduleUtilityArgmax) {
  const GameParams p;
  auto argmax = [&](double a) {
    int best = 5;
    double bu = -1e300;
    for (int n = 5; n <= 15; ++n) {
      const double u = stationary_block_utility(n, UtilitySpec::cara(a), p);
      if (u > bu + 1e-12) best = n, bu = u;
    }
    return best;
  };
  EXPECT_EQ(argmax(0.1), 5);
  EXPECT_EQ(argmax(0.5), 15);
}

TEST(Utility, SmallAlphaRecoversRiskNeutralRanking) {
  const GameParams p;
  std::vector<std::pair<double, int>> cara, neutral;
  for (int n = 5; n <= 15; ++n) {
    cara.emplace_back(expected_block_utility(n, UtilitySpec::cara(1e-7), p), n);
    neutral.emplace_back(expected_block_utility(n, UtilitySpec::risk_neutral(), p), n);
  }
  std::sort(cara.rbegin(), cara.rend());
  std::sort(neutral.rbegin(), neutral.rend());
  for (std::size_t i = 0; i < cara.size(); ++i) EXPECT_EQ(cara[i].second, neutral[i].second);
  EXPECT_EQ(cara.front().second, 5);
}

TEST(Policy, DynamicProgramPrefersFive) {
  const GameParams p;
  const auto pol = optimal_policy(p);
  ASSERT_TRUE(pol.value[100].has_value());
  EXPECT_NEAR(*pol.value[100], 20 * (2 * correct_forecast_prob(5, 15) - 1), 1e-9);
  for (int r = 5; r <= 100; ++r) {
    if (!pol.value[static_cast<std::size_t>(r)]) continue;
    if (is_legal_flip(5, r, p)) EXPECT_EQ(pol.action[static_cast<std::size_t>(r)], 5) << "R=" << r;
  }
}

TEST(Policy, MatchesExhaustiveSplits) {
  for (int budget = 15; budget <= 25; ++budget) {
    GameParams p;
    p.budget = budget;
    const auto pol = optimal_policy(p);
    auto gain = [](int n) { return 2 * oracle::brute_force_correct_prob(n, 15) - 1; };
    double best = -1e300;
    std::vector<int> path, best_path;
    oracle::all_splits(budget, 5, 15, gain, 0.0, path, best, best_path);
    ASSERT_TRUE(pol.value[static_cast<std::size_t>(budget)].has_value());
    EXPECT_NEAR(*pol.value[static_cast<std::size_t>(budget)], best, 1e-12) << "N=" << budget;
  }
}

TEST(Table, CsvHeaderAndRows) {
  const GameParams p;
  const std::vector<UtilitySpec> us{UtilitySpec::risk_neutral(), UtilitySpec::cara(0.5)};
  const auto rows = theory_table(p, us);
  ASSERT_EQ(rows.size(), 11u);
  std::ostringstream os;
  write_theory_csv(os, rows, us);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "n,p_n,S_n,sd_n,U_n[risk-neutral],U_n[cara(0.5)],S_schedule_n,sd_schedule_n,"
            "U_schedule_n[risk-neutral],U_schedule_n[cara(0.5)]");
  EXPECT_NE(text.find("5,0.707275390625,8.291015625,"), std::string::npos);
}
