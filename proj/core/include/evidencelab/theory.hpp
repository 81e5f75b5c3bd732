#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evidencelab/game.hpp"

namespace evidencelab {

// Probability that red is the majority of `cards` cards, given that `flips`
// cards were revealed and `reds` of them are red. Requires a strict revealed
// red majority (reds > flips - reds); a revealed tie is rejected.
double majority_prob_given_flips(int flips, int reds, int cards);

// Same quantity for any revealed split: 1/2 on a tie, mirrored for a green
// majority.
double red_majority_prob(int flips, int reds, int cards);

// Exact probability of a correct majority forecast after flipping n cards,
// as numerator / 2^log2_denominator in lowest terms.
struct ExactProbability {
  std::uint64_t numerator = 0;
  int log2_denominator = 0;
  double value() const noexcept;
};

ExactProbability correct_forecast_prob_exact(int flips, int cards);
double correct_forecast_prob(int flips, int cards);

// Sum of (2 p_n - 1) over the flip counts actually used.
double expected_score(std::span<const ForecastRecord> records, int cards);

// Variance of the block score given the flip counts actually used.
double score_variance(std::span<const ForecastRecord> records, int cards);

struct ScoreMoments {
  double mean = 0.0;
  double sd = 0.0;
};

// Stationary-strategy block score treating budget/n as a real number:
// mean (N/n)(2p-1), sd sqrt((N/n) 4 p (1-p)).
ScoreMoments expected_block_score(int flips, const GameParams& params);

// Exact moments of the stationary strategy under the real block rules
// (including the forced final flips of stationary_schedule).
ScoreMoments stationary_score_moments(int target, const GameParams& params);

// Exact distribution of correct forecasts for a schedule of flip counts of
// majority guessing; entry k is P(k correct), i.e. score 2k - schedule.size().
std::vector<double> schedule_score_distribution(const std::vector<int>& schedule, int cards);

enum class UtilityKind { risk_neutral, cara, prospect };

struct UtilitySpec {
  UtilityKind kind = UtilityKind::risk_neutral;
  double alpha = 0.0;       // CARA absolute risk aversion
  double alpha_gain = 0.5;  // prospect exponent on gains
  double beta_loss = 0.9;   // prospect exponent on losses
  double money_per_point = 1.50;

  static UtilitySpec risk_neutral(double w = 1.50) { return {UtilityKind::risk_neutral, 0.0, 0.5, 0.9, w}; }
  static UtilitySpec cara(double a, double w = 1.50) { return {UtilityKind::cara, a, 0.5, 0.9, w}; }
  static UtilitySpec prospect(double gain, double loss, double w = 1.50) {
    return {UtilityKind::prospect, 0.0, gain, loss, w};
  }

  void validate() const;
  double operator()(double money) const;
  std::string label() const;
};

UtilitySpec parse_utility(const std::string& kind, double alpha, double alpha_gain = 0.5, double beta_loss = 0.9);

// How budget/n becomes the integer forecast count K in the stationary
// expected-utility sum.
enum class KRounding { floor, nearest };

// Sum_k C(K,k) p^k (1-p)^(K-k) u(w (2k - K)).
double expected_block_utility(int flips, const UtilitySpec& spec, const GameParams& params,
                              KRounding rounding = KRounding::floor);

// Expected utility of the stationary strategy under the real block rules,
// from the exact score distribution of its schedule.
double stationary_block_utility(int target, const UtilitySpec& spec, const GameParams& params);

struct PolicyValue {
  // Indexed by remaining budget 0..N. Unreachable budgets (no legal move)
  // have no value and action 0.
  std::vector<std::optional<double>> value;
  std::vector<int> action;
};

// V(R) = max_{n legal at R} (2 p_n - 1) + V(R - n), V(0) = 0. Among
// near-ties (within 1e-12) the smallest flip count wins.
PolicyValue optimal_policy(const GameParams& params);

struct TheoryRow {
  int flips = 0;
  double p = 0.0;
  double expected_score = 0.0;
  double score_sd = 0.0;
  std::vector<double> utilities;  // one per requested UtilitySpec
  // Same quantities for the stationary schedule under the real block rules.
  double schedule_score = 0.0;
  double schedule_sd = 0.0;
  std::vector<double> schedule_utilities;
};

std::vector<TheoryRow> theory_table(const GameParams& params, const std::vector<UtilitySpec>& utilities,
                                    KRounding rounding = KRounding::floor);

// CSV: n,p_n,S_n,sd_n,U_n[<label>]...,S_schedule_n,sd_schedule_n,U_schedule_n[<label>]...
void write_theory_csv(std::ostream& os, const std::vector<TheoryRow>& rows, const std::vector<UtilitySpec>& utilities);

}  // namespace evidencelab
