#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "evidencelab/game.hpp"
#include "evidencelab/theory.hpp"

namespace evidencelab {

struct EquilibriumConfig {
  GameParams params;
  std::size_t sims = 200000;  // per (n, n') cell
  std::uint64_t seed = 1;
  unsigned threads = 0;       // 0: hardware concurrency
  double separation_se = 2.0; // argmax must beat the runner-up by this many SEs
};

// Everyone but player 0 flips `others` per period; player 0 flips `deviant`.
struct StrategyProfile {
  int others = 5;
  int deviant = 5;
};

struct ScoreSamples {
  int group_size = 0;
  std::vector<int> scores;  // row-major: sims x group_size, player 0 is the deviant

  std::size_t sims() const noexcept { return group_size ? scores.size() / static_cast<std::size_t>(group_size) : 0; }
  int at(std::size_t sim, int player) const { return scores[sim * static_cast<std::size_t>(group_size) + static_cast<std::size_t>(player)]; }
};

// Full blocks of stationary majority guessers under the exact block rules.
ScoreSamples simulate_block_scores(const StrategyProfile& profile, std::size_t sims, const GameParams& params, Rng& rng);

// Dollar payoff per member from one block of group scores under the prize
// schedule; rank ties are broken uniformly at random.
std::vector<double> competitive_payoffs(std::span<const int> scores, const GameParams& params, Rng& rng);

struct PayoffCell {
  int deviant = 0;
  double mean = 0.0;  // mean payoff (risk-neutral) or mean utility
  double se = 0.0;
};

struct BestResponse {
  int others = 0;
  int best = 0;
  int runner_up = 0;
  std::vector<PayoffCell> row;  // one cell per candidate deviant flip count
  double gap = 0.0;             // mean(best) - mean(runner_up)
  double gap_se = 0.0;          // SE of the paired difference
  bool ambiguous = false;       // gap < separation_se * gap_se
};

BestResponse best_response(int others, const UtilitySpec& utility, const EquilibriumConfig& config);

struct BestResponseMap {
  UtilitySpec utility;
  std::vector<BestResponse> rows;  // one per n_others, ascending

  const BestResponse& at(int others) const;
  bool ambiguous() const noexcept;
};

BestResponseMap best_response_map(const UtilitySpec& utility, const EquilibriumConfig& config);

struct EquilibriumSet {
  BestResponseMap map;
  std::vector<int> fixed_points;  // n with n_opt(n) == n
};

std::vector<int> symmetric_fixed_points(const BestResponseMap& map);
EquilibriumSet find_symmetric_equilibria(const UtilitySpec& utility, const EquilibriumConfig& config);

// Smallest CARA alpha in [lo, hi] (to within tol) at which max_flips is a
// best response to itself. Empty when the predicate does not change sign.
std::optional<double> cara_switch_threshold(double lo, double hi, double tol, const EquilibriumConfig& config);

// CSV emitters.
void write_payoff_matrix_csv(std::ostream& os, const BestResponseMap& map);
void write_best_response_csv(std::ostream& os, const BestResponseMap& map);
void write_equilibria_csv(std::ostream& os, const EquilibriumSet& eq);

}  // namespace evidencelab
