#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evidencelab/errors.hpp"
#include "evidencelab/rng.hpp"

namespace evidencelab {

// Money is kept in integer cents everywhere payoffs are booked.
using Cents = std::int64_t;

enum class Color : std::uint8_t { red, green };

std::string_view to_string(Color c) noexcept;
Color parse_color(std::string_view s);
constexpr Color opposite(Color c) noexcept { return c == Color::red ? Color::green : Color::red; }

enum class RewardScheme : std::uint8_t { noncompetitive, competitive };

std::string_view to_string(RewardScheme s) noexcept;
RewardScheme parse_reward_scheme(std::string_view s);

struct GameParams {
  int cards = 15;          // per period, odd
  int budget = 100;        // flips per block
  int min_flips = 5;
  int max_flips = 15;
  Cents piece_rate = 150;  // noncompetitive, per score point
  std::vector<Cents> prize_rates{250, 150, 150, 150, 50};  // by rank 1..group_size
  int group_size = 5;
  int blocks = 4;

  // Throws InvalidArgument when the parameter invariants do not hold.
  void validate() const;

  // Upper bound on forecasts in a block (every forecast at min_flips).
  int max_forecasts() const noexcept { return budget / min_flips; }
};

// JSON keys: M, N, n_min, n_max, piece_rate_cents, prize_rates_cents,
// group_size, blocks. Missing keys keep their defaults.
void to_json(nlohmann::json& j, const GameParams& p);
void from_json(const nlohmann::json& j, GameParams& p);

// Flip counts allowed with `remaining` flips left: n in [min, min(max, remaining)]
// such that the leftover is either zero or still at least min_flips.
// Throws BlockComplete when remaining == 0.
std::vector<int> legal_flip_choices(int remaining, const GameParams& params);
bool is_legal_flip(int n, int remaining, const GameParams& params);

// Completion rule for a stationary target: the target itself when legal,
// otherwise the closest legal count (ties go to the larger count).
int stationary_flip(int target, int remaining, const GameParams& params);

// Flip counts a stationary player uses over one full block.
std::vector<int> stationary_schedule(int target, const GameParams& params);

// One period's cards. Bit i of colors() is 1 when card i is red.
class Deck {
 public:
  Deck() = default;

  // Each card is red or green with probability 1/2, independently.
  static Deck deal(int cards, Rng& rng);
  static Deck from_bits(std::uint64_t red_bits, int cards);
  static Deck from_colors(std::span<const Color> colors);

  int size() const noexcept { return cards_; }
  Color color(int i) const;
  std::uint64_t colors() const noexcept { return red_bits_; }
  std::uint64_t revealed() const noexcept { return revealed_; }
  int revealed_count() const noexcept;
  bool flipped() const noexcept { return revealed_ != 0; }
  int total_reds() const noexcept;
  Color majority() const noexcept;

  // Reveals the given positions; rejects already-revealed or out-of-range ones.
  void reveal(std::uint64_t mask);
  void reveal_all() noexcept;

 private:
  std::uint64_t red_bits_ = 0;
  std::uint64_t revealed_ = 0;
  int cards_ = 0;
};

struct FlipResult {
  int reds = 0;
  int greens = 0;
  std::vector<int> positions;  // ascending card indices revealed this period
};

struct ForecastRecord {
  int flips = 0;
  int reds = 0;
  int greens = 0;
  Color guess = Color::red;
  Color majority = Color::red;
  bool correct = false;
};

struct BlockState {
  int remaining = 0;
  int score = 0;
  std::vector<ForecastRecord> records;

  static BlockState start(const GameParams& params) { return BlockState{params.budget, 0, {}}; }
  bool complete() const noexcept { return remaining == 0; }
  int forecasts() const noexcept { return static_cast<int>(records.size()); }
  double average_flips() const noexcept;
};

// Flips n cards of a fresh deck, chosen uniformly without replacement.
// Throws IllegalFlip (with the legal set) or ProtocolError if the deck was
// already flipped this period.
FlipResult flip(const BlockState& state, Deck& deck, int n, const GameParams& params, Rng& rng);

// Scores the forecast for the current period and reveals the whole deck.
// Throws ProtocolError when no flip preceded it.
ForecastRecord submit_forecast(BlockState& state, Deck& deck, Color guess);

// Guess the majority of the revealed cards; a revealed tie is a coin flip.
Color majority_guess(int reds, int greens, Rng& rng);

// Money for one block. Competitive scheme needs rank in 1..group_size.
Cents block_payoff(int score, RewardScheme scheme, std::optional<int> rank, const GameParams& params);

// Ranks 1..k by score descending; ties broken by a uniform random permutation.
std::vector<int> rank_by_score(std::span<const int> scores, Rng& rng);

// Same, with caller-supplied tie priorities (higher priority wins a tie).
std::vector<int> rank_by_score(std::span<const int> scores, std::span<const std::uint64_t> priorities);

}  // namespace evidencelab
