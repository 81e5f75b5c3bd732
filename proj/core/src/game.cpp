#include "evidencelab/game.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace evidencelab {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << '}';
  return os.str();
}

constexpr std::uint64_t low_bits(int n) noexcept {
  return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
}

}  // namespace

IllegalFlip::IllegalFlip(int requested, std::vector<int> legal)
    : Error("illegal flip count " + std::to_string(requested) + "; legal choices " + join_ints(legal)),
      requested_(requested),
      legal_(std::move(legal)) {}

std::string_view to_string(Color c) noexcept { return c == Color::red ? "red" : "green"; }

Color parse_color(std::string_view s) {
  if (s == "red" || s == "R" || s == "r") return Color::red;
  if (s == "green" || s == "G" || s == "g") return Color::green;
  throw InvalidArgument("unknown color '" + std::string(s) + "'");
}

std::string_view to_string(RewardScheme s) noexcept {
  return s == RewardScheme::noncompetitive ? "noncompetitive" : "competitive";
}

RewardScheme parse_reward_scheme(std::string_view s) {
  if (s == "noncompetitive") return RewardScheme::noncompetitive;
  if (s == "competitive") return RewardScheme::competitive;
  throw InvalidArgument("unknown reward scheme '" + std::string(s) + "'");
}

void GameParams::validate() const {
  if (cards < 3 || cards % 2 == 0) throw InvalidArgument("cards must be odd and >= 3");
  if (cards > 61) throw InvalidArgument("cards must be <= 61");
  if (min_flips < 1 || min_flips > max_flips || max_flips > cards)
    throw InvalidArgument("flip bounds must satisfy 1 <= min_flips <= max_flips <= cards");
  if (budget < max_flips) throw InvalidArgument("budget must be at least max_flips");
  if (group_size < 1) throw InvalidArgument("group_size must be positive");
  if (static_cast<int>(prize_rates.size()) != group_size)
    throw InvalidArgument("prize_rates must have one entry per group member");
  if (blocks < 1) throw InvalidArgument("blocks must be positive");
}

void to_json(nlohmann::json& j, const GameParams& p) {
  j = nlohmann::json{{"M", p.cards},
                     {"N", p.budget},
                     {"n_min", p.min_flips},
                     {"n_max", p.max_flips},
                     {"piece_rate_cents", p.piece_rate},
                     {"prize_rates_cents", p.prize_rates},
                     {"group_size", p.group_size},
                     {"blocks", p.blocks}};
}

void from_json(const nlohmann::json& j, GameParams& p) {
  GameParams d;
  p.cards = j.value("M", d.cards);
  p.budget = j.value("N", d.budget);
  p.min_flips = j.value("n_min", d.min_flips);
  p.max_flips = j.value("n_max", d.max_flips);
  p.piece_rate = j.value("piece_rate_cents", d.piece_rate);
  p.prize_rates = j.value("prize_rates_cents", d.prize_rates);
  p.group_size = j.value("group_size", d.group_size);
  p.blocks = j.value("blocks", d.blocks);
  p.validate();
}

bool is_legal_flip(int n, int remaining, const GameParams& params) {
  if (n < params.min_flips || n > params.max_flips || n > remaining) return false;
  const int left = remaining - n;
  return left == 0 || left >= params.min_flips;
}

std::vector<int> legal_flip_choices(int remaining, const GameParams& params) {
  if (remaining <= 0) throw BlockComplete();
  std::vector<int> out;
  for (int n = params.min_flips; n <= std::min(params.max_flips, remaining); ++n)
    if (is_legal_flip(n, remaining, params)) out.push_back(n);
  return out;
}

int stationary_flip(int target, int remaining, const GameParams& params) {
  if (is_legal_flip(target, remaining, params)) return target;
  const auto legal = legal_flip_choices(remaining, params);
  if (legal.empty()) throw ProtocolError("no legal flip count with " + std::to_string(remaining) + " remaining");
  int best = legal.front();
  for (int n : legal) {
    const int d = std::abs(n - target), bd = std::abs(best - target);
    if (d < bd || (d == bd && n > best)) best = n;
  }
  return best;
}

std::vector<int> stationary_schedule(int target, const GameParams& params) {
  std::vector<int> out;
  int remaining = params.budget;
  while (remaining > 0) {
    const int n = stationary_flip(target, remaining, params);
    out.push_back(n);
    remaining -= n;
  }
  return out;
}

Deck Deck::deal(int cards, Rng& rng) { return from_bits(rng(), cards); }

Deck Deck::from_bits(std::uint64_t red_bits, int cards) {
  if (cards < 1 || cards > 63) throw InvalidArgument("deck size out of range");
  Deck d;
  d.cards_ = cards;
  d.red_bits_ = red_bits & low_bits(cards);
  return d;
}

Deck Deck::from_colors(std::span<const Color> colors) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < colors.size(); ++i)
    if (colors[i] == Color::red) bits |= std::uint64_t{1} << i;
  return from_bits(bits, static_cast<int>(colors.size()));
}

Color Deck::color(int i) const {
  if (i < 0 || i >= cards_) throw InvalidArgument("card index out of range");
  return (red_bits_ >> i) & 1 ? Color::red : Color::green;
}

int Deck::revealed_count() const noexcept { return std::popcount(revealed_); }
int Deck::total_reds() const noexcept { return std::popcount(red_bits_); }

Color Deck::majority() const noexcept { return 2 * total_reds() > cards_ ? Color::red : Color::green; }

void Deck::reveal(std::uint64_t mask) {
  if (mask & ~low_bits(cards_)) throw InvalidArgument("reveal mask outside the deck");
  if (mask & revealed_) throw ProtocolError("card already revealed");
  revealed_ |= mask;
}

void Deck::reveal_all() noexcept { revealed_ = low_bits(cards_); }

double BlockState::average_flips() const noexcept {
  if (records.empty()) return 0.0;
  int total = 0;
  for (const auto& r : records) total += r.flips;
  return static_cast<double>(total) / static_cast<double>(records.size());
}

FlipResult flip(const BlockState& state, Deck& deck, int n, const GameParams& params, Rng& rng) {
  if (state.complete()) throw BlockComplete();
  if (!is_legal_flip(n, state.remaining, params)) throw IllegalFlip(n, legal_flip_choices(state.remaining, params));
  if (deck.flipped()) throw ProtocolError("cards were already flipped this period");
  if (n > deck.size()) throw InvalidArgument("cannot flip more cards than the deck holds");

  // Partial Fisher-Yates over card indices.
  std::vector<int> idx(static_cast<std::size_t>(deck.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::uint64_t mask = 0;
  for (int i = 0; i < n; ++i) {
    const auto j = i + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(deck.size() - i)));
    std::swap(idx[i], idx[j]);
    mask |= std::uint64_t{1} << idx[i];
  }
  deck.reveal(mask);

  FlipResult out;
  out.reds = std::popcount(mask & deck.colors());
  out.greens = n - out.reds;
  for (int i = 0; i < deck.size(); ++i)
    if ((mask >> i) & 1) out.positions.push_back(i);
  return out;
}

ForecastRecord submit_forecast(BlockState& state, Deck& deck, Color guess) {
  if (!deck.flipped()) throw ProtocolError("forecast submitted before any flip this period");
  if (state.complete()) throw BlockComplete();
  ForecastRecord rec;
  rec.flips = deck.revealed_count();
  if (rec.flips > state.remaining) throw ProtocolError("flip count exceeds remaining budget");
  rec.reds = std::popcount(deck.revealed() & deck.colors());
  rec.greens = rec.flips - rec.reds;
  rec.guess = guess;
  rec.majority = deck.majority();
  rec.correct = guess == rec.majority;
  deck.reveal_all();

  state.remaining -= rec.flips;
  state.score += rec.correct ? 1 : -1;
  state.records.push_back(rec);
  return rec;
}

Color majority_guess(int reds, int greens, Rng& rng) {
  if (reds != greens) return reds > greens ? Color::red : Color::green;
  return coin(rng) ? Color::red : Color::green;
}

Cents block_payoff(int score, RewardScheme scheme, std::optional<int> rank, const GameParams& params) {
  if (scheme == RewardScheme::noncompetitive) return params.piece_rate * score;
  if (!rank) throw InvalidArgument("competitive payoff requires a rank");
  if (*rank < 1 || *rank > params.group_size) throw InvalidArgument("rank out of range");
  return params.prize_rates[static_cast<std::size_t>(*rank - 1)] * score;
}

std::vector<int> rank_by_score(std::span<const int> scores, std::span<const std::uint64_t> priorities) {
  if (priorities.size() != scores.size()) throw InvalidArgument("one tie priority per score required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (priorities[a] != priorities[b]) return priorities[a] > priorities[b];
    return a < b;
  });
  std::vector<int> ranks(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = static_cast<int>(pos) + 1;
  return ranks;
}

std::vector<int> rank_by_score(std::span<const int> scores, Rng& rng) {
  std::vector<std::uint64_t> prio(scores.size());
  for (auto& p : prio) p = rng();
  return rank_by_score(scores, prio);
}

}  // namespace evidencelab
