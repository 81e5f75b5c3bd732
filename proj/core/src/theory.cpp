#include "evidencelab/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <sstream>

#include "evidencelab/csv.hpp"

namespace evidencelab {

namespace {

constexpr int kMaxBinomial = 63;

// Pascal's triangle in exact integers; C(63, 31) < 2^63.
const std::array<std::array<std::uint64_t, kMaxBinomial + 1>, kMaxBinomial + 1>& pascal() {
  static const auto table = [] {
    std::array<std::array<std::uint64_t, kMaxBinomial + 1>, kMaxBinomial + 1> t{};
    for (int n = 0; n <= kMaxBinomial; ++n) {
      t[n][0] = t[n][n] = 1;
      for (int k = 1; k < n; ++k) t[n][k] = t[n - 1][k - 1] + t[n - 1][k];
    }
    return t;
  }();
  return table;
}

std::uint64_t binom(int n, int k) {
  if (k < 0 || k > n) return 0;
  return pascal()[n][k];
}

void check_cards(int cards) {
  if (cards < 1 || cards % 2 == 0 || cards > 61) throw InvalidArgument("card count must be odd and in [1, 61]");
}

// Number of hidden-card configurations (out of 2^(cards-flips)) in which red
// ends up the majority, given `reds` revealed reds.
std::uint64_t red_majority_count(int flips, int reds, int cards) {
  const int hidden = cards - flips;
  const int need = (cards + 1) / 2 - reds;  // hidden reds still required
  if (need <= 0) return std::uint64_t{1} << hidden;
  std::uint64_t count = 0;
  for (int j = need; j <= hidden; ++j) count += binom(hidden, j);
  return count;
}

}  // namespace

double majority_prob_given_flips(int flips, int reds, int cards) {
  check_cards(cards);
  if (flips < 1 || flips > cards) throw InvalidArgument("flip count out of range");
  if (reds < 0 || reds > flips) throw InvalidArgument("red count out of range");
  if (2 * reds == flips) throw InvalidArgument("revealed tie has no strict majority; it enters p_n at 1/2");
  if (2 * reds < flips) throw InvalidArgument("reds must be the revealed majority");
  return std::ldexp(static_cast<double>(red_majority_count(flips, reds, cards)), -(cards - flips));
}

double red_majority_prob(int flips, int reds, int cards) {
  if (2 * reds == flips) return 0.5;
  if (2 * reds > flips) return majority_prob_given_flips(flips, reds, cards);
  return 1.0 - majority_prob_given_flips(flips, flips - reds, cards);
}

double ExactProbability::value() const noexcept {
  return std::ldexp(static_cast<double>(numerator), -log2_denominator);
}

ExactProbability correct_forecast_prob_exact(int flips, int cards) {
  check_cards(cards);
  if (flips < 1 || flips > cards) throw InvalidArgument("flip count out of range");
  // p_n * 2^cards = 2 * sum_{r > n/2} C(n, r) * count(n, r)   [+ tie term for even n]
  std::uint64_t total = 0;
  for (int r = flips / 2 + 1; r <= flips; ++r) total += binom(flips, r) * red_majority_count(flips, r, cards);
  total *= 2;
  if (flips % 2 == 0) total += binom(flips, flips / 2) << (cards - flips - 1);
  int log2_den = cards;
  while (log2_den > 0 && total % 2 == 0) {
    total /= 2;
    --log2_den;
  }
  return {total, log2_den};
}

double correct_forecast_prob(int flips, int cards) { return correct_forecast_prob_exact(flips, cards).value(); }

double expected_score(std::span<const ForecastRecord> records, int cards) {
  double total = 0;
  for (const auto& r : records) total += 2 * correct_forecast_prob(r.flips, cards) - 1;
  return total;
}

double score_variance(std::span<const ForecastRecord> records, int cards) {
  double total = 0;
  for (const auto& r : records) {
    const double p = correct_forecast_prob(r.flips, cards);
    total += 4 * p * (1 - p);
  }
  return total;
}

ScoreMoments expected_block_score(int flips, const GameParams& params) {
  params.validate();
  if (flips < params.min_flips || flips > params.max_flips) throw InvalidArgument("flip count out of range");
  const double p = correct_forecast_prob(flips, params.cards);
  const double forecasts = static_cast<double>(params.budget) / flips;
  return {forecasts * (2 * p - 1), std::sqrt(forecasts * 4 * p * (1 - p))};
}

ScoreMoments stationary_score_moments(int target, const GameParams& params) {
  params.validate();
  double mean = 0, var = 0;
  for (int n : stationary_schedule(target, params)) {
    const double p = correct_forecast_prob(n, params.cards);
    mean += 2 * p - 1;
    var += 4 * p * (1 - p);
  }
  return {mean, std::sqrt(var)};
}

std::vector<double> schedule_score_distribution(const std::vector<int>& schedule, int cards) {
  std::vector<double> dist{1.0};
  for (int n : schedule) {
    const double p = correct_forecast_prob(n, cards);
    std::vector<double> next(dist.size() + 1, 0.0);
    for (std::size_t k = 0; k < dist.size(); ++k) {
      next[k] += dist[k] * (1 - p);
      next[k + 1] += dist[k] * p;
    }
    dist = std::move(next);
  }
  return dist;
}

void UtilitySpec::validate() const {
  if (!std::isfinite(money_per_point)) throw InvalidArgument("money per point must be finite");
  switch (kind) {
    case UtilityKind::risk_neutral:
      break;
    case UtilityKind::cara:
      if (!std::isfinite(alpha) || alpha <= 0) throw InvalidArgument("CARA alpha must be finite and positive");
      break;
    case UtilityKind::prospect:
      if (!std::isfinite(alpha_gain) || !std::isfinite(beta_loss) || alpha_gain <= 0 || alpha_gain >= beta_loss)
        throw InvalidArgument("prospect exponents must satisfy 0 < alpha_gain < beta_loss");
      break;
  }
}

double UtilitySpec::operator()(double money) const {
  switch (kind) {
    case UtilityKind::risk_neutral:
      return money;
    case UtilityKind::cara:
      return -std::expm1(-alpha * money) / alpha;
    case UtilityKind::prospect:
      return std::pow(std::max(0.0, money), alpha_gain) - std::pow(std::max(0.0, -money), beta_loss);
  }
  return money;
}

std::string UtilitySpec::label() const {
  std::ostringstream os;
  switch (kind) {
    case UtilityKind::risk_neutral:
      os << "risk-neutral";
      break;
    case UtilityKind::cara:
      os << "cara(" << alpha << ")";
      break;
    case UtilityKind::prospect:
      os << "prospect(" << alpha_gain << ";" << beta_loss << ")";
      break;
  }
  return os.str();
}

UtilitySpec parse_utility(const std::string& kind, double alpha, double alpha_gain, double beta_loss) {
  UtilitySpec spec;
  if (kind == "risk-neutral" || kind == "neutral") {
    spec = UtilitySpec::risk_neutral();
  } else if (kind == "cara") {
    spec = UtilitySpec::cara(alpha);
  } else if (kind == "prospect") {
    spec = UtilitySpec::prospect(alpha_gain, beta_loss);
  } else {
    throw InvalidArgument("unknown utility '" + kind + "' (expected risk-neutral, cara or prospect)");
  }
  spec.validate();
  return spec;
}

double expected_block_utility(int flips, const UtilitySpec& spec, const GameParams& params, KRounding rounding) {
  params.validate();
  spec.validate();
  if (flips < params.min_flips || flips > params.max_flips) throw InvalidArgument("flip count out of range");
  const double real_k = static_cast<double>(params.budget) / flips;
  const int k_max = static_cast<int>(rounding == KRounding::floor ? std::floor(real_k) : std::round(real_k));
  if (k_max > kMaxBinomial) throw InvalidArgument("too many forecasts for the exact binomial table");
  const double p = correct_forecast_prob(flips, params.cards);
  double total = 0;
  for (int k = 0; k <= k_max; ++k) {
    const double prob = static_cast<double>(binom(k_max, k)) * std::pow(p, k) * std::pow(1 - p, k_max - k);
    if (prob == 0) continue;
    total += prob * spec(spec.money_per_point * (2 * k - k_max));
  }
  return total;
}

double stationary_block_utility(int target, const UtilitySpec& spec, const GameParams& params) {
  params.validate();
  spec.validate();
  const auto schedule = stationary_schedule(target, params);
  const auto dist = schedule_score_distribution(schedule, params.cards);
  const int forecasts = static_cast<int>(schedule.size());
  double total = 0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    if (dist[k] == 0) continue;
    total += dist[k] * spec(spec.money_per_point * (2 * static_cast<int>(k) - forecasts));
  }
  return total;
}

PolicyValue optimal_policy(const GameParams& params) {
  params.validate();
  constexpr double kTieTolerance = 1e-12;
  const auto n_budget = static_cast<std::size_t>(params.budget);
  PolicyValue pv;
  pv.value.assign(n_budget + 1, std::nullopt);
  pv.action.assign(n_budget + 1, 0);
  pv.value[0] = 0.0;

  std::vector<double> gain(static_cast<std::size_t>(params.max_flips) + 1, 0.0);
  for (int n = params.min_flips; n <= params.max_flips; ++n)
    gain[n] = 2 * correct_forecast_prob(n, params.cards) - 1;

  for (int r = 1; r <= params.budget; ++r) {
    std::optional<double> best;
    int best_n = 0;
    for (int n = params.min_flips; n <= std::min(params.max_flips, r); ++n) {
      if (!is_legal_flip(n, r, params)) continue;
      const auto& rest = pv.value[static_cast<std::size_t>(r - n)];
      if (!rest) continue;
      const double v = gain[n] + *rest;
      if (!best || v > *best + kTieTolerance) {
        best = v;
        best_n = n;
      }
    }
    pv.value[static_cast<std::size_t>(r)] = best;
    pv.action[static_cast<std::size_t>(r)] = best_n;
  }
  return pv;
}

std::vector<TheoryRow> theory_table(const GameParams& params, const std::vector<UtilitySpec>& utilities,
                                    KRounding rounding) {
  params.validate();
  std::vector<TheoryRow> rows;
  for (int n = params.min_flips; n <= params.max_flips; ++n) {
    TheoryRow row;
    row.flips = n;
    row.p = correct_forecast_prob(n, params.cards);
    const auto m = expected_block_score(n, params);
    row.expected_score = m.mean;
    row.score_sd = m.sd;
    for (const auto& u : utilities) row.utilities.push_back(expected_block_utility(n, u, params, rounding));
    const auto sm = stationary_score_moments(n, params);
    row.schedule_score = sm.mean;
    row.schedule_sd = sm.sd;
    for (const auto& u : utilities) row.schedule_utilities.push_back(stationary_block_utility(n, u, params));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_theory_csv(std::ostream& os, const std::vector<TheoryRow>& rows, const std::vector<UtilitySpec>& utilities) {
  std::vector<std::string> header{"n", "p_n", "S_n", "sd_n"};
  for (const auto& u : utilities) header.push_back("U_n[" + u.label() + "]");
  header.push_back("S_schedule_n");
  header.push_back("sd_schedule_n");
  for (const auto& u : utilities) header.push_back("U_schedule_n[" + u.label() + "]");
  csv::write_row(os, header);
  for (const auto& r : rows) {
    std::vector<std::string> f{csv::number(r.flips), csv::number(r.p), csv::number(r.expected_score),
                               csv::number(r.score_sd)};
    for (double u : r.utilities) f.push_back(csv::number(u));
    f.push_back(csv::number(r.schedule_score));
    f.push_back(csv::number(r.schedule_sd));
    for (double u : r.schedule_utilities) f.push_back(csv::number(u));
    csv::write_row(os, f);
  }
}

}  // namespace evidencelab
