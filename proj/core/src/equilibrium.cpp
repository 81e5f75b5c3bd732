#include "evidencelab/equilibrium.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>

#include "evidencelab/csv.hpp"
#include "parallel.hpp"

namespace evidencelab {

namespace {

constexpr std::size_t kChunkSims = 4096;

// Majority-guessing play of stationary schedules, one 64-bit word per period.
// Cards are exchangeable, so revealing the low n bits of an i.i.d. deck has
// the same law as revealing a uniformly chosen subset; bit 63 is the coin for
// a revealed tie.
class BlockKernel {
 public:
  explicit BlockKernel(const GameParams& params) : params_(params) {
    params.validate();
    if (params.cards > 62) throw InvalidArgument("simulation kernel supports at most 62 cards");
    card_mask_ = (std::uint64_t{1} << params.cards) - 1;
    for (int n = params.min_flips; n <= params.max_flips; ++n) schedules_.push_back(stationary_schedule(n, params));
    max_forecasts_ = 0;
    for (const auto& s : schedules_) max_forecasts_ = std::max(max_forecasts_, static_cast<int>(s.size()));
  }

  int max_forecasts() const noexcept { return max_forecasts_; }
  int strategies() const noexcept { return static_cast<int>(schedules_.size()); }
  const std::vector<int>& schedule(int flips) const {
    return schedules_.at(static_cast<std::size_t>(flips - params_.min_flips));
  }

  bool correct(std::uint64_t word, int flips) const noexcept {
    const int reds = std::popcount(word & ((std::uint64_t{1} << flips) - 1));
    const bool red_majority = 2 * std::popcount(word & card_mask_) > params_.cards;
    bool guess_red;
    if (2 * reds != flips) {
      guess_red = 2 * reds > flips;
    } else {
      guess_red = (word >> 63) != 0;
    }
    return guess_red == red_majority;
  }

  int score(const std::uint64_t* words, const std::vector<int>& schedule) const noexcept {
    int s = 0;
    for (std::size_t k = 0; k < schedule.size(); ++k) s += correct(words[k], schedule[k]) ? 1 : -1;
    return s;
  }

 private:
  const GameParams& params_;
  std::vector<std::vector<int>> schedules_;
  std::uint64_t card_mask_ = 0;
  int max_forecasts_ = 0;
};

struct RowAccumulator {
  std::size_t count = 0;
  std::vector<double> sum;    // per deviant strategy
  std::vector<double> cross;  // D x D sums of products

  explicit RowAccumulator(std::size_t d = 0) : sum(d, 0.0), cross(d * d, 0.0) {}

  void merge(const RowAccumulator& o) {
    count += o.count;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += o.sum[i];
    for (std::size_t i = 0; i < cross.size(); ++i) cross[i] += o.cross[i];
  }
};

RowAccumulator simulate_row_chunk(const BlockKernel& kernel, int others, const UtilitySpec& utility,
                                  const EquilibriumConfig& cfg, std::size_t chunk) {
  const auto& p = cfg.params;
  const std::size_t begin = chunk * kChunkSims;
  const std::size_t end = std::min(cfg.sims, begin + kChunkSims);
  const auto d_count = static_cast<std::size_t>(kernel.strategies());
  const auto per_player = static_cast<std::size_t>(kernel.max_forecasts());
  const int field = p.group_size - 1;

  Rng rng = make_stream(cfg.seed, {stream_tag("equilibrium"), static_cast<std::uint64_t>(others), chunk});
  std::vector<std::uint64_t> words(static_cast<std::size_t>(p.group_size) * per_player);
  std::vector<std::uint64_t> priority(static_cast<std::size_t>(p.group_size));
  std::vector<int> field_scores(static_cast<std::size_t>(field));
  std::vector<double> u(d_count);
  const auto& field_schedule = kernel.schedule(others);

  RowAccumulator acc(d_count);
  for (std::size_t s = begin; s < end; ++s) {
    for (auto& w : words) w = rng();
    for (auto& pr : priority) pr = rng();
    for (int j = 0; j < field; ++j)
      field_scores[j] = kernel.score(words.data() + (static_cast<std::size_t>(j) + 1) * per_player, field_schedule);

    for (std::size_t d = 0; d < d_count; ++d) {
      const int dev_flips = p.min_flips + static_cast<int>(d);
      const int dev_score = kernel.score(words.data(), kernel.schedule(dev_flips));
      int rank = 1;
      for (int j = 0; j < field; ++j) {
        const int fs = field_scores[j];
        if (fs > dev_score || (fs == dev_score && priority[j + 1] > priority[0])) ++rank;
      }
      const double money = static_cast<double>(p.prize_rates[static_cast<std::size_t>(rank - 1)] * dev_score) / 100.0;
      u[d] = utility(money);
    }
    ++acc.count;
    for (std::size_t a = 0; a < d_count; ++a) {
      acc.sum[a] += u[a];
      for (std::size_t b = a; b < d_count; ++b) acc.cross[a * d_count + b] += u[a] * u[b];
    }
  }
  return acc;
}

BestResponse summarize_row(int others, const RowAccumulator& acc, const EquilibriumConfig& cfg) {
  const auto d_count = acc.sum.size();
  const double n = static_cast<double>(acc.count);
  const double bessel = acc.count > 1 ? n / (n - 1) : 0.0;
  auto mean = [&](std::size_t a) { return acc.sum[a] / n; };
  auto cov = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    return (acc.cross[a * d_count + b] / n - mean(a) * mean(b)) * bessel;
  };

  BestResponse br;
  br.others = others;
  for (std::size_t a = 0; a < d_count; ++a) {
    const double var = std::max(0.0, cov(a, a));
    br.row.push_back({cfg.params.min_flips + static_cast<int>(a), mean(a), std::sqrt(var / n)});
  }
  std::size_t best = 0;
  for (std::size_t a = 1; a < d_count; ++a)
    if (mean(a) > mean(best)) best = a;
  std::size_t runner = best == 0 ? 1 : 0;
  for (std::size_t a = 0; a < d_count; ++a)
    if (a != best && mean(a) > mean(runner)) runner = a;
  br.best = br.row[best].deviant;
  if (d_count < 2) {
    br.runner_up = br.best;
    return br;
  }
  br.runner_up = br.row[runner].deviant;
  br.gap = mean(best) - mean(runner);
  const double diff_var = std::max(0.0, cov(best, best) + cov(runner, runner) - 2 * cov(best, runner));
  br.gap_se = std::sqrt(diff_var / n);
  br.ambiguous = !(br.gap > cfg.separation_se * br.gap_se);
  return br;
}

std::size_t chunk_count(std::size_t sims) { return (sims + kChunkSims - 1) / kChunkSims; }

void check_config(const EquilibriumConfig& cfg) {
  cfg.params.validate();
  if (cfg.sims < 2) throw InvalidArgument("equilibrium search needs at least 2 simulations per cell");
}

}  // namespace

ScoreSamples simulate_block_scores(const StrategyProfile& profile, std::size_t sims, const GameParams& params, Rng& rng) {
  const BlockKernel kernel(params);
  for (int n : {profile.others, profile.deviant})
    if (n < params.min_flips || n > params.max_flips) throw InvalidArgument("strategy flip count out of range");
  const auto per_player = static_cast<std::size_t>(kernel.max_forecasts());
  std::vector<std::uint64_t> words(per_player);
  ScoreSamples out;
  out.group_size = params.group_size;
  out.scores.reserve(sims * static_cast<std::size_t>(params.group_size));
  for (std::size_t s = 0; s < sims; ++s) {
    for (int j = 0; j < params.group_size; ++j) {
      for (auto& w : words) w = rng();
      out.scores.push_back(kernel.score(words.data(), kernel.schedule(j == 0 ? profile.deviant : profile.others)));
    }
  }
  return out;
}

std::vector<double> competitive_payoffs(std::span<const int> scores, const GameParams& params, Rng& rng) {
  if (static_cast<int>(scores.size()) != params.group_size) throw InvalidArgument("one score per group member required");
  const auto ranks = rank_by_score(scores, rng);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = static_cast<double>(block_payoff(scores[i], RewardScheme::competitive, ranks[i], params)) / 100.0;
  return out;
}

BestResponse best_response(int others, const UtilitySpec& utility, const EquilibriumConfig& config) {
  check_config(config);
  utility.validate();
  if (others < config.params.min_flips || others > config.params.max_flips)
    throw InvalidArgument("n_others out of range");
  const BlockKernel kernel(config.params);
  const std::size_t chunks = chunk_count(config.sims);
  std::vector<RowAccumulator> parts(chunks);
  detail::parallel_for(chunks, config.threads, [&](std::size_t c) {
    parts[c] = simulate_row_chunk(kernel, others, utility, config, c);
  });
  RowAccumulator total(static_cast<std::size_t>(kernel.strategies()));
  for (const auto& p : parts) total.merge(p);
  return summarize_row(others, total, config);
}

const BestResponse& BestResponseMap::at(int others) const {
  for (const auto& r : rows)
    if (r.others == others) return r;
  throw InvalidArgument("no best-response row for n_others=" + std::to_string(others));
}

bool BestResponseMap::ambiguous() const noexcept {
  return std::any_of(rows.begin(), rows.end(), [](const BestResponse& r) { return r.ambiguous; });
}

BestResponseMap best_response_map(const UtilitySpec& utility, const EquilibriumConfig& config) {
  check_config(config);
  utility.validate();
  const BlockKernel kernel(config.params);
  const auto strategies = static_cast<std::size_t>(kernel.strategies());
  const std::size_t chunks = chunk_count(config.sims);
  std::vector<RowAccumulator> parts(strategies * chunks);
  detail::parallel_for(parts.size(), config.threads, [&](std::size_t i) {
    const int others = config.params.min_flips + static_cast<int>(i / chunks);
    parts[i] = simulate_row_chunk(kernel, others, utility, config, i % chunks);
  });
  BestResponseMap map;
  map.utility = utility;
  for (std::size_t r = 0; r < strategies; ++r) {
    RowAccumulator total(strategies);
    for (std::size_t c = 0; c < chunks; ++c) total.merge(parts[r * chunks + c]);
    map.rows.push_back(summarize_row(config.params.min_flips + static_cast<int>(r), total, config));
  }
  return map;
}

std::vector<int> symmetric_fixed_points(const BestResponseMap& map) {
  std::vector<int> out;
  for (const auto& r : map.rows)
    if (r.best == r.others) out.push_back(r.others);
  return out;
}

EquilibriumSet find_symmetric_equilibria(const UtilitySpec& utility, const EquilibriumConfig& config) {
  EquilibriumSet eq;
  eq.map = best_response_map(utility, config);
  eq.fixed_points = symmetric_fixed_points(eq.map);
  return eq;
}

std::optional<double> cara_switch_threshold(double lo, double hi, double tol, const EquilibriumConfig& config) {
  if (!(lo > 0) || !(hi > lo) || !(tol > 0)) throw InvalidArgument("need 0 < lo < hi and tol > 0");
  const int safest = config.params.max_flips;
  auto safest_is_fixed = [&](double alpha) {
    return best_response(safest, UtilitySpec::cara(alpha), config).best == safest;
  };
  if (safest_is_fixed(lo) || !safest_is_fixed(hi)) return std::nullopt;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (safest_is_fixed(mid) ? hi : lo) = mid;
  }
  return hi;
}

void write_payoff_matrix_csv(std::ostream& os, const BestResponseMap& map) {
  csv::write_row(os, {"utility", "n_others", "n_deviant", "mean", "se"});
  const auto label = map.utility.label();
  for (const auto& r : map.rows)
    for (const auto& c : r.row)
      csv::write_row(os, {label, csv::number(r.others), csv::number(c.deviant), csv::number(c.mean), csv::number(c.se)});
}

void write_best_response_csv(std::ostream& os, const BestResponseMap& map) {
  csv::write_row(os, {"utility", "n_others", "n_opt", "runner_up", "gap", "gap_se", "ambiguous"});
  const auto label = map.utility.label();
  for (const auto& r : map.rows)
    csv::write_row(os, {label, csv::number(r.others), csv::number(r.best), csv::number(r.runner_up),
                        csv::number(r.gap), csv::number(r.gap_se), r.ambiguous ? "1" : "0"});
}

void write_equilibria_csv(std::ostream& os, const EquilibriumSet& eq) {
  csv::write_row(os, {"utility", "n_star", "mean", "se", "gap", "gap_se", "ambiguous"});
  const auto label = eq.map.utility.label();
  for (int n : eq.fixed_points) {
    const auto& r = eq.map.at(n);
    const auto& cell = r.row[static_cast<std::size_t>(n - r.row.front().deviant)];
    csv::write_row(os, {label, csv::number(n), csv::number(cell.mean), csv::number(cell.se), csv::number(r.gap),
                        csv::number(r.gap_se), r.ambiguous ? "1" : "0"});
  }
}

}  // namespace evidencelab
