#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidencelab/behavior.hpp"
#include "evidencelab/game.hpp"

namespace evidencelab {

enum class FeedbackCondition : std::uint8_t { none, strategies, scores, both };

std::string_view to_string(FeedbackCondition f) noexcept;
FeedbackCondition parse_feedback(std::string_view s);

struct TreatmentConfig {
  RewardScheme rewards = RewardScheme::noncompetitive;
  FeedbackCondition feedback = FeedbackCondition::none;
  int blocks = 4;
  int group_size = 5;

  bool discloses_strategies() const noexcept {
    return feedback == FeedbackCondition::strategies || feedback == FeedbackCondition::both;
  }
  bool discloses_scores() const noexcept {
    return feedback == FeedbackCondition::scores || feedback == FeedbackCondition::both;
  }
  // Block 1 is always paid at the piece rate.
  RewardScheme scheme_for_block(int block) const noexcept {
    return block == 1 ? RewardScheme::noncompetitive : rewards;
  }

  // "competitive/both" style name; parse accepts the same form.
  std::string name() const;
  static TreatmentConfig parse(std::string_view name);

  // The eight reward x feedback treatments, noncompetitive first.
  static std::vector<TreatmentConfig> grid();
};

// Average cards per forecast as disclosed to peers.
double round_two_decimals(double x);

// Feedback after `block` for every member (index i is member i + 1); peer
// fields are filled only when the treatment discloses them.
std::vector<FeedbackPacket> make_feedback_packets(const TreatmentConfig& treatment, int block,
                                                  std::span<const BlockState> member_blocks);

// Realized score minus the expected score of the flip counts actually used.
double luck(std::span<const ForecastRecord> records, int score, int cards);

struct GroupMetrics {
  std::vector<double> reldist;  // (own - min) / (max - min); 0.5 each when all tie
  double spearman = 0.0;        // forecasts vs scores, average-rank ties; NaN if either is constant
  double flip_sd = 0.0;         // population SD of forecast counts
};

GroupMetrics group_metrics(std::span<const int> scores, std::span<const int> forecasts);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct MemberBlockLog {
  int member = 0;
  int block = 0;
  RewardScheme scheme = RewardScheme::noncompetitive;
  std::vector<ForecastRecord> records;
  int score = 0;
  double average_flips = 0.0;
  std::optional<int> rank;  // competitive blocks only
  Cents payoff = 0;
  double luck = 0.0;
  double reldist = 0.0;
};

struct GroupBlockLog {
  int block = 0;
  double spearman = 0.0;
  double flip_sd = 0.0;
};

struct SessionLog {
  std::string session_id;
  TreatmentConfig treatment;
  std::uint64_t seed = 0;
  int group = 1;
  std::vector<std::string> policies;   // one per member
  std::vector<MemberBlockLog> members;  // block-major, member-minor
  std::vector<GroupBlockLog> groups;    // one per block
  int selected_block = 0;
  std::vector<Cents> payments;          // per member, from the selected block

  const MemberBlockLog& at(int block, int member) const;
};

// One group playing all blocks. Stream layout under `seed`:
// ("play", block, member) for decks/guesses, ("rank", block) for tie-breaks,
// ("select") for the paid block.
SessionLog run_session(const TreatmentConfig& treatment, const std::vector<PolicyKind>& policies,
                       const GameParams& params, std::uint64_t seed);

// Rebuilds every derived field (scores, luck, ranks, payoffs, group metrics)
// from raw records and the seed.
SessionLog recompute_metrics(const SessionLog& log, const GameParams& params);

// Per treatment x block summary, mean/SD of forecast counts and
// scores, plus block-1 luck.
struct CellStats {
  std::size_t count = 0;
  double forecasts_mean = 0, forecasts_sd = 0;
  double score_mean = 0, score_sd = 0;
  double luck_mean = 0, luck_sd = 0;
};

struct SummaryGrid {
  std::vector<std::string> treatments;  // column order
  int blocks = 0;
  std::map<std::pair<std::string, int>, CellStats> cells;
  std::vector<std::string> warnings;
};

SummaryGrid treatment_table(std::span<const SessionLog> logs,
                            const std::vector<TreatmentConfig>& configured = TreatmentConfig::grid());

// CSV emitters. Forecast and block schemas are shared with session exports.
void write_forecast_csv_header(std::ostream& os);
void write_forecast_csv_rows(std::ostream& os, const SessionLog& log);
void write_block_csv_header(std::ostream& os);
void write_block_csv_rows(std::ostream& os, const SessionLog& log);
void write_summary_csv(std::ostream& os, const SummaryGrid& grid);

struct ScenarioConfig {
  GameParams params;
  std::uint64_t seed = 1;
  std::size_t sessions = 100;  // per treatment
  std::vector<TreatmentConfig> treatments = TreatmentConfig::grid();
  std::vector<PolicyKind> policies;  // one per member

  static ScenarioConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

std::vector<SessionLog> run_scenario(const ScenarioConfig& scenario, unsigned threads = 0);

}  // namespace evidencelab
