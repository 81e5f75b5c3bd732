#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidencelab/game.hpp"
#include "evidencelab/theory.hpp"

namespace evidencelab {

// ---------------------------------------------------------------------------
// Stochastic choice

// Logit choice of red: 1 / (1 + exp(2 lambda (1 - 2 p))).
double qre_red_probability(double p_red_majority, double lambda);

// Frequency with which a pure probability matcher forecasts red.
double pure_matcher_red_probability(int reds, int greens);

struct ChoiceRecord {
  int flips = 0;
  int reds = 0;
  int greens = 0;
  bool chose_red = false;
  double p_red_majority = 0.5;
};

ChoiceRecord make_choice(int reds, int greens, bool chose_red, int cards);

struct LambdaEstimate {
  double lambda = 0.0;
  double se = 0.0;  // NaN when the estimate sits on the upper bound
  double log_likelihood = 0.0;
  std::size_t observations = 0;
  bool at_upper_bound = false;
};

struct LambdaSearch {
  double upper = 50.0;
  double tolerance = 1e-6;
};

// Maximum likelihood over [0, upper] by golden-section search; SE from the
// numerical observed information. Throws UnidentifiedParameter when every
// record is an indifferent (p = 1/2) signal.
LambdaEstimate estimate_lambda(std::span<const ChoiceRecord> choices, const LambdaSearch& search = {});

double qre_log_likelihood(std::span<const ChoiceRecord> choices, double lambda);

// Synthetic choices: flip counts uniform over [min_flips, max_flips], fair
// decks, red chosen with the logit probability at `lambda`.
std::vector<ChoiceRecord> synthesize_qre_choices(double lambda, std::size_t count, const GameParams& params, Rng& rng);

// CSV with columns n,r,g,chose_red, or a forecast export with
// flips,reds,greens,guess. Extra columns are ignored.
std::vector<ChoiceRecord> read_choices_csv(std::istream& is, int cards);
void write_choices_csv(std::ostream& os, std::span<const ChoiceRecord> choices);

nlohmann::json to_json(const LambdaEstimate& est);

// ---------------------------------------------------------------------------
// Between-block feedback and agent policies

// What a member sees after a block. Peer maps are keyed by member ID 1..k and
// present only when the treatment discloses them.
class FeedbackPacket {
 public:
  int member = 0;
  int block = 0;
  std::vector<ForecastRecord> history;
  int score = 0;
  double average_flips = 0.0;

  std::optional<std::map<int, double>> peer_average_flips;  // two-decimal values
  std::optional<std::map<int, int>> peer_scores;

  // Throw InformationViolation when the field is not disclosed.
  const std::map<int, double>& strategies() const;
  const std::map<int, int>& scores() const;
};

struct Stationary {
  int flips = 5;
};
struct DpOptimal {};
struct QreMatcher {
  double lambda = 1.4;
  int flips = 5;
};
struct ImitateMean {
  int initial = 10;
};
struct FollowLeader {
  int initial = 10;
};
struct DistanceResponsive {
  double sensitivity = 1.0;
  int initial = 10;
};
struct LuckResponsive {
  double sensitivity = 1.0;
  int initial = 10;
};

using PolicyKind =
    std::variant<Stationary, DpOptimal, QreMatcher, ImitateMean, FollowLeader, DistanceResponsive, LuckResponsive>;

std::string policy_name(const PolicyKind& kind);
PolicyKind parse_policy(const nlohmann::json& j);
nlohmann::json to_json(const PolicyKind& kind);

// Round half to even.
int round_half_even(double x);

// Flip target for the next block. Reads only the packet fields the policy
// needs, so an undisclosed field surfaces as InformationViolation.
int policy_step(const PolicyKind& kind, const FeedbackPacket& packet, const GameParams& params);

// Per-member play state for one session: current stationary target plus the
// guessing rule.
class AgentPolicy {
 public:
  AgentPolicy(PolicyKind kind, const GameParams& params);

  const PolicyKind& kind() const noexcept { return kind_; }
  int target() const noexcept { return target_; }

  int choose_flips(int remaining) const;
  Color guess(int reds, int greens, Rng& rng) const;
  void observe(const FeedbackPacket& packet);

 private:
  PolicyKind kind_;
  GameParams params_;
  int target_ = 5;
  std::optional<PolicyValue> dp_;
};

}  // namespace evidencelab
