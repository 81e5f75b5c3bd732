#include "evidencelab/behavior.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "evidencelab/csv.hpp"

namespace evidencelab {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

int clamp_flips(int n, const GameParams& params) { return std::clamp(n, params.min_flips, params.max_flips); }

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "red" || s == "R") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "green" || s == "G") return false;
  throw InvalidArgument("cannot read '" + s + "' as a red/green choice");
}

}  // namespace

double qre_red_probability(double p_red_majority, double lambda) {
  if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
  if (p_red_majority < 0 || p_red_majority > 1) throw InvalidArgument("probability out of [0, 1]");
  return 1.0 / (1.0 + std::exp(2 * lambda * (1 - 2 * p_red_majority)));
}

double pure_matcher_red_probability(int reds, int greens) {
  if (reds < 0 || greens < 0) throw InvalidArgument("card counts must be non-negative");
  if (reds + greens == 0) throw InvalidArgument("matcher needs at least one revealed card");
  return static_cast<double>(reds) / (reds + greens);
}

ChoiceRecord make_choice(int reds, int greens, bool chose_red, int cards) {
  ChoiceRecord c;
  c.flips = reds + greens;
  c.reds = reds;
  c.greens = greens;
  c.chose_red = chose_red;
  c.p_red_majority = red_majority_prob(c.flips, reds, cards);
  return c;
}

double qre_log_likelihood(std::span<const ChoiceRecord> choices, double lambda) {
  double ll = 0;
  for (const auto& c : choices) {
    const double x = 2 * lambda * (1 - 2 * c.p_red_majority);
    ll -= c.chose_red ? softplus(x) : softplus(-x);
  }
  return ll;
}

LambdaEstimate estimate_lambda(std::span<const ChoiceRecord> choices, const LambdaSearch& search) {
  if (choices.empty()) throw UnidentifiedParameter("no choices to estimate lambda from");
  if (std::all_of(choices.begin(), choices.end(), [](const ChoiceRecord& c) { return c.p_red_majority == 0.5; }))
    throw UnidentifiedParameter("every signal is indifferent; lambda is not identified");
  if (!(search.upper > 0) || !(search.tolerance > 0)) throw InvalidArgument("bad lambda search bracket");

  // Golden-section search for the maximum; the log-likelihood is concave in lambda.
  const double inv_phi = (std::sqrt(5.0) - 1) / 2;
  double a = 0, b = search.upper;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = qre_log_likelihood(choices, c), fd = qre_log_likelihood(choices, d);
  while (b - a > search.tolerance) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = qre_log_likelihood(choices, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = qre_log_likelihood(choices, d);
    }
  }
  LambdaEstimate est;
  est.lambda = 0.5 * (a + b);
  est.log_likelihood = qre_log_likelihood(choices, est.lambda);
  est.observations = choices.size();
  est.at_upper_bound = est.lambda >= search.upper - 10 * search.tolerance;
  if (est.at_upper_bound) {
    est.se = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  const double h = 1e-3 * std::max(1.0, est.lambda);
  const double second = (qre_log_likelihood(choices, est.lambda + h) - 2 * est.log_likelihood +
                         qre_log_likelihood(choices, est.lambda - h)) / (h * h);
  est.se = second < 0 ? std::sqrt(-1.0 / second) : std::numeric_limits<double>::infinity();
  return est;
}

std::vector<ChoiceRecord> synthesize_qre_choices(double lambda, std::size_t count, const GameParams& params, Rng& rng) {
  params.validate();
  std::vector<ChoiceRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int n = uniform_int(rng, params.min_flips, params.max_flips);
    const std::uint64_t word = rng();
    const int reds = std::popcount(word & ((std::uint64_t{1} << n) - 1));
    auto c = make_choice(reds, n - reds, false, params.cards);
    c.chose_red = uniform01(rng) < qre_red_probability(c.p_red_majority, lambda);
    out.push_back(c);
  }
  return out;
}

std::vector<ChoiceRecord> read_choices_csv(std::istream& is, int cards) {
  const auto table = csv::read(is);
  const auto has = [&](std::string_view name) {
    return std::find(table.header.begin(), table.header.end(), name) != table.header.end();
  };
  // Either n,r,g,chose_red or the forecast export's flips,reds,greens,guess.
  const bool export_schema = !has("n") && has("flips");
  const auto cn = table.column(export_schema ? "flips" : "n"), cr = table.column(export_schema ? "reds" : "r"),
             cg = table.column(export_schema ? "greens" : "g"), cc = table.column(export_schema ? "guess" : "chose_red");
  std::vector<ChoiceRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const int n = std::stoi(row[cn]), r = std::stoi(row[cr]), g = std::stoi(row[cg]);
    if (r + g != n) throw InvalidArgument("choice row with r + g != n");
    if (n < 1 || n > cards) throw InvalidArgument("choice row with n outside [1, cards]");
    const bool red = export_schema ? parse_color(row[cc]) == Color::red : parse_bool(row[cc]);
    out.push_back(make_choice(r, g, red, cards));
  }
  return out;
}

void write_choices_csv(std::ostream& os, std::span<const ChoiceRecord> choices) {
  csv::write_row(os, {"n", "r", "g", "chose_red"});
  for (const auto& c : choices)
    csv::write_row(os, {csv::number(c.flips), csv::number(c.reds), csv::number(c.greens), c.chose_red ? "1" : "0"});
}

nlohmann::json to_json(const LambdaEstimate& est) {
  nlohmann::json j;
  j["lambda"] = est.lambda;
  j["se"] = std::isfinite(est.se) ? nlohmann::json(est.se) : nlohmann::json(nullptr);
  j["log_likelihood"] = est.log_likelihood;
  j["observations"] = est.observations;
  j["at_upper_bound"] = est.at_upper_bound;
  return j;
}

const std::map<int, double>& FeedbackPacket::strategies() const {
  if (!peer_average_flips) throw InformationViolation("peer strategies are not disclosed in this treatment");
  return *peer_average_flips;
}

const std::map<int, int>& FeedbackPacket::scores() const {
  if (!peer_scores) throw InformationViolation("peer scores are not disclosed in this treatment");
  return *peer_scores;
}

int round_half_even(double x) { return static_cast<int>(std::nearbyint(x)); }

std::string policy_name(const PolicyKind& kind) {
  struct Visitor {
    std::string operator()(const Stationary& p) const { return "stationary(" + std::to_string(p.flips) + ")"; }
    std::string operator()(const DpOptimal&) const { return "dp-optimal"; }
    std::string operator()(const QreMatcher&) const { return "qre-matcher"; }
    std::string operator()(const ImitateMean&) const { return "imitate-mean"; }
    std::string operator()(const FollowLeader&) const { return "follow-leader"; }
    std::string operator()(const DistanceResponsive&) const { return "distance-responsive"; }
    std::string operator()(const LuckResponsive&) const { return "luck-responsive"; }
  };
  return std::visit(Visitor{}, kind);
}

PolicyKind parse_policy(const nlohmann::json& j) {
  if (j.is_string()) return parse_policy(nlohmann::json{{"kind", j.get<std::string>()}});
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "stationary") return Stationary{j.value("flips", 5)};
  if (kind == "dp-optimal") return DpOptimal{};
  if (kind == "qre-matcher") return QreMatcher{j.value("lambda", 1.4), j.value("flips", 5)};
  if (kind == "imitate-mean") return ImitateMean{j.value("initial", 10)};
  if (kind == "follow-leader") return FollowLeader{j.value("initial", 10)};
  if (kind == "distance-responsive") return DistanceResponsive{j.value("sensitivity", 1.0), j.value("initial", 10)};
  if (kind == "luck-responsive") return LuckResponsive{j.value("sensitivity", 1.0), j.value("initial", 10)};
  throw InvalidArgument("unknown policy kind '" + kind + "'");
}

nlohmann::json to_json(const PolicyKind& kind) {
  struct Visitor {
    nlohmann::json operator()(const Stationary& p) const { return {{"kind", "stationary"}, {"flips", p.flips}}; }
    nlohmann::json operator()(const DpOptimal&) const { return {{"kind", "dp-optimal"}}; }
    nlohmann::json operator()(const QreMatcher& p) const {
      return {{"kind", "qre-matcher"}, {"lambda", p.lambda}, {"flips", p.flips}};
    }
    nlohmann::json operator()(const ImitateMean& p) const { return {{"kind", "imitate-mean"}, {"initial", p.initial}}; }
    nlohmann::json operator()(const FollowLeader& p) const { return {{"kind", "follow-leader"}, {"initial", p.initial}}; }
    nlohmann::json operator()(const DistanceResponsive& p) const {
      return {{"kind", "distance-responsive"}, {"sensitivity", p.sensitivity}, {"initial", p.initial}};
    }
    nlohmann::json operator()(const LuckResponsive& p) const {
      return {{"kind", "luck-responsive"}, {"sensitivity", p.sensitivity}, {"initial", p.initial}};
    }
  };
  return std::visit(Visitor{}, kind);
}

int policy_step(const PolicyKind& kind, const FeedbackPacket& packet, const GameParams& params) {
  struct Visitor {
    const FeedbackPacket& packet;
    const GameParams& params;

    int operator()(const Stationary& p) const { return clamp_flips(p.flips, params); }
    int operator()(const DpOptimal&) const { return optimal_policy(params).action[static_cast<std::size_t>(params.budget)]; }
    int operator()(const QreMatcher& p) const { return clamp_flips(p.flips, params); }

    int operator()(const ImitateMean&) const {
      double sum = 0;
      int count = 0;
      for (const auto& [id, avg] : packet.strategies()) {
        if (id == packet.member) continue;
        sum += avg;
        ++count;
      }
      if (count == 0) return clamp_flips(round_half_even(packet.average_flips), params);
      return clamp_flips(round_half_even(sum / count), params);
    }

    int operator()(const FollowLeader&) const {
      const auto& strategies = packet.strategies();
      const auto& scores = packet.scores();
      int leader = 0, best = 0;
      for (const auto& [id, s] : scores) {
        if (leader == 0 || s > best) {
          leader = id;
          best = s;
        }
      }
      const auto it = strategies.find(leader);
      if (it == strategies.end()) throw InformationViolation("leader strategy missing from packet");
      return clamp_flips(round_half_even(it->second), params);
    }

    int operator()(const DistanceResponsive& p) const {
      const auto& scores = packet.scores();
      int hi = packet.score, lo = packet.score;
      for (const auto& [id, s] : scores) {
        hi = std::max(hi, s);
        lo = std::min(lo, s);
      }
      const double distance = hi == lo ? 0.5 : static_cast<double>(hi - packet.score) / (hi - lo);
      return clamp_flips(round_half_even(packet.average_flips - p.sensitivity * distance), params);
    }

    int operator()(const LuckResponsive& p) const {
      const double luck = packet.score - expected_score(packet.history, params.cards);
      const double sd = std::sqrt(score_variance(packet.history, params.cards));
      const double z = sd > 0 ? luck / sd : 0.0;
      return clamp_flips(round_half_even(packet.average_flips - p.sensitivity * z), params);
    }
  };
  return std::visit(Visitor{packet, params}, kind);
}

AgentPolicy::AgentPolicy(PolicyKind kind, const GameParams& params) : kind_(std::move(kind)), params_(params) {
  params_.validate();
  struct Initial {
    const GameParams& params;
    int operator()(const Stationary& p) const { return p.flips; }
    int operator()(const DpOptimal&) const { return params.min_flips; }
    int operator()(const QreMatcher& p) const { return p.flips; }
    int operator()(const ImitateMean& p) const { return p.initial; }
    int operator()(const FollowLeader& p) const { return p.initial; }
    int operator()(const DistanceResponsive& p) const { return p.initial; }
    int operator()(const LuckResponsive& p) const { return p.initial; }
  };
  target_ = clamp_flips(std::visit(Initial{params_}, kind_), params_);
  if (std::holds_alternative<DpOptimal>(kind_)) {
    dp_ = optimal_policy(params_);
    target_ = dp_->action[static_cast<std::size_t>(params_.budget)];
  }
}

int AgentPolicy::choose_flips(int remaining) const {
  if (dp_) {
    const int n = dp_->action.at(static_cast<std::size_t>(remaining));
    if (n == 0) throw ProtocolError("no legal flip count at remaining=" + std::to_string(remaining));
    return n;
  }
  return stationary_flip(target_, remaining, params_);
}

Color AgentPolicy::guess(int reds, int greens, Rng& rng) const {
  if (const auto* q = std::get_if<QreMatcher>(&kind_)) {
    const double p = red_majority_prob(reds + greens, reds, params_.cards);
    return uniform01(rng) < qre_red_probability(p, q->lambda) ? Color::red : Color::green;
  }
  return majority_guess(reds, greens, rng);
}

void AgentPolicy::observe(const FeedbackPacket& packet) { target_ = policy_step(kind_, packet, params_); }

}  // namespace evidencelab
