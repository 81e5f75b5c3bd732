#include "evidencelab/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "evidencelab/csv.hpp"
#include "evidencelab/theory.hpp"
#include "parallel.hpp"

namespace evidencelab {

namespace {

struct MeanSd {
  double mean = 0, sd = 0;
};

// Sample SD (n - 1); zero for fewer than two values.
MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::string_view to_string(FeedbackCondition f) noexcept {
  switch (f) {
    case FeedbackCondition::none:
      return "none";
    case FeedbackCondition::strategies:
      return "strategies";
    case FeedbackCondition::scores:
      return "scores";
    case FeedbackCondition::both:
      return "both";
  }
  return "none";
}

FeedbackCondition parse_feedback(std::string_view s) {
  for (auto f : {FeedbackCondition::none, FeedbackCondition::strategies, FeedbackCondition::scores,
                 FeedbackCondition::both})
    if (s == to_string(f)) return f;
  throw InvalidArgument("unknown feedback condition '" + std::string(s) + "'");
}

std::string TreatmentConfig::name() const {
  return std::string(to_string(rewards)) + "/" + std::string(to_string(feedback));
}

TreatmentConfig TreatmentConfig::parse(std::string_view name) {
  const auto slash = name.find('/');
  if (slash == std::string_view::npos) throw InvalidArgument("treatment must look like 'competitive/both'");
  TreatmentConfig t;
  t.rewards = parse_reward_scheme(name.substr(0, slash));
  t.feedback = parse_feedback(name.substr(slash + 1));
  return t;
}

std::vector<TreatmentConfig> TreatmentConfig::grid() {
  std::vector<TreatmentConfig> out;
  for (auto r : {RewardScheme::noncompetitive, RewardScheme::competitive})
    for (auto f : {FeedbackCondition::none, FeedbackCondition::strategies, FeedbackCondition::scores,
                   FeedbackCondition::both})
      out.push_back(TreatmentConfig{r, f, 4, 5});
  return out;
}

double round_two_decimals(double x) { return std::round(x * 100.0) / 100.0; }

std::vector<FeedbackPacket> make_feedback_packets(const TreatmentConfig& treatment, int block,
                                                  std::span<const BlockState> member_blocks) {
  std::map<int, double> strategies;
  std::map<int, int> scores;
  for (std::size_t i = 0; i < member_blocks.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    strategies[id] = round_two_decimals(member_blocks[i].average_flips());
    scores[id] = member_blocks[i].score;
  }
  std::vector<FeedbackPacket> out;
  for (std::size_t i = 0; i < member_blocks.size(); ++i) {
    FeedbackPacket p;
    p.member = static_cast<int>(i) + 1;
    p.block = block;
    p.history = member_blocks[i].records;
    p.score = member_blocks[i].score;
    p.average_flips = member_blocks[i].average_flips();
    if (treatment.discloses_strategies()) p.peer_average_flips = strategies;
    if (treatment.discloses_scores()) p.peer_scores = scores;
    out.push_back(std::move(p));
  }
  return out;
}

double luck(std::span<const ForecastRecord> records, int score, int cards) {
  return score - expected_score(records, cards);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman needs equal-length inputs");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

GroupMetrics group_metrics(std::span<const int> scores, std::span<const int> forecasts) {
  if (scores.size() != forecasts.size() || scores.empty())
    throw InvalidArgument("group metrics need one score and forecast count per member");
  GroupMetrics g;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  for (int s : scores) g.reldist.push_back(*hi == *lo ? 0.5 : static_cast<double>(s - *lo) / (*hi - *lo));

  std::vector<double> f(forecasts.begin(), forecasts.end()), sc(scores.begin(), scores.end());
  g.spearman = spearman(f, sc);
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double ss = 0;
  for (double x : f) ss += (x - mean) * (x - mean);
  g.flip_sd = std::sqrt(ss / static_cast<double>(f.size()));
  return g;
}

const MemberBlockLog& SessionLog::at(int block, int member) const {
  for (const auto& m : members)
    if (m.block == block && m.member == member) return m;
  throw InvalidArgument("no log entry for block " + std::to_string(block) + " member " + std::to_string(member));
}

SessionLog recompute_metrics(const SessionLog& raw, const GameParams& params) {
  SessionLog log = raw;
  const auto& t = log.treatment;
  log.groups.clear();
  for (int b = 1; b <= t.blocks; ++b) {
    std::vector<MemberBlockLog*> row;
    for (auto& m : log.members)
      if (m.block == b) row.push_back(&m);
    std::sort(row.begin(), row.end(), [](auto* a, auto* c) { return a->member < c->member; });
    if (static_cast<int>(row.size()) != t.group_size) throw InvalidArgument("incomplete block in session log");

    std::vector<int> scores, forecasts;
    for (auto* m : row) {
      m->scheme = t.scheme_for_block(b);
      m->score = 0;
      for (const auto& r : m->records) m->score += r.correct ? 1 : -1;
      BlockState tmp{0, m->score, m->records};
      m->average_flips = tmp.average_flips();
      m->luck = luck(m->records, m->score, params.cards);
      scores.push_back(m->score);
      forecasts.push_back(static_cast<int>(m->records.size()));
    }
    if (t.scheme_for_block(b) == RewardScheme::competitive) {
      Rng rank_rng = make_stream(log.seed, {stream_tag("rank"), static_cast<std::uint64_t>(b)});
      const auto ranks = rank_by_score(scores, rank_rng);
      for (std::size_t i = 0; i < row.size(); ++i) {
        row[i]->rank = ranks[i];
        row[i]->payoff = block_payoff(row[i]->score, RewardScheme::competitive, ranks[i], params);
      }
    } else {
      for (auto* m : row) {
        m->rank.reset();
        m->payoff = block_payoff(m->score, RewardScheme::noncompetitive, std::nullopt, params);
      }
    }
    const auto g = group_metrics(scores, forecasts);
    for (std::size_t i = 0; i < row.size(); ++i) row[i]->reldist = g.reldist[i];
    log.groups.push_back({b, g.spearman, g.flip_sd});
  }
  Rng select_rng = make_stream(log.seed, {stream_tag("select")});
  log.selected_block = uniform_int(select_rng, 1, t.blocks);
  log.payments.clear();
  for (int m = 1; m <= t.group_size; ++m) log.payments.push_back(log.at(log.selected_block, m).payoff);
  return log;
}

SessionLog run_session(const TreatmentConfig& treatment, const std::vector<PolicyKind>& policies,
                       const GameParams& params, std::uint64_t seed) {
  params.validate();
  if (treatment.group_size != params.group_size) throw InvalidArgument("treatment and params disagree on group size");
  if (static_cast<int>(policies.size()) != treatment.group_size) throw InvalidArgument("one policy per member required");

  std::vector<AgentPolicy> agents;
  for (const auto& p : policies) agents.emplace_back(p, params);

  SessionLog log;
  log.treatment = treatment;
  log.seed = seed;
  for (const auto& p : policies) log.policies.push_back(policy_name(p));

  for (int b = 1; b <= treatment.blocks; ++b) {
    std::vector<BlockState> states;
    for (int m = 1; m <= treatment.group_size; ++m) {
      auto& agent = agents[static_cast<std::size_t>(m - 1)];
      Rng rng = make_stream(seed, {stream_tag("play"), static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(m)});
      auto state = BlockState::start(params);
      while (!state.complete()) {
        Deck deck = Deck::deal(params.cards, rng);
        const auto fr = flip(state, deck, agent.choose_flips(state.remaining), params, rng);
        submit_forecast(state, deck, agent.guess(fr.reds, fr.greens, rng));
      }
      MemberBlockLog entry;
      entry.member = m;
      entry.block = b;
      entry.records = state.records;
      log.members.push_back(std::move(entry));
      states.push_back(std::move(state));
    }
    if (b < treatment.blocks) {
      const auto packets = make_feedback_packets(treatment, b, states);
      for (std::size_t i = 0; i < agents.size(); ++i) agents[i].observe(packets[i]);
    }
  }
  return recompute_metrics(log, params);
}

SummaryGrid treatment_table(std::span<const SessionLog> logs, const std::vector<TreatmentConfig>& configured) {
  SummaryGrid grid;
  for (const auto& t : configured) grid.blocks = std::max(grid.blocks, t.blocks);
  for (const auto& t : configured) {
    const auto name = t.name();
    std::vector<const SessionLog*> mine;
    for (const auto& l : logs)
      if (l.treatment.name() == name) mine.push_back(&l);
    if (mine.empty()) {
      grid.warnings.push_back("no sessions for treatment " + name + "; column omitted");
      continue;
    }
    grid.treatments.push_back(name);
    for (int b = 1; b <= t.blocks; ++b) {
      std::vector<double> forecasts, scores, lucks;
      for (const auto* l : mine)
        for (const auto& m : l->members)
          if (m.block == b) {
            forecasts.push_back(static_cast<double>(m.records.size()));
            scores.push_back(m.score);
            lucks.push_back(m.luck);
          }
      CellStats c;
      c.count = forecasts.size();
      const auto f = mean_sd(forecasts), s = mean_sd(scores), k = mean_sd(lucks);
      c.forecasts_mean = f.mean;
      c.forecasts_sd = f.sd;
      c.score_mean = s.mean;
      c.score_sd = s.sd;
      c.luck_mean = k.mean;
      c.luck_sd = k.sd;
      grid.cells[{name, b}] = c;
    }
  }
  return grid;
}

void write_forecast_csv_header(std::ostream& os) {
  csv::write_row(os, {"session", "treatment", "group", "member", "block", "period", "flips", "reds", "greens", "guess",
                      "majority", "correct"});
}

void write_forecast_csv_rows(std::ostream& os, const SessionLog& log) {
  const auto treatment = log.treatment.name();
  for (const auto& m : log.members) {
    int period = 0;
    for (const auto& r : m.records) {
      csv::write_row(os, {log.session_id, treatment, csv::number(log.group), csv::number(m.member), csv::number(m.block),
                          csv::number(++period), csv::number(r.flips), csv::number(r.reds), csv::number(r.greens),
                          std::string(to_string(r.guess)), std::string(to_string(r.majority)), r.correct ? "1" : "0"});
    }
  }
}

void write_block_csv_header(std::ostream& os) {
  csv::write_row(os, {"session", "treatment", "group", "member", "block", "scheme", "forecasts", "score",
                      "average_flips", "rank", "payoff_cents", "luck", "reldist", "spearman", "flip_sd", "selected"});
}

void write_block_csv_rows(std::ostream& os, const SessionLog& log) {
  const auto treatment = log.treatment.name();
  for (const auto& m : log.members) {
    const GroupBlockLog* g = nullptr;
    for (const auto& gb : log.groups)
      if (gb.block == m.block) g = &gb;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    csv::write_row(os, {log.session_id, treatment, csv::number(log.group), csv::number(m.member), csv::number(m.block),
                        std::string(to_string(m.scheme)), csv::number(static_cast<int>(m.records.size())),
                        csv::number(m.score), csv::number(m.average_flips), m.rank ? csv::number(*m.rank) : "",
                        csv::number(static_cast<long long>(m.payoff)), csv::number(m.luck), csv::number(m.reldist),
                        csv::number(g ? g->spearman : nan), csv::number(g ? g->flip_sd : nan),
                        m.block == log.selected_block ? "1" : "0"});
  }
}

void write_summary_csv(std::ostream& os, const SummaryGrid& grid) {
  std::vector<std::string> header{"panel", "block", "measure", "statistic"};
  header.insert(header.end(), grid.treatments.begin(), grid.treatments.end());
  csv::write_row(os, header);
  auto emit = [&](int b, const char* measure, const char* stat, double CellStats::*field) {
    std::vector<std::string> row{std::string(1, static_cast<char>('A' + b - 1)), csv::number(b), measure, stat};
    for (const auto& t : grid.treatments) {
      const auto it = grid.cells.find({t, b});
      row.push_back(it == grid.cells.end() ? "" : csv::number(it->second.*field));
    }
    csv::write_row(os, row);
  };
  for (int b = 1; b <= grid.blocks; ++b) {
    emit(b, "forecasts", "mean", &CellStats::forecasts_mean);
    emit(b, "forecasts", "sd", &CellStats::forecasts_sd);
    emit(b, "score", "mean", &CellStats::score_mean);
    emit(b, "score", "sd", &CellStats::score_sd);
    if (b == 1) {
      emit(b, "luck", "mean", &CellStats::luck_mean);
      emit(b, "luck", "sd", &CellStats::luck_sd);
    }
  }
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& j) {
  ScenarioConfig s;
  if (j.contains("params")) s.params = j.at("params").get<GameParams>();
  s.seed = j.value("seed", s.seed);
  s.sessions = j.value("sessions", s.sessions);
  if (j.contains("treatments")) {
    const auto& t = j.at("treatments");
    if (t.is_string() && t.get<std::string>() == "all") {
      s.treatments = TreatmentConfig::grid();
    } else {
      s.treatments.clear();
      for (const auto& name : t) s.treatments.push_back(TreatmentConfig::parse(name.get<std::string>()));
    }
  }
  for (auto& t : s.treatments) {
    t.blocks = s.params.blocks;
    t.group_size = s.params.group_size;
  }
  if (!j.contains("policies")) throw InvalidArgument("scenario needs a 'policies' list");
  const auto& pol = j.at("policies");
  if (pol.is_array()) {
    for (const auto& p : pol) s.policies.push_back(parse_policy(p));
  } else {
    s.policies.push_back(parse_policy(pol));
  }
  if (s.policies.size() == 1) s.policies.assign(static_cast<std::size_t>(s.params.group_size), s.policies.front());
  if (static_cast<int>(s.policies.size()) != s.params.group_size)
    throw InvalidArgument("scenario needs one policy per group member (or a single shared policy)");
  if (s.sessions == 0) throw InvalidArgument("scenario needs at least one session per treatment");
  return s;
}

nlohmann::json ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["params"] = params;
  j["seed"] = seed;
  j["sessions"] = sessions;
  j["treatments"] = nlohmann::json::array();
  for (const auto& t : treatments) j["treatments"].push_back(t.name());
  j["policies"] = nlohmann::json::array();
  for (const auto& p : policies) j["policies"].push_back(evidencelab::to_json(p));
  return j;
}

std::vector<SessionLog> run_scenario(const ScenarioConfig& scenario, unsigned threads) {
  const std::size_t per = scenario.sessions;
  std::vector<SessionLog> logs(scenario.treatments.size() * per);
  detail::parallel_for(logs.size(), threads, [&](std::size_t i) {
    const std::size_t t = i / per, k = i % per;
    Rng seeder = make_stream(scenario.seed, {stream_tag("session"), t, k});
    auto log = run_session(scenario.treatments[t], scenario.policies, scenario.params, seeder());
    log.session_id = scenario.treatments[t].name() + "/" + std::to_string(k + 1);
    logs[i] = std::move(log);
  });
  return logs;
}

}  // namespace evidencelab
