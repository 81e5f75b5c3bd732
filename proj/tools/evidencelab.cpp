// evidencelab command-line entry point.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include "evidencelab/behavior.hpp"
#include "evidencelab/csv.hpp"
#include "evidencelab/equilibrium.hpp"
#include "evidencelab/errors.hpp"
#include "evidencelab/server.hpp"
#include "evidencelab/session.hpp"
#include "evidencelab/simlab.hpp"
#include "evidencelab/theory.hpp"
#include "evidencelab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evidencelab;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kIo = 3, kAmbiguous = 4 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("EVIDENCELAB_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidArgument("EVIDENCELAB_SEED must be an unsigned integer");
    }
  }
  return 1;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

// Collects outputs for one command and writes <command>.manifest.json.
class Run {
 public:
  Run(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create " + out_.string() + ": " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    const auto path = out_ / name;
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    outputs_.push_back(path.string());
    return os;
  }

  void finish(const json& config, std::uint64_t seed) {
    const auto digest = fnv1a(config.dump());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(digest));
    json m{{"command", command_},
           {"config", config},
           {"config_digest", std::string("fnv1a64:") + hex},
           {"seed", seed},
           {"versions",
            {{"evidencelab", version()},
             {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
             {"compiler", __VERSION__}}},
           {"outputs", outputs_}};
    const auto path = out_ / (command_ + ".manifest.json");
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << m.dump(2) << '\n';
    if (!os) throw IoError("cannot write " + path.string());
  }

 private:
  std::string command_;
  fs::path out_;
  std::vector<std::string> outputs_;
};

GameParams params_from(int cards, int budget) {
  GameParams p;
  p.cards = cards;
  p.budget = budget;
  p.validate();
  return p;
}

UtilitySpec utility_from(const std::string& kind, double alpha) {
  return parse_utility(kind, alpha);
}

// ---- theory ----

struct TheoryOptions {
  int cards = 15, budget = 100;
  std::vector<double> alphas{0.1, 0.5};
  std::string rounding = "floor";
  std::string out = ".";
};

int run_theory(const TheoryOptions& o) {
  const auto params = params_from(o.cards, o.budget);
  std::vector<UtilitySpec> utilities{UtilitySpec::risk_neutral()};
  for (double a : o.alphas) utilities.push_back(UtilitySpec::cara(a));
  const auto rounding = o.rounding == "nearest" ? KRounding::nearest : KRounding::floor;
  const auto rows = theory_table(params, utilities, rounding);

  Run run("theory", o.out);
  {
    auto os = run.open("theory.csv");
    write_theory_csv(os, rows, utilities);
  }
  {
    auto os = run.open("policy.csv");
    const auto policy = optimal_policy(params);
    os << "remaining,value,action\n";
    for (std::size_t r = 0; r < policy.value.size(); ++r)
      os << r << ',' << (policy.value[r] ? csv::number(*policy.value[r]) : "") << ',' << policy.action[r] << '\n';
  }

  int best = rows.front().flips;
  double best_s = rows.front().expected_score;
  for (const auto& r : rows)
    if (r.expected_score > best_s + 1e-12) best = r.flips, best_s = r.expected_score;
  std::printf("%4s %10s %10s %10s\n", "n", "p_n", "S_n", "sd_n");
  for (const auto& r : rows) std::printf("%4d %10.3f %10.3f %10.3f\n", r.flips, r.p, r.expected_score, r.score_sd);
  std::printf("argmax S_n: n = %d\n", best);

  json alphas = o.alphas;
  run.finish(json{{"M", o.cards}, {"N", o.budget}, {"alpha", alphas}, {"k_rounding", o.rounding}}, 0);
  return kOk;
}

// ---- equilibrium ----

struct EquilibriumOptions {
  int cards = 15, budget = 100;
  std::string utility = "risk-neutral";
  double alpha = 0.5;
  std::size_t sims = 200000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out = ".";
};

int run_equilibrium(const EquilibriumOptions& o) {
  EquilibriumConfig cfg;
  cfg.params = params_from(o.cards, o.budget);
  cfg.sims = o.sims;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  if (cfg.sims < 2) throw InvalidArgument("--sims must be at least 2");
  const auto utility = utility_from(o.utility, o.alpha);
  const auto eq = find_symmetric_equilibria(utility, cfg);

  Run run("equilibrium", o.out);
  {
    auto os = run.open("payoff_matrix.csv");
    write_payoff_matrix_csv(os, eq.map);
  }
  {
    auto os = run.open("best_response.csv");
    write_best_response_csv(os, eq.map);
  }
  {
    auto os = run.open("equilibria.csv");
    write_equilibria_csv(os, eq);
  }
  run.finish(json{{"M", o.cards}, {"N", o.budget}, {"utility", utility.label()}, {"sims", o.sims}}, o.seed);

  std::printf("utility %s\n", utility.label().c_str());
  for (const auto& r : eq.map.rows)
    std::printf("n_others=%2d  n_opt=%2d  gap=%.5f  se=%.5f%s\n", r.others, r.best, r.gap, r.gap_se,
                r.ambiguous ? "  AMBIGUOUS" : "");
  std::printf("symmetric equilibria: {");
  for (std::size_t i = 0; i < eq.fixed_points.size(); ++i) std::printf("%s%d", i ? ", " : "", eq.fixed_points[i]);
  std::printf("}\n");
  if (eq.map.ambiguous()) {
    std::fprintf(stderr, "warning: some best responses are not separated by %.1f standard errors\n",
                 cfg.separation_se);
    return kAmbiguous;
  }
  return kOk;
}

// ---- simulate ----

int run_simulate(const std::string& config_path, std::optional<std::uint64_t> seed, unsigned threads,
                 const std::string& out) {
  auto config = read_json_file(config_path);
  auto scenario = ScenarioConfig::from_json(config);
  if (seed) scenario.seed = *seed;
  const auto logs = run_scenario(scenario, threads);
  const auto grid = treatment_table(logs, scenario.treatments);
  for (const auto& w : grid.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  Run run("simulate", out);
  {
    auto os = run.open("forecasts.csv");
    write_forecast_csv_header(os);
    for (const auto& l : logs) write_forecast_csv_rows(os, l);
  }
  {
    auto os = run.open("blocks.csv");
    write_block_csv_header(os);
    for (const auto& l : logs) write_block_csv_rows(os, l);
  }
  {
    auto os = run.open("summary.csv");
    write_summary_csv(os, grid);
  }
  run.finish(scenario.to_json(), scenario.seed);
  std::printf("%zu sessions across %zu treatments\n", logs.size(), scenario.treatments.size());
  return kOk;
}

// ---- fit-lambda ----

int run_fit_lambda(const std::string& choices_path, int cards, const std::string& out) {
  std::ifstream in(choices_path);
  if (!in) throw IoError("cannot read " + choices_path);
  const auto choices = read_choices_csv(in, cards);
  const auto est = estimate_lambda(choices);
  Run run("fit-lambda", out);
  const auto report = to_json(est);
  {
    auto os = run.open("lambda.json");
    os << report.dump(2) << '\n';
  }
  run.finish(json{{"choices", choices_path}, {"M", cards}}, 0);
  std::printf("%s\n", report.dump().c_str());
  return kOk;
}

// ---- export ----

int run_export(const std::string& log_path, const std::string& out) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot read " + log_path);
  const auto events = read_event_log(in);
  Run run("export", out);
  auto forecasts = run.open("forecasts.csv");
  auto blocks = run.open("blocks.csv");
  std::string session_id;
  if (events.empty()) {
    write_forecast_csv_header(forecasts);
    write_block_csv_header(blocks);
  } else {
    const auto session = Session::replay(events);
    session.write_forecast_csv(forecasts);
    session.write_block_csv(blocks);
    session_id = session.id();
  }
  forecasts.close();
  blocks.close();
  run.finish(json{{"log", log_path}, {"session", session_id}, {"events", events.size()}}, 0);
  return kOk;
}

// ---- serve ----

struct ServeOptions {
  std::uint16_t port = 8080;
  std::string address = "127.0.0.1";
  std::string config;
  std::string log_dir = "sessions";
  std::string token;
  std::string treatment;
  std::string session_id;
  int groups = 1;
  std::uint64_t seed = 0;
};

int run_serve(const ServeOptions& o) {
  ServerConfig sc;
  sc.address = o.address;
  sc.port = o.port;
  sc.log_dir = o.log_dir;
  sc.experimenter_token = o.token;
  std::vector<SessionConfig> initial;
  if (!o.config.empty()) {
    const auto j = read_json_file(o.config);
    sc.address = j.value("address", sc.address);
    sc.log_dir = j.value("log_dir", sc.log_dir.string());
    if (sc.experimenter_token.empty()) sc.experimenter_token = j.value("experimenter_token", std::string{});
    for (const auto& s : j.value("sessions", json::array())) initial.push_back(s.get<SessionConfig>());
  }
  if (!o.treatment.empty()) {
    SessionConfig c;
    c.treatment = TreatmentConfig::parse(o.treatment);
    c.session_id = o.session_id;
    c.groups = o.groups;
    c.seed = o.seed;
    initial.push_back(c);
  }

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(sc);
  for (const auto& c : initial) {
    if (!c.session_id.empty() && server.sessions().contains(c.session_id)) {
      std::printf("session %s restored from log\n", c.session_id.c_str());
      continue;
    }
    const auto created = server.sessions().create(c);
    std::printf("session %s (%s): join tokens", created.session_id.c_str(), c.treatment.name().c_str());
    for (const auto& t : created.tokens) std::printf(" %s", t.c_str());
    std::printf("\n");
  }
  server.start();
  std::printf("listening on %s:%u (ws path /ws)\nexperimenter token: %s\n", sc.address.c_str(),
              static_cast<unsigned>(server.port()), server.experimenter_token().c_str());
  std::fflush(stdout);

  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidence-gathering forecasting experiments: theory, equilibrium search, simulation and live sessions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  TheoryOptions theory;
  auto* theory_cmd = app.add_subcommand("theory", "Tables of p_n, S_n, sd_n and expected utilities");
  theory_cmd->add_option("--M", theory.cards, "Cards per deck")->check(CLI::Range(1, 61));
  theory_cmd->add_option("--N", theory.budget, "Flip budget per block")->check(CLI::PositiveNumber);
  theory_cmd->add_option("--alpha", theory.alphas, "CARA coefficients for utility columns");
  theory_cmd->add_option("--k-rounding", theory.rounding, "Forecast count rule for U_n")
      ->check(CLI::IsMember({"floor", "nearest"}));
  theory_cmd->add_option("--out", theory.out, "Output directory");

  EquilibriumOptions eq;
  eq.seed = default_seed();
  auto* eq_cmd = app.add_subcommand("equilibrium", "Best-response map and symmetric equilibria by simulation");
  eq_cmd->add_option("--M", eq.cards, "Cards per deck")->check(CLI::Range(1, 61));
  eq_cmd->add_option("--N", eq.budget, "Flip budget per block")->check(CLI::PositiveNumber);
  eq_cmd->add_option("--utility", eq.utility, "risk-neutral, cara or prospect")
      ->check(CLI::IsMember({"risk-neutral", "cara", "prospect"}));
  eq_cmd->add_option("--alpha", eq.alpha, "CARA coefficient");
  eq_cmd->add_option("--sims", eq.sims, "Simulated blocks per (n, n') cell");
  eq_cmd->add_option("--seed", eq.seed, "Master seed (default $EVIDENCELAB_SEED or 1)");
  eq_cmd->add_option("--threads", eq.threads, "Worker threads (0 = all cores)");
  eq_cmd->add_option("--out", eq.out, "Output directory");

  std::string sim_config, sim_out = ".";
  std::optional<std::uint64_t> sim_seed;
  unsigned sim_threads = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "Agent-based treatment grid from a scenario file");
  sim_cmd->add_option("--config", sim_config, "Scenario JSON")->required();
  sim_cmd->add_option("--seed", sim_seed, "Override the scenario seed");
  sim_cmd->add_option("--threads", sim_threads, "Worker threads (0 = all cores)");
  sim_cmd->add_option("--out", sim_out, "Output directory");

  std::string choices_path, fit_out = ".";
  int fit_cards = 15;
  auto* fit_cmd = app.add_subcommand("fit-lambda", "Logit precision estimate from a choices CSV");
  fit_cmd->add_option("choices", choices_path, "CSV with columns n,r,g,chose_red")->required();
  fit_cmd->add_option("--M", fit_cards, "Cards per deck")->check(CLI::Range(1, 61));
  fit_cmd->add_option("--out", fit_out, "Output directory");

  ServeOptions serve;
  serve.seed = default_seed();
  auto* serve_cmd = app.add_subcommand("serve", "Run the live session server");
  serve_cmd->add_option("--port", serve.port, "TCP port (0 picks a free one)");
  serve_cmd->add_option("--address", serve.address, "Bind address");
  serve_cmd->add_option("--config", serve.config, "Server JSON: address, log_dir, experimenter_token, sessions");
  serve_cmd->add_option("--log-dir", serve.log_dir, "Directory of per-session JSONL logs");
  serve_cmd->add_option("--token", serve.token, "Experimenter token (generated if empty)");
  serve_cmd->add_option("--treatment", serve.treatment, "Create one session, e.g. competitive/both");
  serve_cmd->add_option("--session", serve.session_id, "Id for the session created by --treatment");
  serve_cmd->add_option("--groups", serve.groups, "Groups in that session")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--seed", serve.seed, "Master seed for that session");

  std::string log_path, export_out = ".";
  auto* export_cmd = app.add_subcommand("export", "Forecast and block CSVs from a session event log");
  export_cmd->add_option("--log", log_path, "JSONL event log")->required();
  export_cmd->add_option("--out", export_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*theory_cmd) return run_theory(theory);
    if (*eq_cmd) return run_equilibrium(eq);
    if (*sim_cmd) return run_simulate(sim_config, sim_seed, sim_threads, sim_out);
    if (*fit_cmd) return run_fit_lambda(choices_path, fit_cards, fit_out);
    if (*serve_cmd) return run_serve(serve);
    if (*export_cmd) return run_export(log_path, export_out);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const UnidentifiedParameter& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAmbiguous;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  } catch (const InformationViolation& e) {
    std::fprintf(stderr, "error: policy needs feedback the treatment withholds: %s\n", e.what());
    return kConfig;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: malformed config: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  }
  return kConfig;
}
