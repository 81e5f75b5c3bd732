#include <benchmark/benchmark.h>

#include "evidencelab/behavior.hpp"
#include "evidencelab/equilibrium.hpp"
#include "evidencelab/simlab.hpp"
#include "evidencelab/theory.hpp"
#include "session_driver.hpp"

using namespace evidencelab;

static void BM_CorrectForecastProb(benchmark::State& state) {
  for (auto _ : state)
    for (int n = 1; n <= 15; ++n) benchmark::DoNotOptimize(correct_forecast_prob(n, 15));
}
BENCHMARK(BM_CorrectForecastProb);

static void BM_OptimalPolicy(benchmark::State& state) {
  GameParams g;
  g.budget = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(optimal_policy(g));
}
BENCHMARK(BM_OptimalPolicy)->Arg(100)->Arg(1000);

static void BM_TheoryTable(benchmark::State& state) {
  const std::vector<UtilitySpec> us{UtilitySpec::risk_neutral(), UtilitySpec::cara(0.1), UtilitySpec::cara(0.5)};
  for (auto _ : state) benchmark::DoNotOptimize(theory_table(GameParams{}, us));
}
BENCHMARK(BM_TheoryTable);

static void BM_SimulateBlocks(benchmark::State& state) {
  const GameParams g;
  Rng rng(1);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_block_scores({n, n}, 1000, g, rng));
  state.SetItemsProcessed(state.iterations() * 1000 * g.group_size);
}
BENCHMARK(BM_SimulateBlocks)->Arg(5)->Arg(15);

static void BM_BestResponseRow(benchmark::State& state) {
  EquilibriumConfig cfg;
  cfg.sims = 8192;
  cfg.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(best_response(10, UtilitySpec::cara(0.5), cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.sims));
}
BENCHMARK(BM_BestResponseRow)->Unit(benchmark::kMillisecond);

static void BM_EstimateLambda(benchmark::State& state) {
  Rng rng(2);
  const auto data = synthesize_qre_choices(1.4, static_cast<std::size_t>(state.range(0)), GameParams{}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_lambda(data));
}
BENCHMARK(BM_EstimateLambda)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

static void BM_RunSession(benchmark::State& state) {
  const GameParams g;
  const std::vector<PolicyKind> pol{ImitateMean{}, FollowLeader{}, DistanceResponsive{}, Stationary{5}, QreMatcher{}};
  std::uint64_t seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_session(TreatmentConfig::parse("competitive/both"), pol, g, seed++));
}
BENCHMARK(BM_RunSession)->Unit(benchmark::kMicrosecond);

// One full in-process protocol session: join, elicitation, four blocks, payment.
static void BM_ProtocolSession(benchmark::State& state) {
  for (auto _ : state) {
    SessionConfig c;
    c.session_id = "bench";
    c.treatment = TreatmentConfig::parse("competitive/both");
    driver::Driver d(c, driver::tokens(5));
    for (int i = 0; i < 5; ++i) d.join();
    for (int p = 0; p < 5; ++p) d.elicit(p, 11, 11);
    for (int b = 1; b <= 4; ++b) {
      for (int p = 0; p < 5; ++p) d.play_block(p, 5 + 2 * p);
      if (b < 4)
        for (int p = 0; p < 5; ++p) d.ack(p);
    }
    d.pay();
    benchmark::DoNotOptimize(d.session.state_hash());
  }
}
BENCHMARK(BM_ProtocolSession)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
