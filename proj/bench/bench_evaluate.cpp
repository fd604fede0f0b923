// Serial vs OpenMP Monte Carlo evaluation of one frontier's children.
//
//   bench_evaluate --benchmark_counters_tabular=true
//
// Argument pairs are (children, victim latency in microseconds). With
// latency the work is wait-bound, so threads help even on one core.
#include <benchmark/benchmark.h>

#include "tip/config.hpp"
#include "tip/search.hpp"

namespace {

tip::Json mock_run(int latency_us) {
  auto ep = [&](const std::string& id, const std::string& profile) {
    return tip::Json{{"id", id},
                     {"base_url", "mock://" + profile},
                     {"model_name", profile},
                     {"options", {{"latency_us", latency_us}}}};
  };
  return tip::Json{{"scenario", "scenarios/fraud_getweather.json"},
                   {"tools_dir", "tools"},
                   {"local_tools_dir", "local_tools"},
                   {"endpoints", tip::Json::array({ep("attacker", "template"),
                                                   ep("victim", "heuristic")})},
                   {"attacker", "attacker"},
                   {"victims", tip::Json::array({"victim"})},
                   {"search", {{"B", 3}, {"K", 2}, {"M", 20}, {"seed", 5}}}};
}

std::vector<tip::EvalTask> tasks(const tip::Scenario& s, int n) {
  std::vector<tip::EvalTask> out;
  for (int i = 1; i <= n; ++i) {
    out.push_back({static_cast<tip::NodeId>(i),
                   tip::Payload{{"note", "Notice " + std::to_string(i) +
                                             ": confirm your booking at " + s.target_url}}});
  }
  return out;
}

template <bool Parallel>
void BM_Evaluate(benchmark::State& state) {
  tip::RunSetup setup(tip::parse_run_config(mock_run(static_cast<int>(state.range(1))),
                                            TIP_BENCH_DATA));
  auto batch = tasks(setup.scenario(), static_cast<int>(state.range(0)));
  tip::SearchConfig cfg = setup.config().search;
  cfg.threads = 8;  // the default follows the core count
  for (auto _ : state) {
    auto r = Parallel ? tip::evaluate_parallel(setup.eval_env(), batch, cfg)
                      : tip::evaluate_serial(setup.eval_env(), batch, cfg);
    benchmark::DoNotOptimize(r);
  }
  state.counters["episodes"] = benchmark::Counter(
      static_cast<double>(state.range(0) * cfg.M), benchmark::Counter::kIsIterationInvariantRate);
}

BENCHMARK_TEMPLATE(BM_Evaluate, false)
    ->ArgsProduct({{6, 24}, {0, 200}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();
BENCHMARK_TEMPLATE(BM_Evaluate, true)
    ->ArgsProduct({{6, 24}, {0, 200}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
