#include <agcdro/frm_model.hpp>
#include <agcdro/ident_offline.hpp>
#include <agcdro/lin_dynamics.hpp>

#include <benchmark/benchmark.h>

#include <algorithm>
#include <filesystem>

using namespace agcdro;

namespace {

Fleet fleet_at(int hour)
{
    const std::filesystem::path data(AGCDRO_DATA_DIR);
    return apply_commitment(load_fleet(data / "fleet_118.json"), load_schedule(data / "schedule_118.csv"), hour);
}

void BM_Discretize(benchmark::State& state)
{
    const auto ss = build_state_space({fleet_at(12), 17.7, 0.01});
    for (auto _ : state) {
        benchmark::DoNotOptimize(discretize(ss, 4.0, DynamicsKind::Agc));
    }
    state.counters["states"] = double(ss.n());
}
BENCHMARK(BM_Discretize)->Unit(benchmark::kMicrosecond);

void BM_StepState(benchmark::State& state)
{
    const auto ss = build_state_space({fleet_at(12), 17.7, 0.01});
    const auto dyn = discretize(ss, 4.0, DynamicsKind::Agc);
    Vector x = Vector::Zero(ss.n());
    for (auto _ : state) {
        x = step_state(dyn, x, {0.001, 0.02, 0.021});
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(BM_StepState);

void BM_IdentifyEvent(benchmark::State& state)
{
    const auto fleet = fleet_at(3);
    RampEvent e;
    e.sample_period_s = 0.1;
    for (int i = 0; i <= 600; ++i) {
        e.netload.push_back(0.9 + 0.03 * std::min(1.0, 0.1 * i / 20.0));
    }
    e.freq = primary_response(fleet, 15.0, 0.01, e.netload, e.sample_period_s);
    for (auto _ : state) {
        benchmark::DoNotOptimize(identify(e, fleet));
    }
}
BENCHMARK(BM_IdentifyEvent)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
