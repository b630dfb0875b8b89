#include <agcdro/dro_mpc.hpp>
#include <agcdro/frm_model.hpp>
#include <agcdro/qcqp.hpp>

#include <benchmark/benchmark.h>

#include <filesystem>

using namespace agcdro;

namespace {

// Ambiguity set of J scenarios spread evenly over a plausible inertia and damping range.
AmbiguitySet spread(int J)
{
    AmbiguitySet a;
    for (int j = 0; j < J; ++j) {
        const double s = J == 1 ? 0.5 : double(j) / (J - 1);
        a.H.push_back(15.0 + 5.0 * s);
        a.D.push_back(0.006 + 0.008 * s);
        a.omega0.push_back(1.0 / J);
    }
    a.eta_max = 0.035 / J;
    a.eta_min = -0.075 / J;
    return a;
}

void BM_ControlStep(benchmark::State& state)
{
    const std::filesystem::path data(AGCDRO_DATA_DIR);
    const auto fleet =
        apply_commitment(load_fleet(data / "fleet_118.json"), load_schedule(data / "schedule_118.csv"), 12);
    ControlConfig cfg;
    cfg.horizon = static_cast<int>(state.range(1));
    cfg.freq_lo_pu = -0.002;
    cfg.freq_hi_pu = 0.002;
    const auto amb = spread(static_cast<int>(state.range(0)));
    std::vector<double> nl(static_cast<std::size_t>(cfg.horizon) + 1, 0.02);
    nl[0] = 0.0;
    DiscretizationCache cache;
    ControlContext ctx{&cache, {}};
    const Vector x0 = Vector::Zero(state_dimension(fleet));
    for (auto _ : state) {
        benchmark::DoNotOptimize(control_step(x0, nl, amb, cfg, fleet, ctx));
    }
}
BENCHMARK(BM_ControlStep)->Args({1, 4})->Args({10, 4})->Args({100, 4})->Args({100, 8})->Unit(benchmark::kMillisecond);

void BM_SolveCapturedStep(benchmark::State& state)
{
    const auto p = load_qcqp(std::filesystem::path(AGCDRO_FIXTURE_DIR) / "p5_j5_z2.json");
    for (auto _ : state) {
        benchmark::DoNotOptimize(solve(p));
    }
}
BENCHMARK(BM_SolveCapturedStep)->Unit(benchmark::kMicrosecond);

} // namespace
