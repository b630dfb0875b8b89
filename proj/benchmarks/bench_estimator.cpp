#include <agcdro/lstm.hpp>
#include <agcdro/quantile_estimator.hpp>

#include <benchmark/benchmark.h>

#include <cmath>

using namespace agcdro;

namespace {

SequenceBatch batch(int steps, int size)
{
    SequenceBatch xs;
    for (int t = 0; t < steps; ++t) {
        Matrix x(kFeatureCount, size);
        for (int i = 0; i < x.size(); ++i) {
            x.data()[i] = std::sin(0.37 * i + t);
        }
        xs.push_back(x);
    }
    return xs;
}

void BM_LstmForward(benchmark::State& state)
{
    const int hidden = static_cast<int>(state.range(0));
    const LstmShape shape{kFeatureCount, hidden, hidden, 2 * kQuantileCount};
    const LstmNet net(shape, init_lstm_params(shape, 1));
    const auto xs = batch(30, 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(xs));
    }
}
BENCHMARK(BM_LstmForward)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_LstmGradient(benchmark::State& state)
{
    const int hidden = static_cast<int>(state.range(0));
    const LstmShape shape{kFeatureCount, hidden, hidden, 2 * kQuantileCount};
    const LstmNet net(shape, init_lstm_params(shape, 1));
    const auto xs = batch(30, 32);
    auto grad = LstmParams::zeros(shape);
    auto loss = [](const Matrix& Y, Matrix& dY) {
        dY = Y;
        return 0.5 * Y.squaredNorm();
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.loss_and_gradient(xs, loss, grad));
    }
}
BENCHMARK(BM_LstmGradient)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

} // namespace
