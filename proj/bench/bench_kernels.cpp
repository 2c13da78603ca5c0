#include <random>

#include <benchmark/benchmark.h>

#include "lmswitch/kernels.hpp"
#include "lmswitch/lm.hpp"
#include "lmswitch/switch.hpp"

using namespace lmswitch;
using namespace lmswitch::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

MarkovTable random_table(Eigen::Index V, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    MarkovTable t;
    t.start = Vector::NullaryExpr(V, [&] { return u(rng); });
    t.start /= t.start.sum();
    t.trans = Matrix::NullaryExpr(V, V, [&] { return u(rng); });
    for (Eigen::Index i = 0; i < V; ++i) t.trans.row(i) /= t.trans.row(i).sum();
    return t;
}

void BM_L1Serial(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(n, 1), b = random_vec(n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(l1_distance_serial(a, b));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_L1Parallel(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(n, 1), b = random_vec(n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(l1_distance_parallel(a, b));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EnumerateSerial(benchmark::State& state) {
    const MarkovTable t = random_table(state.range(0), 3);
    for (auto _ : state) benchmark::DoNotOptimize(markov_enumerate_serial(t.start, t.trans, static_cast<int>(state.range(1))));
}

void BM_EnumerateParallel(benchmark::State& state) {
    const MarkovTable t = random_table(state.range(0), 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(markov_enumerate_parallel(t.start, t.trans, static_cast<int>(state.range(1))));
}

// Decoding parallelizes over samples.
void BM_Decode(benchmark::State& state) {
    std::mt19937_64 rng(4);
    std::vector<std::string> toks;
    for (int i = 0; i < 197; ++i) toks.push_back("w" + std::to_string(i));
    toks.insert(toks.end(), {"<unk>", "<bos>", "<eos>"});
    const Vocab v = Vocab::from_tokens(toks);
    std::normal_distribution<double> g(0.0, 0.25);
    const Matrix E = Matrix::NullaryExpr(16, 200, [&] { return g(rng); });
    const SoftmaxLm lm(v, E, E);
    SwitchMatrix sw;
    sw.W = Matrix::NullaryExpr(16, 16, [&] { return g(rng); });
    DecodeConfig cfg;
    cfg.num_samples = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(decode(lm, sw, cfg));
}

}  // namespace

BENCHMARK(BM_L1Serial)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_L1Parallel)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_EnumerateSerial)->Args({5, 6})->Args({10, 5});
BENCHMARK(BM_EnumerateParallel)->Args({5, 6})->Args({10, 5});
BENCHMARK(BM_Decode)->Arg(64)->Arg(512);

BENCHMARK_MAIN();
