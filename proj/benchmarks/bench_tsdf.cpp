#include <benchmark/benchmark.h>
static void bm_noop(benchmark::State& s){for(auto _ : s){}}
BENCHMARK(bm_noop);
BENCHMARK_MAIN();
