#include <benchmark/benchmark.h>

#include "mrl/estimator.hpp"
#include "mrl/kernel.hpp"
#include "mrl/simgen.hpp"
#include "mrl/smoother.hpp"

namespace {

mrl::Dataset make_data(int n) {
    const mrl::StudySpec spec = mrl::study_spec(mrl::StudyId::S1, n);
    mrl::Rng rng = mrl::Rng::stream(42, 0);
    return mrl::sample_dataset(spec, rng);
}

void bench_sample_dataset(benchmark::State& state) {
    const mrl::StudySpec spec = mrl::study_spec(mrl::StudyId::S1, state.range(0));
    std::uint64_t i = 0;
    for (auto _ : state) {
        mrl::Rng rng = mrl::Rng::stream(42, i++);
        benchmark::DoNotOptimize(mrl::sample_dataset(spec, rng));
    }
}
BENCHMARK(bench_sample_dataset)->Arg(300)->Arg(2000);

void bench_curve_build(benchmark::State& state) {
    const mrl::Dataset data = make_data(state.range(0));
    const mrl::IndexMatrix beta(data.p, 1);
    const mrl::BandwidthConfig bw = mrl::default_bandwidths(data, beta);
    const Eigen::MatrixXd vall = mrl::index_values(beta, data);
    const mrl::GroupSample gs = mrl::make_group_sample(data, mrl::Group::NonTransplant);
    Eigen::MatrixXd vg(gs.size(), 1);
    for (int i = 0; i < gs.size(); ++i) vg(i, 0) = vall(gs.order[i], 0);
    const Eigen::VectorXd v = Eigen::VectorXd::Zero(1);
    for (auto _ : state) {
        mrl::SmoothedCurves curves(gs, vg, v, 0.0, bw, data.tau);
        benchmark::DoNotOptimize(curves.mrl(0.1));
    }
}
BENCHMARK(bench_curve_build)->Arg(300)->Arg(2000);

void bench_score(benchmark::State& state) {
    const mrl::Dataset data = make_data(state.range(0));
    const mrl::IndexMatrix beta(data.p, 1);
    const mrl::BandwidthConfig bw = mrl::default_bandwidths(data, beta);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mrl::efficient_score(beta, data, bw));
    }
}
BENCHMARK(bench_score)->Arg(100)->Arg(300);

}  // namespace

BENCHMARK_MAIN();
