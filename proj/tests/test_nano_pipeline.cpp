#include <doctest.h>

#include <numeric>
#include <random>

#include "helpers.hpp"
#include "lora_fleet/nano_pipeline.hpp"

using namespace lora_fleet;

namespace {

// a plan with prescribed totals, for driving the pipeline model directly
ParallelPlan synthetic_plan(double compute_s, double comm_s, int batch, int stages = 2) {
    ParallelPlan p;
    p.combined_batch = batch;
    p.pooled_gpus = stages;
    p.compute_seconds_total = compute_s;
    p.comm_seconds_total = comm_s;
    p.stream_seconds_total = 0.0;
    p.stages.resize(stages);
    if (stages > 1) p.boundaries.resize(stages - 1);
    return p;
}

}  // namespace

TEST_CASE("partition balances the batch and clamps N") {
    auto s = partition(10, 4);
    CHECK(s.n == 4);
    CHECK(s.per_nano_samples == std::vector<int>{3, 3, 2, 2});
    auto clamped = partition(3, 8);
    CHECK(clamped.n == 3);
    CHECK(clamped.per_nano_samples == std::vector<int>{1, 1, 1});
    CHECK(std::accumulate(s.per_nano_samples.begin(), s.per_nano_samples.end(), 0) == 10);
    CHECK_THROWS_AS(partition(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(partition(4, 0), std::invalid_argument);
}

TEST_CASE("iteration with compute 2s/nano, comm 3s/nano, N=4 takes 14s, overlap ideal 12s") {
    HardwareSpec hw;
    hw.kernel_launch_overhead = 0.0;
    // totals: 8s compute, 12s comm over 4 equal nanos
    auto p = synthetic_plan(8.0, 12.0, 4);
    auto trace = simulate_iteration(p, partition(4, 4), hw);
    // compute finishes nano 1 at t=2, comm occupies [2,5],[5,8],[8,11],[11,14]
    CHECK(trace.t_iter_event == doctest::Approx(14.0));
    CHECK(trace.t_iter_analytic == doctest::Approx(12.0));
    for (double c : trace.t_comp) CHECK(c == doctest::Approx(2.0));
    for (double m : trace.t_comm) CHECK(m == doctest::Approx(3.0));
}

TEST_CASE("N=1 degenerates to the serial sum") {
    HardwareSpec hw;
    hw.kernel_launch_overhead = 0.0;
    auto p = synthetic_plan(5.0, 3.0, 6);
    auto trace = simulate_iteration(p, partition(6, 1), hw);
    CHECK(trace.t_iter_event == doctest::Approx(8.0));
    CHECK(trace.t_iter_analytic == doctest::Approx(5.0));  // max of the sums
}

TEST_CASE("event time obeys the overlap bound on random instances") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> sec(0.0, 10.0);
    HardwareSpec hw;
    for (int trial = 0; trial < 100; ++trial) {
        hw.kernel_launch_overhead = sec(rng) / 20.0;
        int batch = 1 + static_cast<int>(rng() % 64);
        auto p = synthetic_plan(sec(rng), sec(rng), batch);
        auto trace = simulate_iteration(p, partition(batch, 1 + static_cast<int>(rng() % 16)), hw);

        double sum_c = std::accumulate(trace.t_comp.begin(), trace.t_comp.end(), 0.0);
        double sum_m = std::accumulate(trace.t_comm.begin(), trace.t_comm.end(), 0.0);
        double max_c = *std::max_element(trace.t_comp.begin(), trace.t_comp.end());
        double max_m = *std::max_element(trace.t_comm.begin(), trace.t_comm.end());

        CHECK(trace.t_iter_analytic == std::max(sum_c, sum_m));
        CHECK(trace.t_iter_event >= trace.t_iter_analytic - 1e-12);
        CHECK(trace.t_iter_event <= trace.t_iter_analytic + max_c + max_m + 1e-12);
    }
}

TEST_CASE("simulate_iteration rejects schedules that do not cover the batch") {
    HardwareSpec hw;
    auto p = synthetic_plan(1.0, 1.0, 8);
    auto bad = partition(7, 2);  // sums to 7, plan batch is 8
    CHECK_THROWS_AS(simulate_iteration(p, bad, hw), std::invalid_argument);
}

TEST_CASE("aimd_step follows Eq.-style additive increase, multiplicative decrease") {
    AimdState s;
    s.n = 8;
    s.alpha = 4;
    s.beta = 0.5;

    auto seeded = aimd_step(s, 10.0);  // first observation only seeds baseline
    CHECK(seeded.n == 8);
    CHECK(seeded.t_prev == 10.0);

    auto up = aimd_step(seeded, 9.0);  // improved -> N += alpha
    CHECK(up.n == 12);
    auto down = aimd_step(up, 9.5);  // regressed -> N = floor(beta N)
    CHECK(down.n == 6);

    // equal time with tau = 0 counts as improvement
    auto flat = aimd_step(down, 9.5);
    CHECK(flat.n == 10);

    // with a relative margin, a marginal improvement is not enough
    AimdState strict = down;
    strict.tau_rel = 0.1;
    auto declined = aimd_step(strict, 9.4);  // needs <= 9.5 * 0.9 = 8.55
    CHECK(declined.n == 3);
}

TEST_CASE("aimd floor never drops N below 1") {
    AimdState s;
    s.n = 1;
    s.t_prev = 1.0;
    auto next = aimd_step(s, 2.0);
    CHECK(next.n == 1);
    CHECK_THROWS_AS(aimd_step(s, -1.0), std::invalid_argument);
}

TEST_CASE("monitor reports utilization and stall") {
    HardwareSpec hw;
    hw.kernel_launch_overhead = 0.0;
    auto p = synthetic_plan(8.0, 12.0, 4);
    auto trace = simulate_iteration(p, partition(4, 4), hw);
    auto r = monitor(trace);
    // 8s compute over 2 stages x 14s event window
    CHECK(r.eta_util == doctest::Approx(8.0 / (2 * 14.0)));
    CHECK(r.delta_stall == doctest::Approx(2.0));
}
