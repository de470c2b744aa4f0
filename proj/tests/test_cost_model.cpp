#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "lora_fleet/cost_model.hpp"

using namespace lora_fleet;
using test_helpers::calib_fixture;
using test_helpers::make_job;
using test_helpers::tiny_model;

TEST_CASE("singleton slowdown is exactly 1 by construction") {
    auto m = tiny_model(4, 256, 256);
    HardwareSpec hw;
    for (int rank : {2, 8}) {
        auto job = make_job("j", m, rank, 4, 256, 2);
        auto est = estimate_group({job}, hw);
        CHECK(est.per_job_slowdown.at("j") == 1.0);
        CHECK(est.throughput == doctest::Approx(standalone_profile(job, hw).throughput));
    }
}

TEST_CASE("estimate is invariant to member order") {
    auto m = tiny_model(6, 128, 128);
    HardwareSpec hw;
    auto a = make_job("a", m, 4, 2, 128, 1);
    auto b = make_job("b", m, 8, 4, 256, 2);
    auto c = make_job("c", m, 2, 1, 64, 1);
    auto e1 = estimate_group({a, b, c}, hw);
    auto e2 = estimate_group({c, a, b}, hw);
    CHECK(e1.throughput == e2.throughput);
    CHECK(e1.t_iter_pred == e2.t_iter_pred);
    CHECK(e1.group == e2.group);
    CHECK(e1.per_job_slowdown == e2.per_job_slowdown);
}

TEST_CASE("predicted iteration time is monotone in load") {
    auto m = tiny_model(6, 128, 128);
    HardwareSpec hw;
    auto base = make_job("j", m, 4, 2, 128, 2);

    auto t_of = [&](const JobSpec& j) { return estimate_group({j}, hw).t_iter_pred; };
    auto bigger_batch = base;
    bigger_batch.batch_size = 8;
    auto longer_seq = base;
    longer_seq.seq_len = 512;
    auto higher_rank = base;
    higher_rank.rank = 16;
    CHECK(t_of(bigger_batch) > t_of(base));
    CHECK(t_of(longer_seq) > t_of(base));
    CHECK(t_of(higher_rank) > t_of(base));
}

TEST_CASE("estimate_group validates the supplied plan") {
    auto m = tiny_model();
    HardwareSpec hw;
    auto a = make_job("a", m, 4, 2, 128, 2);
    auto wrong = plan(fuse({a}), 1, hw);  // plan for 1 GPU, group pools 2
    CHECK_THROWS_WITH_AS(estimate_group({a}, hw, wrong), doctest::Contains("plan covers"),
                         std::runtime_error);
}

TEST_CASE("residuals live in [0,1] and shrink under load") {
    auto m = tiny_model(6, 128, 128);
    HardwareSpec hw;
    auto light = make_job("j", m, 2, 1, 32, 2);
    auto heavy = make_job("j", m, 16, 8, 2048, 2);
    auto r_light = standalone_profile(light, hw).residual;
    auto r_heavy = standalone_profile(heavy, hw).residual;
    for (auto r : {r_light, r_heavy}) {
        CHECK(r.compute_residual >= 0.0);
        CHECK(r.compute_residual <= 1.0);
        CHECK(r.memory_residual >= 0.0);
        CHECK(r.memory_residual <= 1.0);
    }
    CHECK(r_heavy.compute_residual < r_light.compute_residual);
}

TEST_CASE("standalone_profile rejects jobs that cannot fit their own allocation") {
    auto m = tiny_model(4);
    m.base_memory_bytes = 1e12;
    HardwareSpec hw;
    hw.gpu_memory = 1e9;
    auto job = make_job("fat", m, 2, 1, 16, 1);
    CHECK_THROWS_WITH_AS(standalone_profile(job, hw), doctest::Contains("memory-infeasible"),
                         std::runtime_error);
}

TEST_CASE("calibrated fixture reproduces the complementarity pattern") {
    auto f = calib_fixture();
    const auto& hw = f.cluster.hw;
    double t1 = standalone_profile(f.job1, hw).throughput;
    double t2 = standalone_profile(f.job2, hw).throughput;
    double t3 = standalone_profile(f.job3, hw).throughput;
    // frozen from the shipped calibration constants
    CHECK(t1 == doctest::Approx(0.74).epsilon(0.05));
    CHECK(t3 == doctest::Approx(1.09).epsilon(0.05));

    auto g13 = estimate_group({f.job1, f.job3}, hw);
    CHECK(g13.throughput >= t1 + t3);  // pooling complements
    CHECK(g13.per_job_slowdown.at("job1") <= f.job1.max_slowdown);
    CHECK(g13.per_job_slowdown.at("job3") <= f.job3.max_slowdown);

    auto g12 = estimate_group({f.job1, f.job2}, hw);
    CHECK(g12.throughput < t1 + t2);  // node crossing regresses
}

TEST_CASE("urgency scales with observed slowdown and deadline pressure") {
    auto job = make_job("j", tiny_model());
    job.max_slowdown = 2.0;
    CHECK(urgency(job, 1.0, 0.0).score == doctest::Approx(0.5));
    CHECK(urgency(job, 2.0, 0.0).score == doctest::Approx(1.0));  // at the bound
    CHECK(urgency(job, 3.0, 0.0).score > 1.0);
    CHECK_THROWS_AS(urgency(job, -0.1, 0.0), std::invalid_argument);

    job.deadline = 100.0;
    // 80s of work, 50s of wall left -> pressure 1.6 dominates
    CHECK(urgency(job, 1.0, 50.0, 80.0).score == doctest::Approx(1.6));
    // deadline passed with work remaining -> infinite urgency
    CHECK(urgency(job, 1.0, 150.0, 1.0).score == std::numeric_limits<double>::infinity());
    // deadline passed but nothing left to do -> no pressure
    CHECK(urgency(job, 1.0, 150.0, 0.0).score == doctest::Approx(0.5));
}
