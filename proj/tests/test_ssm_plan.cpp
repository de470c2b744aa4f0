#include <doctest.h>

#include <functional>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "lora_fleet/ssm_plan.hpp"

using namespace lora_fleet;
using test_helpers::make_job;
using test_helpers::tiny_model;

namespace {

// exhaustive contiguous-partition minimum bottleneck, for cross-checking
double brute_force_bottleneck(const std::vector<double>& costs, int parts) {
    const int n = static_cast<int>(costs.size());
    parts = std::min(parts, n);
    double best = std::numeric_limits<double>::infinity();
    // choose parts-1 cut positions out of n-1 slots
    std::vector<int> cuts(parts - 1);
    std::function<void(int, int)> rec = [&](int idx, int start) {
        if (idx == parts - 1) {
            double bottleneck = 0.0, acc = 0.0;
            int c = 0;
            for (int i = 0; i < n; ++i) {
                acc += costs[i];
                if (c < parts - 1 && i + 1 == cuts[c]) {
                    bottleneck = std::max(bottleneck, acc);
                    acc = 0.0;
                    ++c;
                }
            }
            best = std::min(best, std::max(bottleneck, acc));
            return;
        }
        for (int pos = start; pos <= n - (parts - 1 - idx); ++pos) {
            cuts[idx] = pos;
            rec(idx + 1, pos + 1);
        }
    };
    if (parts == 1) return std::accumulate(costs.begin(), costs.end(), 0.0);
    rec(0, 1);
    return best;
}

double bottleneck_of(const std::vector<double>& costs, const std::vector<int>& ends) {
    double worst = 0.0;
    int prev = 0;
    for (int e : ends) {
        double sum = 0.0;
        for (int i = prev; i < e; ++i) sum += costs[i];
        worst = std::max(worst, sum);
        prev = e;
    }
    return worst;
}

}  // namespace

TEST_CASE("fuse builds one backbone node per layer, one branch per (layer, job)") {
    auto m = tiny_model(6);
    auto g = fuse({make_job("b", m), make_job("a", m), make_job("c", m)});
    CHECK(g.backbone_nodes.size() == 6);
    CHECK(g.adapter_branches.size() == 6 * 3);
    CHECK(g.jobs[0].job_id == "a");  // sorted
    CHECK(g.adapter_branches[0] == std::pair<int, std::string>(0, "a"));
}

TEST_CASE("fuse rejects mixed base models") {
    auto m1 = tiny_model();
    auto m2 = tiny_model();
    m2.name = "other";
    CHECK_THROWS_WITH_AS(fuse({make_job("a", m1), make_job("b", m2)}),
                         doctest::Contains("mixed base models"), std::runtime_error);
    CHECK_THROWS_AS(fuse({}), std::invalid_argument);
}

TEST_CASE("bottleneck_partition equals brute force on random instances") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> cost(0.1, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 1 + static_cast<int>(rng() % 12);
        int parts = 1 + static_cast<int>(rng() % 6);
        std::vector<double> costs(n);
        for (auto& c : costs) c = cost(rng);
        auto ends = bottleneck_partition(costs, parts);
        REQUIRE(ends.back() == n);
        CHECK(bottleneck_of(costs, ends) == doctest::Approx(brute_force_bottleneck(costs, parts))
                                                .epsilon(1e-12));
    }
}

TEST_CASE("bottleneck_partition handcheck") {
    // [1,2,3,4,5] into 2: {1,2,3,4},{5} vs {1,2,3},{4,5} -> 9 vs 10? no: best
    // is {1,2,3,4}|{5} bottleneck 10 vs {1,2,3}|{4,5} bottleneck 9 -> 9
    auto ends = bottleneck_partition({1, 2, 3, 4, 5}, 2);
    CHECK(ends == std::vector<int>{3, 5});
    // more parts than items collapses to one item per part
    auto single = bottleneck_partition({2, 2}, 5);
    CHECK(single == std::vector<int>{1, 2});
}

TEST_CASE("plan produces a covering contiguous stage layout") {
    auto m = tiny_model(8, 256, 256);
    auto jobs = std::vector<JobSpec>{make_job("a", m, 4, 2, 128, 2), make_job("b", m, 8, 4, 64, 2)};
    HardwareSpec hw;
    auto p = plan(fuse(jobs), 4, hw);

    CHECK(p.pooled_gpus == 4);
    CHECK(p.combined_batch == 6);
    REQUIRE(p.stages.size() == 4);  // min(gpus, layers)
    REQUIRE(p.boundaries.size() == 3);
    int layer = 0, gpu = 0;
    for (const auto& st : p.stages) {
        CHECK(st.layer_begin == layer);
        CHECK(st.gpu_begin == gpu);
        CHECK(st.layer_end > st.layer_begin);
        CHECK(st.gpu_end > st.gpu_begin);
        layer = st.layer_end;
        gpu = st.gpu_end;
    }
    CHECK(layer == 8);
    CHECK(gpu == 4);

    double stage_sum = 0.0;
    for (const auto& st : p.stages) stage_sum += st.compute_seconds;
    CHECK(p.compute_seconds_total == doctest::Approx(stage_sum));
}

TEST_CASE("boundary bandwidth follows canonical GPU placement") {
    auto m = tiny_model(2, 256, 256);
    HardwareSpec hw;
    hw.gpus_per_node = 8;
    auto jobs = std::vector<JobSpec>{make_job("a", m, 4, 2, 128, 2)};

    auto intra = plan(fuse(jobs), 2, hw);  // GPUs 0,1: same node
    REQUIRE(intra.boundaries.size() == 1);
    CHECK(intra.boundaries[0].bandwidth == hw.intra_node_bw);

    auto wide = plan(fuse(jobs), 16, hw);  // 2 stages x 8 GPUs: node crossing
    REQUIRE(wide.boundaries.size() == 1);
    CHECK(wide.boundaries[0].bandwidth == hw.inter_node_bw);
    // boundary traffic: 2 * B * seq * d * activation_bytes
    CHECK(wide.boundaries[0].bytes_per_iteration ==
          doctest::Approx(2.0 * 2 * 128 * 256 * hw.activation_bytes));
}

TEST_CASE("memory-infeasible groups are rejected, fallback split is tried first") {
    auto m = tiny_model(4, 64, 64);
    m.base_memory_bytes = 1e9;
    HardwareSpec hw;
    hw.gpu_memory = 2.6e8;  // one layer fits (2.5e8 + adapters), two do not
    auto jobs = std::vector<JobSpec>{make_job("a", m, 2, 1, 16, 4)};
    // 4 GPUs, 4 layers -> one layer/GPU fits
    CHECK_NOTHROW(plan(fuse(jobs), 4, hw));
    // 2 GPUs -> 2 layers/GPU > budget regardless of split
    CHECK_THROWS_WITH_AS(plan(fuse(jobs), 2, hw), doctest::Contains("memory-feasible"),
                         std::runtime_error);
}

TEST_CASE("more GPUs never increase total compute time") {
    auto m = tiny_model(8, 128, 128);
    HardwareSpec hw;
    auto jobs = std::vector<JobSpec>{make_job("a", m, 4, 4, 256, 1)};
    auto ssm = fuse(jobs);
    double prev = std::numeric_limits<double>::infinity();
    for (int gpus : {1, 2, 4, 8}) {
        auto p = plan(ssm, gpus, hw);
        CHECK(p.compute_seconds_total <= prev);
        prev = p.compute_seconds_total;
    }
}
