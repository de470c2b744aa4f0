#pragma once

#include <random>
#include <string>
#include <vector>

#include "lora_fleet/cluster.hpp"
#include "lora_fleet/workload.hpp"

namespace test_helpers {

using namespace lora_fleet;

inline ModelSpec tiny_model(int layers = 4, long long d = 64, long long k = 64) {
    ModelSpec m;
    m.name = "tiny";
    m.num_layers = layers;
    m.hidden_dim = d;
    m.proj_dim = k;
    m.per_layer_flops_per_token = 1e6;
    m.base_memory_bytes = 1e9;
    return m;
}

inline JobSpec make_job(const std::string& id, const ModelSpec& m, int rank = 4, int batch = 2,
                        int seq = 128, int gpus = 1, double max_slowdown = 1.25) {
    JobSpec j;
    j.job_id = id;
    j.model = m;
    j.rank = rank;
    j.batch_size = batch;
    j.seq_len = seq;
    j.step_budget = 10;
    j.gpu_demand = gpus;
    j.max_slowdown = max_slowdown;
    return j;
}

// The calibrated three-job fixture (see configs/calib.cfg); standalone
// throughputs ~0.74 / 8.81 / 1.09 samples/s for job1/job2/job3.
struct CalibFixture {
    ModelSpec model;
    ClusterSpec cluster;
    JobSpec job1, job2, job3;
};

inline CalibFixture calib_fixture() {
    CalibFixture f;
    f.model.name = "calib-1b";
    f.model.num_layers = 8;
    f.model.hidden_dim = 1024;
    f.model.proj_dim = 1024;
    f.model.per_layer_flops_per_token = 5.0e7;
    f.model.base_memory_bytes = 8e9;

    f.cluster.total_gpus = 16;
    f.cluster.concurrency_cap = 16;
    f.cluster.rank_nodes = 2;
    f.cluster.hw.gpu_flops = 1e12;
    f.cluster.hw.gpu_memory = 4e10;
    f.cluster.hw.intra_node_bw = 1e11;
    f.cluster.hw.inter_node_bw = 5e6;
    f.cluster.hw.weight_stream_bw = 4e9;
    f.cluster.hw.gpus_per_node = 8;
    f.cluster.hw.kernel_launch_overhead = 0.0435;
    f.cluster.hw.activation_bytes = 2;
    f.cluster.hw.backward_multiplier = 3;

    auto mk = [&](const std::string& id, int B, int seq, int g, double msd) {
        JobSpec j = make_job(id, f.model, 8, B, seq, g, msd);
        j.step_budget = 90;
        return j;
    };
    f.job1 = mk("job1", 1, 512, 2, 2.5);
    f.job2 = mk("job2", 8, 512, 8, 1.3);
    f.job3 = mk("job3", 4, 2600, 4, 2.5);
    return f;
}

}  // namespace test_helpers
