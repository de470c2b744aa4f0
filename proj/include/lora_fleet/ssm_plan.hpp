#pragma once

#include <algorithm>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lora_fleet/fused_lora.hpp"
#include "lora_fleet/hardware.hpp"
#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Shared super-model construction and the pipeline-stage planner. A group of
 * jobs on the same backbone fuses into one graph: one backbone node per
 * layer, one lightweight adapter branch per (layer, job). The planner cuts
 * the layer list into contiguous stages over the pooled GPUs, minimizing the
 * bottleneck stage cost, and checks per-stage memory.
 */

struct SsmGraph {
    ModelSpec model;
    std::vector<JobSpec> jobs;  // sorted by job_id
    std::vector<int> backbone_nodes;                       // layer indices
    std::vector<std::pair<int, std::string>> adapter_branches;  // (layer, job_id)
};

struct PipelineStage {
    int layer_begin = 0;  // inclusive
    int layer_end = 0;    // exclusive
    int gpu_begin = 0;    // offsets within the pooled allocation
    int gpu_end = 0;
    double compute_seconds = 0.0;  // per combined-batch iteration
    double memory_bytes = 0.0;
};

struct StageBoundary {
    double bytes_per_iteration = 0.0;
    double bandwidth = 0.0;  // chosen from intra/inter node by placement
    double seconds_per_iteration() const { return bytes_per_iteration / bandwidth; }
};

struct ParallelPlan {
    std::vector<PipelineStage> stages;
    std::vector<StageBoundary> boundaries;  // stages.size() - 1 entries
    int pooled_gpus = 0;
    int combined_batch = 0;                 // sum of member batch sizes
    double compute_seconds_total = 0.0;     // flops time per iteration, pooled
    double stream_seconds_total = 0.0;      // weight streaming per iteration
    double comm_seconds_total = 0.0;        // sum over boundaries
    double bottleneck_stage_cost = 0.0;
};

inline SsmGraph fuse(const std::vector<JobSpec>& group) {
    if (group.empty()) throw std::invalid_argument("fuse: empty group");
    SsmGraph g;
    g.model = group.front().model;
    g.jobs = group;
    std::sort(g.jobs.begin(), g.jobs.end(),
              [](const JobSpec& a, const JobSpec& b) { return a.job_id < b.job_id; });
    for (const auto& j : g.jobs)
        if (j.model.name != g.model.name)
            throw std::runtime_error("fuse: mixed base models (" + g.model.name + " vs " +
                                     j.model.name + ") cannot be grouped");
    for (int layer = 0; layer < g.model.num_layers; ++layer) {
        g.backbone_nodes.push_back(layer);
        for (const auto& j : g.jobs) g.adapter_branches.emplace_back(layer, j.job_id);
    }
    return g;
}

// Classic contiguous-partition DP: split `costs` into `parts` contiguous
// pieces minimizing the maximum piece sum. Returns cut positions (exclusive
// end index of each piece).
inline std::vector<int> bottleneck_partition(const std::vector<double>& costs, int parts) {
    const int n = static_cast<int>(costs.size());
    if (n == 0 || parts < 1) throw std::invalid_argument("bottleneck_partition: bad input");
    parts = std::min(parts, n);

    std::vector<double> prefix(n + 1, 0.0);
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + costs[i];

    const double inf = std::numeric_limits<double>::infinity();
    // best[i][p]: min bottleneck for first i items in p pieces
    std::vector<std::vector<double>> best(n + 1, std::vector<double>(parts + 1, inf));
    std::vector<std::vector<int>> cut(n + 1, std::vector<int>(parts + 1, 0));
    best[0][0] = 0.0;
    for (int p = 1; p <= parts; ++p) {
        for (int i = p; i <= n; ++i) {
            for (int j = p - 1; j < i; ++j) {
                double v = std::max(best[j][p - 1], prefix[i] - prefix[j]);
                if (v < best[i][p]) {
                    best[i][p] = v;
                    cut[i][p] = j;
                }
            }
        }
    }
    std::vector<int> ends(parts);
    int i = n;
    for (int p = parts; p >= 1; --p) {
        ends[p - 1] = i;
        i = cut[i][p];
    }
    return ends;
}

namespace plan_detail {

// per-layer flops for one combined-batch iteration of the fused group
inline std::vector<double> layer_flops(const SsmGraph& ssm, const HardwareSpec& hw) {
    std::vector<double> costs(ssm.model.num_layers, 0.0);
    double per_layer = 0.0;
    for (const auto& j : ssm.jobs) {
        double tokens = static_cast<double>(j.batch_size) * j.seq_len;
        per_layer += tokens * (j.model.per_layer_flops_per_token + adapter_flops_per_token(j));
    }
    per_layer *= hw.backward_multiplier;
    for (auto& c : costs) c = per_layer;
    return costs;
}

inline double layer_memory_bytes(const SsmGraph& ssm) {
    double base_per_layer = ssm.model.base_memory_bytes / ssm.model.num_layers;
    double adapters = 0.0;
    for (const auto& j : ssm.jobs) {
        // trainable params + optimizer state at 3x, fp32 master copies
        double params = static_cast<double>(j.rank) * (j.model.hidden_dim + j.model.proj_dim);
        adapters += params * 4.0 * 4.0;
    }
    return base_per_layer + adapters;
}

// activation bytes crossing a stage boundary per iteration (fwd + bwd)
inline double boundary_bytes(const SsmGraph& ssm, const HardwareSpec& hw) {
    double bytes = 0.0;
    for (const auto& j : ssm.jobs)
        bytes += static_cast<double>(j.batch_size) * j.seq_len * j.model.hidden_dim *
                 hw.activation_bytes;
    return 2.0 * bytes;
}

struct StageLayout {
    std::vector<int> layer_ends;
    std::vector<int> gpu_ends;
};

inline StageLayout layout(int num_layers, int pooled_gpus, const std::vector<int>& layer_ends) {
    StageLayout out;
    out.layer_ends = layer_ends;
    const int s = static_cast<int>(layer_ends.size());
    out.gpu_ends.resize(s);
    int assigned = 0;
    for (int i = 0; i < s; ++i) {
        int remaining = s - i;
        int take = (pooled_gpus - assigned + remaining - 1) / remaining;
        assigned += take;
        out.gpu_ends[i] = assigned;
    }
    (void)num_layers;
    return out;
}

inline bool memory_feasible(const StageLayout& lo, double per_layer_bytes,
                            const HardwareSpec& hw) {
    int prev_layer = 0, prev_gpu = 0;
    for (size_t i = 0; i < lo.layer_ends.size(); ++i) {
        int layers = lo.layer_ends[i] - prev_layer;
        int gpus = lo.gpu_ends[i] - prev_gpu;
        if (layers * per_layer_bytes > gpus * hw.gpu_memory) return false;
        prev_layer = lo.layer_ends[i];
        prev_gpu = lo.gpu_ends[i];
    }
    return true;
}

}  // namespace plan_detail

// Builds the stage partition for `ssm` over `pooled_gpus` GPUs. Placement is
// canonical: GPUs 0..P-1 split contiguously across stages; a boundary whose
// neighboring GPUs land on different nodes uses the inter-node bandwidth.
inline ParallelPlan plan(const SsmGraph& ssm, int pooled_gpus, const HardwareSpec& hw) {
    if (pooled_gpus < 1) throw std::invalid_argument("plan: pooled_gpus must be >= 1");
    hw.validate();

    const int num_layers = ssm.model.num_layers;
    const int s = std::min(pooled_gpus, num_layers);
    auto costs = plan_detail::layer_flops(ssm, hw);
    const double per_layer_bytes = plan_detail::layer_memory_bytes(ssm);

    auto ends = bottleneck_partition(costs, s);
    auto lo = plan_detail::layout(num_layers, pooled_gpus, ends);
    if (!plan_detail::memory_feasible(lo, per_layer_bytes, hw)) {
        // cost-optimal split does not fit; fall back to the memory-balanced
        // split before rejecting the group
        std::vector<double> mem(num_layers, per_layer_bytes);
        auto mem_ends = bottleneck_partition(mem, s);
        lo = plan_detail::layout(num_layers, pooled_gpus, mem_ends);
        if (!plan_detail::memory_feasible(lo, per_layer_bytes, hw))
            throw std::runtime_error("plan: no memory-feasible stage partition for group");
        ends = mem_ends;
    }

    ParallelPlan p;
    p.pooled_gpus = pooled_gpus;
    const double pool_flops = pooled_gpus * hw.gpu_flops;
    double total_bytes = 0.0;

    int prev_layer = 0, prev_gpu = 0;
    for (size_t i = 0; i < ends.size(); ++i) {
        PipelineStage st;
        st.layer_begin = prev_layer;
        st.layer_end = ends[i];
        st.gpu_begin = prev_gpu;
        st.gpu_end = lo.gpu_ends[i];
        double stage_flops = 0.0;
        for (int l = st.layer_begin; l < st.layer_end; ++l) stage_flops += costs[l];
        st.compute_seconds = stage_flops / pool_flops;
        st.memory_bytes = (st.layer_end - st.layer_begin) * per_layer_bytes;
        total_bytes += st.memory_bytes;
        p.bottleneck_stage_cost = std::max(p.bottleneck_stage_cost, stage_flops);
        p.compute_seconds_total += st.compute_seconds;
        prev_layer = st.layer_end;
        prev_gpu = st.gpu_end;
        p.stages.push_back(st);
    }

    const double crossing_bytes = plan_detail::boundary_bytes(ssm, hw);
    for (size_t i = 0; i + 1 < p.stages.size(); ++i) {
        StageBoundary b;
        b.bytes_per_iteration = crossing_bytes;
        int left_node = (p.stages[i].gpu_end - 1) / hw.gpus_per_node;
        int right_node = p.stages[i + 1].gpu_begin / hw.gpus_per_node;
        b.bandwidth = (left_node == right_node) ? hw.intra_node_bw : hw.inter_node_bw;
        p.comm_seconds_total += b.seconds_per_iteration();
        p.boundaries.push_back(b);
    }

    p.stream_seconds_total = total_bytes / (pooled_gpus * hw.weight_stream_bw);
    for (const auto& j : ssm.jobs) p.combined_batch += j.batch_size;
    return p;
}

}  // namespace lora_fleet
