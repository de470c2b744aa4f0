#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lora_fleet/hardware.hpp"
#include "lora_fleet/ssm_plan.hpp"

namespace lora_fleet {

/*
 * Nano-batch execution model. The group's combined batch is cut into N
 * nano-batches; an event-driven two-resource chain (compute feeding
 * stage-boundary communication) yields the iteration time, with nano n's
 * communication overlapping nano n+1's compute. N itself is driven online by
 * an AIMD controller on the end-to-end iteration time.
 */

struct NanoSchedule {
    int n = 1;
    std::vector<int> per_nano_samples;
};

struct PipelineTrace {
    std::vector<double> t_comp;  // per nano, includes launch overhead
    std::vector<double> t_comm;  // per nano, summed over boundaries
    double t_iter_event = 0.0;
    double t_iter_analytic = 0.0;
    int num_stages = 1;
};

struct AimdState {
    int n = 4;
    std::optional<double> t_prev;
    int alpha = 4;
    double beta = 0.5;
    double tau_rel = 0.0;  // stability margin as a fraction of t_prev

    void validate() const {
        if (n < 1 || alpha < 1 || beta <= 0.0 || beta >= 1.0 || tau_rel < 0.0)
            throw std::invalid_argument("AimdState: invalid controller parameters");
    }
};

// Balanced split: sizes differ by at most one, N clamped to the batch so no
// nano-batch is empty.
inline NanoSchedule partition(int group_batch, int n) {
    if (group_batch < 1) throw std::invalid_argument("partition: group_batch must be >= 1");
    if (n < 1) throw std::invalid_argument("partition: N must be >= 1");
    NanoSchedule sched;
    sched.n = std::min(n, group_batch);
    int base = group_batch / sched.n;
    int extra = group_batch % sched.n;
    for (int i = 0; i < sched.n; ++i) sched.per_nano_samples.push_back(base + (i < extra ? 1 : 0));
    return sched;
}

// Fill-and-drain schedule over one compute and one communication resource:
// each resource processes nano-batches in order, nano n must finish compute
// before its boundary traffic starts.
inline PipelineTrace simulate_iteration(const ParallelPlan& plan, const NanoSchedule& sched,
                                        const HardwareSpec& hw) {
    if (plan.combined_batch < 1) throw std::invalid_argument("simulate_iteration: empty plan batch");
    int total = std::accumulate(sched.per_nano_samples.begin(), sched.per_nano_samples.end(), 0);
    if (total != plan.combined_batch)
        throw std::invalid_argument("simulate_iteration: schedule does not cover the group batch");

    PipelineTrace trace;
    trace.num_stages = static_cast<int>(plan.stages.size());
    const double work_seconds = plan.compute_seconds_total + plan.stream_seconds_total;

    double compute_free = 0.0, comm_free = 0.0;
    for (int i = 0; i < sched.n; ++i) {
        double share = static_cast<double>(sched.per_nano_samples[i]) / plan.combined_batch;
        double c = share * work_seconds + hw.kernel_launch_overhead;
        double m = share * plan.comm_seconds_total;
        trace.t_comp.push_back(c);
        trace.t_comm.push_back(m);

        double comp_end = compute_free + c;
        compute_free = comp_end;
        double comm_start = std::max(comp_end, comm_free);
        comm_free = comm_start + m;
    }
    trace.t_iter_event = std::max(compute_free, comm_free);

    double sum_c = std::accumulate(trace.t_comp.begin(), trace.t_comp.end(), 0.0);
    double sum_m = std::accumulate(trace.t_comm.begin(), trace.t_comm.end(), 0.0);
    trace.t_iter_analytic = std::max(sum_c, sum_m);
    return trace;
}

// Additive increase on improvement, multiplicative backoff otherwise. The
// first observation only seeds the baseline.
inline AimdState aimd_step(const AimdState& state, double t_t) {
    state.validate();
    if (t_t < 0.0) throw std::invalid_argument("aimd_step: negative iteration time");
    AimdState next = state;
    if (state.t_prev) {
        double margin = state.tau_rel * (*state.t_prev);
        if (t_t <= *state.t_prev - margin)
            next.n = state.n + state.alpha;
        else
            next.n = std::max(1, static_cast<int>(std::floor(state.beta * state.n)));
    }
    next.t_prev = t_t;
    return next;
}

struct MonitorReading {
    double eta_util = 0.0;    // compute occupancy across stages
    double delta_stall = 0.0; // event time beyond the overlap ideal
};

inline MonitorReading monitor(const PipelineTrace& trace) {
    MonitorReading r;
    double sum_c = std::accumulate(trace.t_comp.begin(), trace.t_comp.end(), 0.0);
    if (trace.t_iter_event > 0.0 && trace.num_stages > 0)
        r.eta_util = sum_c / (trace.num_stages * trace.t_iter_event);
    r.delta_stall = trace.t_iter_event - trace.t_iter_analytic;
    return r;
}

}  // namespace lora_fleet
