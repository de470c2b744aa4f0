#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lora_fleet/hardware.hpp"
#include "lora_fleet/nano_pipeline.hpp"
#include "lora_fleet/ssm_plan.hpp"
#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Analytic demand/throughput model. Per-sample FLOPs come from the fused
 * kernel accounting (backward folded in as a multiplier); communication is
 * the activation traffic crossing stage boundaries; weight streaming is what
 * a group amortizes by sharing one backbone. All estimates are pure
 * functions of their inputs.
 */

struct ResidualVector {
    double compute_residual = 0.0;  // in [0,1], 1 = fully idle
    double memory_residual = 0.0;
};

struct Urgency {
    double score = 0.0;  // >= 1 means an active or imminent violation
};

struct GroupEstimate {
    std::vector<std::string> group;  // member job ids, sorted
    double throughput = 0.0;         // samples/s, sum over members
    std::map<std::string, double> per_job_throughput;
    std::map<std::string, double> per_job_slowdown;
    double t_iter_pred = 0.0;
    int pooled_gpus = 0;
};

// Overlap-ideal prediction for one fused iteration of a planned group.
inline double predict_iter_seconds(const ParallelPlan& plan, const HardwareSpec& hw) {
    double comp = plan.compute_seconds_total + plan.stream_seconds_total +
                  hw.kernel_launch_overhead;
    return std::max(comp, plan.comm_seconds_total);
}

inline ResidualVector residual_of_plan(const ParallelPlan& plan, const HardwareSpec& hw) {
    double t = predict_iter_seconds(plan, hw);
    ResidualVector r;
    r.compute_residual = std::clamp(1.0 - plan.compute_seconds_total / t, 0.0, 1.0);
    double mem = 0.0;
    for (const auto& st : plan.stages) mem += st.memory_bytes;
    r.memory_residual = std::clamp(1.0 - mem / (plan.pooled_gpus * hw.gpu_memory), 0.0, 1.0);
    return r;
}

struct StandaloneProfile {
    double throughput = 0.0;  // samples/s when run alone on gpu_demand GPUs
    ResidualVector residual;
};

// The standalone estimate is the group model evaluated on the singleton, so
// the singleton slowdown is exactly 1 by construction. Throws when the job
// cannot fit its own allocation (it can never run).
inline StandaloneProfile standalone_profile(const JobSpec& job, const HardwareSpec& hw) {
    auto ssm = fuse({job});
    ParallelPlan p;
    try {
        p = plan(ssm, job.gpu_demand, hw);
    } catch (const std::runtime_error&) {
        throw std::runtime_error("standalone_profile: job " + job.job_id +
                                 " is memory-infeasible on its own allocation");
    }
    StandaloneProfile out;
    out.throughput = job.batch_size / predict_iter_seconds(p, hw);
    out.residual = residual_of_plan(p, hw);
    return out;
}

inline GroupEstimate estimate_group(const std::vector<JobSpec>& group, const HardwareSpec& hw,
                                    const ParallelPlan& plan_in) {
    int demand = 0;
    for (const auto& j : group) demand += j.gpu_demand;
    if (plan_in.pooled_gpus != demand)
        throw std::runtime_error("estimate_group: plan covers " +
                                 std::to_string(plan_in.pooled_gpus) + " GPUs but group pools " +
                                 std::to_string(demand));
    int batch = 0;
    for (const auto& j : group) batch += j.batch_size;
    if (plan_in.combined_batch != batch)
        throw std::runtime_error("estimate_group: plan batch does not match group");

    GroupEstimate est;
    est.t_iter_pred = predict_iter_seconds(plan_in, hw);
    est.pooled_gpus = plan_in.pooled_gpus;
    for (const auto& j : group) {
        double thpt = j.batch_size / est.t_iter_pred;
        est.group.push_back(j.job_id);
        est.per_job_throughput[j.job_id] = thpt;
        est.per_job_slowdown[j.job_id] = standalone_profile(j, hw).throughput / thpt;
        est.throughput += thpt;
    }
    std::sort(est.group.begin(), est.group.end());
    return est;
}

inline GroupEstimate estimate_group(const std::vector<JobSpec>& group, const HardwareSpec& hw) {
    auto ssm = fuse(group);
    int demand = 0;
    for (const auto& j : group) demand += j.gpu_demand;
    return estimate_group(group, hw, plan(ssm, demand, hw));
}

// Progress pressure: how close the job is to violating its slowdown bound or
// deadline. A passed deadline with work left pins the score at +infinity.
inline Urgency urgency(const JobSpec& job, double observed_slowdown, double now,
                       double remaining_work_seconds = 0.0) {
    if (observed_slowdown < 0.0) throw std::invalid_argument("urgency: negative slowdown");
    Urgency u;
    u.score = observed_slowdown / job.max_slowdown;
    if (job.deadline) {
        double wall = *job.deadline - now;
        double pressure;
        if (wall <= 0.0)
            pressure = remaining_work_seconds > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        else
            pressure = remaining_work_seconds / wall;
        u.score = std::max(u.score, pressure);
    }
    return u;
}

}  // namespace lora_fleet
