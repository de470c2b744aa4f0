#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lora_fleet/cluster.hpp"
#include "lora_fleet/cost_model.hpp"
#include "lora_fleet/nano_pipeline.hpp"
#include "lora_fleet/scheduler.hpp"
#include "lora_fleet/ssm_plan.hpp"
#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Deterministic discrete-event cluster simulator. Time advances horizon by
 * horizon; at each boundary the active policy regroups queued + running
 * jobs, groups then execute fused iterations at cost-model rates with the
 * AIMD controller adapting the nano-batch count. Two runs with the same
 * inputs produce byte-identical event logs.
 */

enum class EventKind { arrival = 0, horizon_end = 1, group_complete_member = 2, trace_end = 3 };

struct Event {
    double time = 0.0;
    EventKind kind = EventKind::arrival;
    std::string id;

    // total order: (time, kind priority, id) — the reproducibility contract
    friend bool operator<(const Event& a, const Event& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        return a.id < b.id;
    }
};

struct MetricsReport {
    std::vector<std::pair<double, double>> throughput_timeline;  // (time, samples/s)
    std::map<std::string, double> jct;                           // completed jobs only
    std::map<std::string, double> queueing_delay;
    double aggregate_throughput = 0.0;  // total samples / makespan
    double gpu_utilization = 0.0;
    double makespan = 0.0;
    long long completed_jobs = 0;
    long long incomplete_jobs = 0;
    std::map<std::string, double> colocation_histogram;  // class -> grouped fraction
};

struct SimConfig {
    double horizon = 300.0;  // seconds between grouping re-decisions
    int aimd_initial_n = 4;
    int aimd_alpha = 4;
    double aimd_beta = 0.5;
    double aimd_tau_rel = 0.0;
    double reconfig_penalty = 5.0;  // seconds per regrouped job
    std::optional<int> fixed_n;     // pin the nano-batch count, disabling AIMD
    long long max_rounds = 1000000;
};

enum class SizeClass { small = 0, medium = 1, large = 2 };

inline const char* size_class_name(SizeClass c) {
    switch (c) {
        case SizeClass::small: return "small";
        case SizeClass::medium: return "medium";
        case SizeClass::large: return "large";
    }
    return "?";
}

// per-sample compute cost used for the small/medium/large split
inline double job_compute_cost(const JobSpec& job) {
    double tokens = static_cast<double>(job.batch_size) * job.seq_len;
    return tokens * job.model.num_layers *
           (job.model.per_layer_flops_per_token + adapter_flops_per_token(job));
}

// Terciles of compute cost over the trace population; boundary ties fall to
// the lowest class.
class SizeClassifier {
public:
    explicit SizeClassifier(const std::vector<JobSpec>& population) {
        std::vector<double> costs;
        for (const auto& j : population) costs.push_back(job_compute_cost(j));
        std::sort(costs.begin(), costs.end());
        const auto n = costs.size();
        small_cut_ = (n / 3 == 0) ? std::numeric_limits<double>::infinity() : costs[n / 3 - 1];
        medium_cut_ =
            (2 * n / 3 == 0) ? std::numeric_limits<double>::infinity() : costs[2 * n / 3 - 1];
    }

    SizeClass classify(const JobSpec& job) const {
        double c = job_compute_cost(job);
        if (c <= small_cut_) return SizeClass::small;
        if (c <= medium_cut_) return SizeClass::medium;
        return SizeClass::large;
    }

private:
    double small_cut_, medium_cut_;
};

using EventLog = std::vector<nlohmann::json>;

struct SimResult {
    MetricsReport metrics;
    EventLog log;
};

// average busy-compute fraction across all GPUs, recovered from the log
inline double utilization(const EventLog& log, const ClusterSpec& cluster) {
    double busy_gpu_seconds = 0.0;
    double makespan = 0.0;
    for (const auto& rec : log) {
        makespan = std::max(makespan, rec.at("time").get<double>());
        if (rec.at("type") == "iteration")
            busy_gpu_seconds +=
                rec.at("compute_seconds").get<double>() * rec.at("gpus").get<double>();
    }
    if (makespan <= 0.0) return 0.0;
    return busy_gpu_seconds / (cluster.total_gpus * makespan);
}

namespace sim_detail {

struct JobState {
    JobSpec spec;
    long long steps_done = 0;
    long long window_steps = 0;       // steps finished in the current horizon
    double available_time = 0.0;      // when the job's last iteration ends
    std::optional<double> first_start;
    std::optional<double> complete_time;
    std::string prev_group_key;
    bool ever_colocated = false;
    double standalone_iter_seconds = 0.0;  // predicted, for observed slowdown
};

inline std::string group_key(const std::vector<JobSpec>& jobs) {
    std::vector<std::string> ids;
    for (const auto& j : jobs) ids.push_back(j.job_id);
    std::sort(ids.begin(), ids.end());
    std::string key;
    for (const auto& id : ids) key += id + "|";
    return key;
}

}  // namespace sim_detail

inline SimResult run(const Trace& trace, const ClusterSpec& cluster, Policy policy,
                     const SimConfig& config) {
    cluster.validate();
    if (config.horizon <= 0.0) throw std::invalid_argument("run: horizon must be > 0");

    EventLog log;
    long long seq = 0;
    auto emit = [&](double time, EventKind kind, nlohmann::json rec) {
        rec["time"] = time;
        rec["seq"] = seq++;
        rec["kind_priority"] = static_cast<int>(kind);
        log.push_back(std::move(rec));
    };

    std::map<std::string, sim_detail::JobState> jobs;  // ingested jobs
    std::vector<JobSpec> pending = trace.jobs;         // sorted by submit_time
    size_t next_arrival = 0;

    std::map<std::string, AimdState> aimd_by_group;
    MetricsReport metrics;
    double busy_gpu_seconds = 0.0;
    double makespan = 0.0;
    long long round_id = 0;

    auto all_done = [&]() {
        if (next_arrival < pending.size()) return false;
        for (const auto& [id, st] : jobs)
            if (!st.complete_time) return false;
        return true;
    };

    double boundary = 0.0;
    bool stuck_warned = false;
    while (!all_done() && round_id < config.max_rounds) {
        // ingest arrivals due at or before this boundary
        while (next_arrival < pending.size() && pending[next_arrival].submit_time <= boundary) {
            const auto& job = pending[next_arrival];
            sim_detail::JobState st;
            st.spec = job;
            st.available_time = job.submit_time;
            if (job.gpu_demand > cluster.total_gpus)
                emit(job.submit_time, EventKind::arrival,
                     {{"type", "warning"},
                      {"job_id", job.job_id},
                      {"message", "gpu_demand exceeds cluster size; job will queue forever"}});
            try {
                st.standalone_iter_seconds =
                    job.batch_size / standalone_profile(job, cluster.hw).throughput;
            } catch (const std::runtime_error&) {
                st.standalone_iter_seconds = 0.0;
            }
            jobs.emplace(job.job_id, std::move(st));
            emit(job.submit_time, EventKind::arrival, {{"type", "arrival"}, {"job_id", job.job_id}});
            ++next_arrival;
        }

        std::vector<JobSpec> active;
        for (auto& [id, st] : jobs)
            if (!st.complete_time) active.push_back(st.spec);

        if (active.empty()) {
            if (next_arrival < pending.size()) {
                double t = pending[next_arrival].submit_time;
                boundary = config.horizon * std::ceil(t / config.horizon);
                if (boundary < t) boundary += config.horizon;
                continue;
            }
            break;
        }

        SchedulerCtx ctx;
        ctx.hw = cluster.hw;
        ctx.rank_nodes = cluster.rank_nodes;
        ctx.now = boundary;
        for (const auto& j : active) {
            auto& st = jobs.at(j.job_id);
            double observed = 0.0;
            if (st.first_start && boundary > *st.first_start && st.standalone_iter_seconds > 0.0) {
                // smoothed over the last horizon window
                double window = std::min(config.horizon, boundary - *st.first_start);
                double expected = window / st.standalone_iter_seconds;
                double done = static_cast<double>(st.window_steps);
                observed = expected / std::max(done, 1e-9);
                observed = std::min(observed, 1e9);
            }
            double remaining_work =
                st.standalone_iter_seconds * static_cast<double>(j.step_budget - st.steps_done);
            ctx.urgency_scores[j.job_id] = urgency(j, observed, boundary, remaining_work).score;
            st.window_steps = 0;
        }

        auto decision = run_policy(policy, active, cluster, ctx);

        nlohmann::json groups_json = nlohmann::json::array();
        for (const auto& g : decision.final_groups) {
            nlohmann::json gj;
            gj["jobs"] = g.est.group;
            gj["gpus"] = g.plan.pooled_gpus;
            gj["predicted_throughput"] = g.est.throughput;
            gj["predicted_slowdown"] = g.est.per_job_slowdown;
            groups_json.push_back(std::move(gj));
        }
        nlohmann::json deferred_json = nlohmann::json::array();
        for (const auto& j : decision.deferred) deferred_json.push_back(j.job_id);
        emit(boundary, EventKind::horizon_end,
             {{"type", "schedule"},
              {"round", round_id},
              {"policy", policy == Policy::tlora ? "tlora"
                         : policy == Policy::mlora_fifo ? "mlora_fifo"
                                                        : "isolated"},
              {"groups", groups_json},
              {"deferred", deferred_json}});

        double samples_in_window = 0.0;
        double next_boundary = boundary + config.horizon;

        int group_index = 0;
        for (auto& g : decision.final_groups) {
            std::string gid = "g" + std::to_string(round_id) + "-" + std::to_string(group_index++);
            std::vector<JobSpec> members = g.jobs;
            std::string key = sim_detail::group_key(members);

            int regrouped = 0;
            double start = boundary;
            for (const auto& j : members) {
                auto& st = jobs.at(j.job_id);
                start = std::max(start, st.available_time);
                if (!st.prev_group_key.empty() && st.prev_group_key != key) ++regrouped;
            }
            start += config.reconfig_penalty * regrouped;

            auto aimd_it = aimd_by_group.find(key);
            AimdState aimd;
            if (aimd_it != aimd_by_group.end()) {
                aimd = aimd_it->second;
            } else {
                aimd.n = config.aimd_initial_n;
                aimd.alpha = config.aimd_alpha;
                aimd.beta = config.aimd_beta;
                aimd.tau_rel = config.aimd_tau_rel;
            }

            ParallelPlan p = g.plan;
            double tt = start;
            long long iter = 0;
            while (tt < next_boundary && !members.empty()) {
                int n_use = config.fixed_n ? *config.fixed_n : aimd.n;
                auto sched = partition(p.combined_batch, n_use);
                auto ptrace = simulate_iteration(p, sched, cluster.hw);
                auto reading = monitor(ptrace);
                tt += ptrace.t_iter_event;
                if (!config.fixed_n) {
                    aimd = aimd_step(aimd, ptrace.t_iter_event);
                    aimd.n = std::min(aimd.n, p.combined_batch);
                }
                busy_gpu_seconds += p.compute_seconds_total * p.pooled_gpus;

                emit(tt, EventKind::horizon_end,
                     {{"type", "iteration"},
                      {"group_id", gid},
                      {"step", iter},
                      {"n_nano", sched.n},
                      {"t_iter_event", ptrace.t_iter_event},
                      {"t_iter_analytic", ptrace.t_iter_analytic},
                      {"eta_util", reading.eta_util},
                      {"delta_stall", reading.delta_stall},
                      {"gpus", p.pooled_gpus},
                      {"compute_seconds", p.compute_seconds_total}});
                ++iter;

                std::vector<JobSpec> remaining;
                bool shrunk = false;
                for (const auto& j : members) {
                    auto& st = jobs.at(j.job_id);
                    if (!st.first_start) st.first_start = start;
                    ++st.steps_done;
                    ++st.window_steps;
                    samples_in_window += j.batch_size;
                    if (members.size() > 1) st.ever_colocated = true;
                    if (st.steps_done >= j.step_budget) {
                        st.complete_time = tt;
                        metrics.jct[j.job_id] = tt - j.submit_time;
                        metrics.queueing_delay[j.job_id] = *st.first_start - j.submit_time;
                        emit(tt, EventKind::group_complete_member,
                             {{"type", "complete"},
                              {"job_id", j.job_id},
                              {"group_id", gid},
                              {"jct", tt - j.submit_time}});
                        shrunk = true;
                    } else {
                        remaining.push_back(j);
                    }
                }
                if (shrunk) {
                    members = std::move(remaining);
                    if (!members.empty()) {
                        int demand = 0;
                        for (const auto& j : members) demand += j.gpu_demand;
                        p = plan(fuse(members), demand, cluster.hw);
                        key = sim_detail::group_key(members);
                        aimd.n = std::min(config.aimd_initial_n, p.combined_batch);
                        aimd.t_prev.reset();  // membership changed, fresh baseline
                    }
                } else {
                    members = std::move(remaining);
                }
            }
            for (const auto& j : members) {
                auto& st = jobs.at(j.job_id);
                st.available_time = tt;
                st.prev_group_key = key;
            }
            if (!members.empty()) aimd_by_group[key] = aimd;
            makespan = std::max(makespan, tt);
        }

        // throughput over the window just simulated
        metrics.throughput_timeline.emplace_back(next_boundary, samples_in_window / config.horizon);

        if (decision.final_groups.empty() && next_arrival >= pending.size()) {
            bool anyone_left = false;
            for (const auto& [id, st] : jobs)
                if (!st.complete_time) anyone_left = true;
            if (anyone_left && !stuck_warned) {
                emit(boundary, EventKind::trace_end,
                     {{"type", "warning"},
                      {"message", "no schedulable work remains; stopping with queued jobs"}});
                stuck_warned = true;
            }
            break;
        }
        boundary = next_boundary;
        ++round_id;
    }

    double total_samples = 0.0;
    for (const auto& [id, st] : jobs) {
        total_samples += static_cast<double>(st.steps_done) * st.spec.batch_size;
        if (st.complete_time) {
            ++metrics.completed_jobs;
            makespan = std::max(makespan, *st.complete_time);
        } else {
            ++metrics.incomplete_jobs;
        }
    }
    metrics.makespan = makespan;
    metrics.aggregate_throughput = makespan > 0.0 ? total_samples / makespan : 0.0;
    metrics.gpu_utilization =
        makespan > 0.0 ? busy_gpu_seconds / (cluster.total_gpus * makespan) : 0.0;

    SizeClassifier classifier(trace.jobs);
    std::map<std::string, std::pair<long long, long long>> by_class;  // grouped, total
    for (const auto& [id, st] : jobs) {
        auto& bucket = by_class[size_class_name(classifier.classify(st.spec))];
        ++bucket.second;
        if (st.ever_colocated) ++bucket.first;
    }
    for (const auto& [name, counts] : by_class)
        metrics.colocation_histogram[name] =
            counts.second > 0 ? static_cast<double>(counts.first) / counts.second : 0.0;

    emit(makespan, EventKind::trace_end, {{"type", "trace_end"}});

    // realize the documented total event order
    std::stable_sort(log.begin(), log.end(), [](const nlohmann::json& a, const nlohmann::json& b) {
        double ta = a.at("time").get<double>(), tb = b.at("time").get<double>();
        if (ta != tb) return ta < tb;
        int ka = a.at("kind_priority").get<int>(), kb = b.at("kind_priority").get<int>();
        if (ka != kb) return ka < kb;
        return a.at("seq").get<long long>() < b.at("seq").get<long long>();
    });

    return {std::move(metrics), std::move(log)};
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
    nlohmann::json j;
    j["aggregate_throughput"] = m.aggregate_throughput;
    j["gpu_utilization"] = m.gpu_utilization;
    j["makespan"] = m.makespan;
    j["completed_jobs"] = m.completed_jobs;
    j["incomplete_jobs"] = m.incomplete_jobs;
    j["jct"] = m.jct;
    j["queueing_delay"] = m.queueing_delay;
    j["colocation_histogram"] = m.colocation_histogram;
    nlohmann::json timeline = nlohmann::json::array();
    for (const auto& [t, v] : m.throughput_timeline) timeline.push_back({{"time", t}, {"samples_per_s", v}});
    j["throughput_timeline"] = timeline;
    return j;
}

inline double median_jct(const MetricsReport& m) {
    std::vector<double> v;
    for (const auto& [id, jct] : m.jct) v.push_back(jct);
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace lora_fleet
