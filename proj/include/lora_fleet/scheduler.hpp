#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lora_fleet/cluster.hpp"
#include "lora_fleet/cost_model.hpp"
#include "lora_fleet/ssm_plan.hpp"

namespace lora_fleet {

/*
 * Grouping policies. The tlora policy is a hierarchical incremental
 * pack-and-reinsert loop: per tier (intra-node, cross-node, cross-rank),
 * sort by urgency (desc) then residual (asc), pop the most constrained
 * unit, binary-cut the high-residual suffix for the largest beneficial
 * merge, reinsert, repeat. The queue stays sorted; merges reinsert by
 * binary search so a round costs O(K log K) comparisons + evaluations.
 */

enum class Policy { tlora, mlora_fifo, isolated };

inline Policy parse_policy(const std::string& s) {
    if (s == "tlora") return Policy::tlora;
    if (s == "mlora_fifo") return Policy::mlora_fifo;
    if (s == "isolated") return Policy::isolated;
    throw std::runtime_error("unknown policy '" + s + "' (valid: tlora, mlora_fifo, isolated)");
}

struct QueueEntry {
    std::vector<JobSpec> members;
    GroupEstimate est;
    ResidualVector residual;
    double urgency_score = 0.0;  // max over members
    int gpu_demand = 0;
    std::string model_name;
    std::string id;  // smallest member job_id, used as the sort tie-break
};

struct FinalGroup {
    std::vector<JobSpec> jobs;
    ParallelPlan plan;
    GroupEstimate est;
};

struct GroupingDecision {
    std::vector<FinalGroup> final_groups;
    std::vector<JobSpec> deferred;
};

struct SchedulerCtx {
    HardwareSpec hw;
    int rank_nodes = 4;
    double now = 0.0;
    // per-job urgency scores supplied by the caller (simulator); absent = 0
    std::map<std::string, double> urgency_scores;

    // instrumentation for the complexity contract
    long long comparisons = 0;
    long long evaluations = 0;

    // memoized model evaluations, keyed by sorted member-id set
    std::map<std::string, std::optional<GroupEstimate>> estimate_cache;

    double urgency_of(const std::string& job_id) const {
        auto it = urgency_scores.find(job_id);
        return it == urgency_scores.end() ? 0.0 : it->second;
    }
};

namespace sched_detail {

inline std::string group_key(const std::vector<JobSpec>& members) {
    std::vector<std::string> ids;
    for (const auto& j : members) ids.push_back(j.job_id);
    std::sort(ids.begin(), ids.end());
    std::string key;
    for (const auto& id : ids) key += id + "|";
    return key;
}

// evaluates (fuse + plan + estimate) with memoization; nullopt = infeasible
inline const std::optional<GroupEstimate>& evaluate(const std::vector<JobSpec>& members,
                                                    SchedulerCtx& ctx) {
    auto key = group_key(members);
    auto it = ctx.estimate_cache.find(key);
    if (it != ctx.estimate_cache.end()) return it->second;
    ++ctx.evaluations;
    std::optional<GroupEstimate> est;
    try {
        est = estimate_group(members, ctx.hw);
    } catch (const std::runtime_error&) {
        est = std::nullopt;
    }
    return ctx.estimate_cache.emplace(key, std::move(est)).first->second;
}

inline QueueEntry make_entry(std::vector<JobSpec> members, const GroupEstimate& est,
                             SchedulerCtx& ctx) {
    QueueEntry e;
    e.members = std::move(members);
    e.est = est;
    e.model_name = e.members.front().model.name;
    e.id = e.members.front().job_id;
    for (const auto& j : e.members) {
        e.gpu_demand += j.gpu_demand;
        e.urgency_score = std::max(e.urgency_score, ctx.urgency_of(j.job_id));
        e.id = std::min(e.id, j.job_id);
    }
    auto ssm = fuse(e.members);
    e.residual = residual_of_plan(plan(ssm, e.gpu_demand, ctx.hw), ctx.hw);
    return e;
}

// urgency desc, then compute residual asc, memory residual asc, id
inline bool priority_less(const QueueEntry& a, const QueueEntry& b, SchedulerCtx& ctx) {
    ++ctx.comparisons;
    if (a.urgency_score != b.urgency_score) return a.urgency_score > b.urgency_score;
    if (a.residual.compute_residual != b.residual.compute_residual)
        return a.residual.compute_residual < b.residual.compute_residual;
    if (a.residual.memory_residual != b.residual.memory_residual)
        return a.residual.memory_residual < b.residual.memory_residual;
    return a.id < b.id;
}

inline bool residual_less(const QueueEntry& a, const QueueEntry& b, SchedulerCtx& ctx) {
    ++ctx.comparisons;
    if (a.residual.compute_residual != b.residual.compute_residual)
        return a.residual.compute_residual < b.residual.compute_residual;
    return a.id < b.id;
}

}  // namespace sched_detail

// Stable sort by urgency (desc) and scalar residual (asc).
inline std::vector<QueueEntry> sort_queue(std::vector<QueueEntry> entries, SchedulerCtx& ctx) {
    std::stable_sort(entries.begin(), entries.end(),
                     [&ctx](const QueueEntry& a, const QueueEntry& b) {
                         return sched_detail::priority_less(a, b, ctx);
                     });
    return entries;
}

// Binary-cut partner search over the residual-ascending candidate list:
// find the largest suffix (highest-residual units, same base model) whose
// merge with `seed` beats running the parts separately and keeps every
// member inside its slowdown bound. Assumes the benefit curve is unimodal
// in the cutoff; a non-unimodal curve yields a local cutoff.
struct MergeResult {
    QueueEntry merged;
    std::vector<std::string> absorbed_ids;  // queue entries consumed by the merge
};

inline std::optional<MergeResult> find_partner(const QueueEntry& seed,
                                               const std::vector<QueueEntry>& candidates_by_residual,
                                               int tier_gpu_cap, SchedulerCtx& ctx) {
    std::vector<const QueueEntry*> eligible;
    for (const auto& c : candidates_by_residual)
        if (c.model_name == seed.model_name) eligible.push_back(&c);
    if (eligible.empty()) return std::nullopt;

    auto try_cut = [&](int m) -> std::optional<MergeResult> {
        std::vector<JobSpec> members = seed.members;
        std::vector<std::string> absorbed;
        double parts_throughput = seed.est.throughput;
        int gpus = seed.gpu_demand;
        for (int i = 0; i < m; ++i) {
            const QueueEntry* c = eligible[eligible.size() - 1 - i];
            members.insert(members.end(), c->members.begin(), c->members.end());
            absorbed.push_back(c->id);
            parts_throughput += c->est.throughput;
            gpus += c->gpu_demand;
        }
        if (gpus > tier_gpu_cap) return std::nullopt;
        const auto& est = sched_detail::evaluate(members, ctx);
        if (!est) return std::nullopt;
        for (const auto& j : members)
            if (est->per_job_slowdown.at(j.job_id) > j.max_slowdown) return std::nullopt;
        // The merged group pools exactly the parts' GPUs, so "better per-GPU
        // efficiency than running the parts separately" is the same test as a
        // strict aggregate-throughput improvement. Comparing against the seed
        // alone instead would let an efficient seed veto merges its partners
        // benefit from, and the veto is permanent once the seed finalizes.
        if (est->throughput <= parts_throughput) return std::nullopt;
        return MergeResult{sched_detail::make_entry(std::move(members), *est, ctx),
                           std::move(absorbed)};
    };

    // Binary cut probes O(log K) cutoffs. Among the feasible probes, keep the
    // one with the best aggregate throughput rather than simply the widest:
    // when the benefit curve is not unimodal the widest feasible cut can be a
    // worse local optimum than a narrower one already examined.
    auto try_one = [&](int idx) -> std::optional<MergeResult> {
        const QueueEntry* c = eligible[idx];
        std::vector<JobSpec> members = seed.members;
        members.insert(members.end(), c->members.begin(), c->members.end());
        int gpus = seed.gpu_demand + c->gpu_demand;
        if (gpus > tier_gpu_cap) return std::nullopt;
        const auto& est = sched_detail::evaluate(members, ctx);
        if (!est) return std::nullopt;
        for (const auto& j : members)
            if (est->per_job_slowdown.at(j.job_id) > j.max_slowdown) return std::nullopt;
        if (est->throughput <= seed.est.throughput + c->est.throughput) return std::nullopt;
        return MergeResult{sched_detail::make_entry(std::move(members), *est, ctx), {c->id}};
    };

    int lo = 0, hi = static_cast<int>(eligible.size());
    std::optional<MergeResult> best;
    while (lo < hi) {
        int mid = lo + (hi - lo + 1) / 2;
        auto merged = try_cut(mid);
        if (merged) {
            if (!best || merged->merged.est.throughput > best->merged.est.throughput)
                best = std::move(merged);
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    {
        // The suffix cut fails outright when the single highest-residual
        // candidate happens to be incompatible with the seed. Probe a
        // logarithmic ladder of individual candidates down the residual order
        // before giving up, which keeps the per-merge budget at O(log K).
        for (int idx = static_cast<int>(eligible.size()) - 1; idx >= 0; idx = idx / 2 - 1) {
            auto merged = try_one(idx);
            if (merged && (!best || merged->merged.est.throughput > best->merged.est.throughput))
                best = std::move(merged);
            if (idx == 0) break;
        }
    }
    return best;
}

namespace sched_detail {

// sorted-vector queue with binary-search reinsertion
struct TierQueue {
    std::vector<QueueEntry> by_priority;   // priority order, front = index 0
    std::vector<QueueEntry> by_residual;   // residual-ascending view

    void build(std::vector<QueueEntry> entries, SchedulerCtx& ctx) {
        by_priority = sort_queue(std::move(entries), ctx);
        by_residual = by_priority;
        std::stable_sort(by_residual.begin(), by_residual.end(),
                         [&ctx](const QueueEntry& a, const QueueEntry& b) {
                             return residual_less(a, b, ctx);
                         });
    }

    bool empty() const { return by_priority.empty(); }

    QueueEntry pop_front(SchedulerCtx& ctx) {
        QueueEntry e = by_priority.front();
        by_priority.erase(by_priority.begin());
        erase_residual(e, ctx);
        return e;
    }

    void erase_residual(const QueueEntry& e, SchedulerCtx& ctx) {
        auto it = std::lower_bound(by_residual.begin(), by_residual.end(), e,
                                   [&ctx](const QueueEntry& a, const QueueEntry& b) {
                                       return residual_less(a, b, ctx);
                                   });
        while (it != by_residual.end() && it->id != e.id) ++it;
        if (it != by_residual.end()) by_residual.erase(it);
    }

    void erase_by_id(const std::string& id, SchedulerCtx& ctx) {
        for (auto it = by_priority.begin(); it != by_priority.end(); ++it)
            if (it->id == id) {
                QueueEntry e = *it;
                by_priority.erase(it);
                erase_residual(e, ctx);
                return;
            }
    }

    void insert(const QueueEntry& e, SchedulerCtx& ctx) {
        auto pit = std::lower_bound(by_priority.begin(), by_priority.end(), e,
                                    [&ctx](const QueueEntry& a, const QueueEntry& b) {
                                        return priority_less(a, b, ctx);
                                    });
        by_priority.insert(pit, e);
        auto rit = std::lower_bound(by_residual.begin(), by_residual.end(), e,
                                    [&ctx](const QueueEntry& a, const QueueEntry& b) {
                                        return residual_less(a, b, ctx);
                                    });
        by_residual.insert(rit, e);
    }
};

inline GroupingDecision allocate(const std::vector<QueueEntry>& units, const ClusterSpec& cluster,
                                 SchedulerCtx& ctx) {
    GroupingDecision decision;
    int free_gpus = cluster.total_gpus;
    int running_jobs = 0;
    for (const auto& u : units) {
        int jobs = static_cast<int>(u.members.size());
        if (u.gpu_demand <= free_gpus && running_jobs + jobs <= cluster.concurrency_cap) {
            FinalGroup g;
            g.jobs = u.members;
            g.plan = plan(fuse(u.members), u.gpu_demand, ctx.hw);
            g.est = u.est;
            free_gpus -= u.gpu_demand;
            running_jobs += jobs;
            decision.final_groups.push_back(std::move(g));
        } else {
            decision.deferred.insert(decision.deferred.end(), u.members.begin(), u.members.end());
        }
    }
    return decision;
}

// jobs that can never be planned (or never fit the cluster) go straight to
// the deferred list
inline void split_feasible(const std::vector<JobSpec>& active, const ClusterSpec& cluster,
                           SchedulerCtx& ctx, std::vector<QueueEntry>& entries,
                           std::vector<JobSpec>& hopeless) {
    for (const auto& job : active) {
        if (job.gpu_demand > cluster.total_gpus) {
            hopeless.push_back(job);
            continue;
        }
        const auto& est = evaluate({job}, ctx);
        if (!est) {
            hopeless.push_back(job);
            continue;
        }
        entries.push_back(make_entry({job}, *est, ctx));
    }
}

}  // namespace sched_detail

// Algorithm phase 1: hierarchical incremental grouping.
inline GroupingDecision schedule_round(const std::vector<JobSpec>& active,
                                       const ClusterSpec& cluster, SchedulerCtx& ctx) {
    cluster.validate();
    std::vector<QueueEntry> units;
    std::vector<JobSpec> hopeless;
    sched_detail::split_feasible(active, cluster, ctx, units, hopeless);

    std::vector<int> caps;
    caps.push_back(std::min(cluster.hw.gpus_per_node, cluster.total_gpus));
    caps.push_back(std::min(cluster.rank_nodes * cluster.hw.gpus_per_node, cluster.total_gpus));
    caps.push_back(cluster.total_gpus);
    caps.erase(std::unique(caps.begin(), caps.end()), caps.end());

    for (int cap : caps) {
        sched_detail::TierQueue queue;
        queue.build(std::move(units), ctx);
        std::vector<QueueEntry> finalized;
        while (!queue.empty()) {
            QueueEntry seed = queue.pop_front(ctx);
            auto merged = find_partner(seed, queue.by_residual, cap, ctx);
            if (merged) {
                for (const auto& id : merged->absorbed_ids) queue.erase_by_id(id, ctx);
                queue.insert(merged->merged, ctx);
            } else {
                finalized.push_back(std::move(seed));
            }
        }
        units = std::move(finalized);
    }
    auto decision = sched_detail::allocate(units, cluster, ctx);
    decision.deferred.insert(decision.deferred.end(), hopeless.begin(), hopeless.end());
    return decision;
}

// mLoRA-style baseline: pack jobs in arrival order while the memory check
// holds; no slowdown constraints, no throughput reasoning.
inline GroupingDecision baseline_fifo_memory(const std::vector<JobSpec>& active,
                                             const ClusterSpec& cluster, SchedulerCtx& ctx) {
    cluster.validate();
    std::vector<JobSpec> order = active;
    std::stable_sort(order.begin(), order.end(), [](const JobSpec& a, const JobSpec& b) {
        return a.submit_time < b.submit_time;
    });

    std::vector<QueueEntry> units;
    std::vector<JobSpec> hopeless;
    std::vector<JobSpec> current;
    int current_gpus = 0;

    auto flush = [&]() {
        if (current.empty()) return;
        const auto& est = sched_detail::evaluate(current, ctx);
        units.push_back(sched_detail::make_entry(current, est.value(), ctx));
        current.clear();
        current_gpus = 0;
    };

    for (const auto& job : order) {
        if (job.gpu_demand > cluster.total_gpus || !sched_detail::evaluate({job}, ctx)) {
            hopeless.push_back(job);
            continue;
        }
        if (!current.empty()) {
            bool fits = current.front().model.name == job.model.name &&
                        current_gpus + job.gpu_demand <= cluster.total_gpus;
            if (fits) {
                auto candidate = current;
                candidate.push_back(job);
                fits = sched_detail::evaluate(candidate, ctx).has_value();  // memory check
            }
            if (!fits) flush();
        }
        current.push_back(job);
        current_gpus += job.gpu_demand;
    }
    flush();

    auto decision = sched_detail::allocate(units, cluster, ctx);
    decision.deferred.insert(decision.deferred.end(), hopeless.begin(), hopeless.end());
    return decision;
}

// Megatron-style baseline: every job trains alone.
inline GroupingDecision baseline_isolated(const std::vector<JobSpec>& active,
                                          const ClusterSpec& cluster, SchedulerCtx& ctx) {
    cluster.validate();
    std::vector<JobSpec> order = active;
    std::stable_sort(order.begin(), order.end(), [](const JobSpec& a, const JobSpec& b) {
        return a.submit_time < b.submit_time;
    });
    std::vector<QueueEntry> units;
    std::vector<JobSpec> hopeless;
    for (const auto& job : order) {
        if (job.gpu_demand > cluster.total_gpus) {
            hopeless.push_back(job);
            continue;
        }
        const auto& est = sched_detail::evaluate({job}, ctx);
        if (!est) {
            hopeless.push_back(job);
            continue;
        }
        units.push_back(sched_detail::make_entry({job}, *est, ctx));
    }
    auto decision = sched_detail::allocate(units, cluster, ctx);
    decision.deferred.insert(decision.deferred.end(), hopeless.begin(), hopeless.end());
    return decision;
}

inline GroupingDecision run_policy(Policy policy, const std::vector<JobSpec>& active,
                                   const ClusterSpec& cluster, SchedulerCtx& ctx) {
    switch (policy) {
        case Policy::tlora: return schedule_round(active, cluster, ctx);
        case Policy::mlora_fifo: return baseline_fifo_memory(active, cluster, ctx);
        case Policy::isolated: return baseline_isolated(active, cluster, ctx);
    }
    throw std::logic_error("unreachable policy");
}

}  // namespace lora_fleet
