#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lora_fleet/config.hpp"
#include "lora_fleet/sim_engine.hpp"
#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Subcommand implementations behind the CLI front end. Each command is a
 * pure function of (config, flags): outputs land only under the output
 * directory, inputs are never touched.
 */

inline int log_verbosity() {
    const char* env = std::getenv("LORA_FLEET_LOG");
    if (!env) return 1;
    std::string v = env;
    if (v == "quiet" || v == "0") return 0;
    if (v == "debug" || v == "2") return 2;
    return 1;
}

inline void log_info(const std::string& msg) {
    if (log_verbosity() >= 1) std::cerr << "[lora-fleet] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
    if (log_verbosity() >= 2) std::cerr << "[lora-fleet:debug] " << msg << "\n";
}

namespace cmd_detail {

inline void write_event_log(const EventLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write event log: " + path);
    for (const auto& rec : log) out << rec.dump() << "\n";
}

inline void write_metrics(const MetricsReport& m, const std::filesystem::path& dir) {
    {
        std::ofstream out(dir / "metrics.json");
        out << metrics_to_json(m).dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "jct.csv");
        out << std::setprecision(17);
        out << "job_id,jct_s,queueing_s,running_s\n";
        for (const auto& [id, jct] : m.jct) {
            double q = m.queueing_delay.at(id);
            out << id << ',' << jct << ',' << q << ',' << (jct - q) << "\n";
        }
    }
    {
        std::ofstream out(dir / "timeline.csv");
        out << std::setprecision(17);
        out << "time_s,samples_per_s\n";
        for (const auto& [t, v] : m.throughput_timeline) out << t << ',' << v << "\n";
    }
}

}  // namespace cmd_detail

struct GenTraceOpts {
    int jobs = 0;  // required
    double arrival_scale = 1.0;
    std::optional<double> max_slowdown;
    std::string out_file;  // default <out_dir>/trace.csv
};

inline std::filesystem::path cmd_gen_trace(const RunConfig& cfg, const GenTraceOpts& opts) {
    if (opts.jobs < 1) throw std::runtime_error("gen-trace: --jobs must be >= 1");
    SynthParams params = cfg.synth;
    if (opts.max_slowdown) params.max_slowdown = *opts.max_slowdown;

    Trace trace = synth_trace(opts.jobs, cfg.seed, cfg.arrival_rate, cfg.catalog, params);
    if (opts.arrival_scale != 1.0) trace = scale_arrivals(trace, opts.arrival_scale);

    std::filesystem::path out =
        opts.out_file.empty() ? std::filesystem::path(cfg.out_dir) / "trace.csv"
                              : std::filesystem::path(opts.out_file);
    std::filesystem::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    serialize_trace(trace, out.string());
    log_info("wrote " + std::to_string(trace.jobs.size()) + " jobs to " + out.string());
    return out;
}

struct ReplayOpts {
    std::string trace_file;  // required
    std::optional<Policy> policy;
    std::string out_subdir;  // default "" = out_dir itself
};

inline MetricsReport cmd_replay(const RunConfig& cfg, const ReplayOpts& opts) {
    if (opts.trace_file.empty()) throw std::runtime_error("replay: --trace is required");
    Trace trace = parse_trace(opts.trace_file, cfg.catalog);
    Policy policy = opts.policy.value_or(cfg.policy);

    log_debug("replaying " + std::to_string(trace.jobs.size()) + " jobs");
    auto result = run(trace, cfg.cluster, policy, cfg.sim);

    std::filesystem::path dir = cfg.out_dir;
    if (!opts.out_subdir.empty()) dir /= opts.out_subdir;
    std::filesystem::create_directories(dir);
    cmd_detail::write_event_log(result.log, (dir / "events.jsonl").string());
    cmd_detail::write_metrics(result.metrics, dir);
    log_info("replay done: throughput " + std::to_string(result.metrics.aggregate_throughput) +
             " samples/s, " + std::to_string(result.metrics.completed_jobs) + " jobs completed");
    return result.metrics;
}

struct SweepOpts {
    std::string trace_file;          // empty = synthesize trace_jobs from config
    std::vector<std::string> axes;   // subset of {arrival, cluster, nano}
    int threads = 1;
    std::vector<double> arrival_scales = {0.5, 1.0, 2.0, 5.0};
    std::vector<int> cluster_sizes = {32, 64, 128, 256};
    std::vector<int> fixed_ns = {1, 4, 16, 64};
};

struct SweepCell {
    std::string name;
    double arrival_scale = 1.0;
    int cluster_size = 0;            // 0 = config default
    std::optional<int> fixed_n;      // nullopt + nano axis off = config default
    bool adaptive = true;
    MetricsReport metrics;
};

inline std::vector<SweepCell> cmd_sweep(const RunConfig& cfg, const SweepOpts& opts) {
    Trace base_trace;
    if (opts.trace_file.empty())
        base_trace = synth_trace(cfg.trace_jobs, cfg.seed, cfg.arrival_rate, cfg.catalog, cfg.synth);
    else
        base_trace = parse_trace(opts.trace_file, cfg.catalog);

    auto has_axis = [&](const char* a) {
        return std::find(opts.axes.begin(), opts.axes.end(), a) != opts.axes.end();
    };
    for (const auto& a : opts.axes)
        if (a != "arrival" && a != "cluster" && a != "nano")
            throw std::runtime_error("sweep: unknown axis '" + a +
                                     "' (valid: arrival, cluster, nano)");

    std::vector<double> scales = has_axis("arrival") ? opts.arrival_scales : std::vector<double>{1.0};
    std::vector<int> clusters =
        has_axis("cluster") ? opts.cluster_sizes : std::vector<int>{cfg.cluster.total_gpus};
    // nano axis: adaptive plus each fixed N
    std::vector<std::optional<int>> nanos;
    if (has_axis("nano")) {
        nanos.push_back(std::nullopt);
        for (int n : opts.fixed_ns) nanos.push_back(n);
    } else {
        nanos.push_back(cfg.sim.fixed_n);
    }

    std::vector<SweepCell> cells;
    for (double sc : scales)
        for (int gpus : clusters)
            for (const auto& n : nanos) {
                SweepCell cell;
                cell.arrival_scale = sc;
                cell.cluster_size = gpus;
                cell.fixed_n = n;
                cell.adaptive = !n.has_value();
                std::ostringstream name;
                name << "arrival" << sc << "_gpus" << gpus << "_"
                     << (n ? "fixedN" + std::to_string(*n) : "adaptive");
                cell.name = name.str();
                cells.push_back(std::move(cell));
            }

    auto run_cell = [&cfg, &base_trace](SweepCell cell) {
        Trace trace = cell.arrival_scale != 1.0 ? scale_arrivals(base_trace, cell.arrival_scale)
                                                : base_trace;
        ClusterSpec cluster = cfg.cluster;
        cluster.total_gpus = cell.cluster_size;
        cluster.concurrency_cap = std::max(cluster.concurrency_cap, cluster.total_gpus);
        SimConfig sim = cfg.sim;
        sim.fixed_n = cell.fixed_n;
        auto result = run(trace, cluster, cfg.policy, sim);
        cell.metrics = std::move(result.metrics);

        std::filesystem::path dir = std::filesystem::path(cfg.out_dir) / cell.name;
        std::filesystem::create_directories(dir);
        cmd_detail::write_event_log(result.log, (dir / "events.jsonl").string());
        cmd_detail::write_metrics(cell.metrics, dir);
        return cell;
    };

    // fan out independent simulations, collect back in declaration order so
    // the summary is thread-count invariant
    int threads = std::max(1, opts.threads);
    std::vector<SweepCell> done(cells.size());
    for (size_t start = 0; start < cells.size(); start += threads) {
        std::vector<std::future<SweepCell>> batch;
        for (size_t i = start; i < std::min(cells.size(), start + threads); ++i)
            batch.push_back(std::async(std::launch::async, run_cell, cells[i]));
        for (size_t i = 0; i < batch.size(); ++i) done[start + i] = batch[i].get();
    }

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream summary(std::filesystem::path(cfg.out_dir) / "summary.csv");
    summary << std::setprecision(17);
    summary << "cell,arrival_scale,cluster_gpus,nano_mode,aggregate_throughput,median_jct_s,"
               "gpu_utilization,completed_jobs\n";
    for (const auto& cell : done) {
        summary << cell.name << ',' << cell.arrival_scale << ',' << cell.cluster_size << ','
                << (cell.fixed_n ? std::to_string(*cell.fixed_n) : "adaptive") << ','
                << cell.metrics.aggregate_throughput << ',' << median_jct(cell.metrics) << ','
                << cell.metrics.gpu_utilization << ',' << cell.metrics.completed_jobs << "\n";
    }
    log_info("sweep done: " + std::to_string(done.size()) + " cells");
    return done;
}

struct ReportOpts {
    std::string run_dir;  // required
    std::string format = "table";  // table | csv | json
};

inline std::string cmd_report(const ReportOpts& opts) {
    namespace fs = std::filesystem;
    if (opts.run_dir.empty()) throw std::runtime_error("report: --run is required");
    fs::path dir = opts.run_dir;
    if (!fs::exists(dir)) throw std::runtime_error("report: no such directory: " + opts.run_dir);

    // a sweep dir has summary.csv; a single run has metrics.json
    if (fs::exists(dir / "summary.csv")) {
        std::ifstream in(dir / "summary.csv");
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    if (!fs::exists(dir / "metrics.json"))
        throw std::runtime_error("report: " + opts.run_dir +
                                 " has neither summary.csv nor metrics.json");

    std::ifstream in(dir / "metrics.json");
    nlohmann::json m = nlohmann::json::parse(in);

    if (opts.format == "json") return m.dump(2) + "\n";

    std::ostringstream out;
    out << std::setprecision(17);
    if (opts.format == "csv") {
        out << "metric,value\n";
        out << "aggregate_throughput," << m.at("aggregate_throughput").get<double>() << "\n";
        out << "gpu_utilization," << m.at("gpu_utilization").get<double>() << "\n";
        out << "makespan," << m.at("makespan").get<double>() << "\n";
        out << "completed_jobs," << m.at("completed_jobs").get<long long>() << "\n";
        out << "incomplete_jobs," << m.at("incomplete_jobs").get<long long>() << "\n";
        std::vector<double> jcts;
        for (const auto& [id, v] : m.at("jct").items()) jcts.push_back(v.get<double>());
        std::sort(jcts.begin(), jcts.end());
        double med = jcts.empty() ? 0.0
                     : jcts.size() % 2 ? jcts[jcts.size() / 2]
                                       : 0.5 * (jcts[jcts.size() / 2 - 1] + jcts[jcts.size() / 2]);
        out << "median_jct_s," << med << "\n";
        return out.str();
    }

    out << "run: " << opts.run_dir << "\n";
    out << "  aggregate throughput : " << m.at("aggregate_throughput").get<double>()
        << " samples/s\n";
    out << "  gpu utilization      : " << m.at("gpu_utilization").get<double>() << "\n";
    out << "  makespan             : " << m.at("makespan").get<double>() << " s\n";
    out << "  completed / left     : " << m.at("completed_jobs").get<long long>() << " / "
        << m.at("incomplete_jobs").get<long long>() << "\n";
    out << "  colocation by class  :";
    for (const auto& [cls, frac] : m.at("colocation_histogram").items())
        out << " " << cls << "=" << frac.get<double>();
    out << "\n";
    return out.str();
}

}  // namespace lora_fleet
