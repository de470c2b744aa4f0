#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace lora_fleet {

/*
 * Job and trace definitions. A trace is an ordered stream of LoRA
 * fine-tuning jobs that drives the simulator.
 */

struct ModelSpec {
    std::string name;
    int num_layers = 1;
    long long hidden_dim = 1;   // d
    long long proj_dim = 1;     // k
    double per_layer_flops_per_token = 0.0;
    double base_memory_bytes = 0.0;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("ModelSpec: num_layers must be >= 1");
        if (hidden_dim < 1 || proj_dim < 1)
            throw std::invalid_argument("ModelSpec: hidden_dim and proj_dim must be >= 1");
        if (base_memory_bytes <= 0.0)
            throw std::invalid_argument("ModelSpec: base_memory_bytes must be > 0");
    }
};

struct JobSpec {
    std::string job_id;
    ModelSpec model;
    int rank = 1;
    int batch_size = 1;
    int seq_len = 512;
    long long step_budget = 1;
    int gpu_demand = 1;
    double submit_time = 0.0;
    double max_slowdown = 1.25;
    std::optional<double> deadline;

    void validate() const {
        model.validate();
        if (rank < 1) throw std::invalid_argument("JobSpec " + job_id + ": rank must be >= 1");
        if (rank > std::min(model.hidden_dim, model.proj_dim))
            throw std::invalid_argument("JobSpec " + job_id + ": rank exceeds min(d, k)");
        if (batch_size < 1) throw std::invalid_argument("JobSpec " + job_id + ": batch_size must be >= 1");
        if (gpu_demand < 1) throw std::invalid_argument("JobSpec " + job_id + ": gpu_demand must be >= 1");
        if (step_budget < 1) throw std::invalid_argument("JobSpec " + job_id + ": step_budget must be >= 1");
        if (max_slowdown < 1.0)
            throw std::invalid_argument("JobSpec " + job_id + ": max_slowdown must be >= 1");
    }
};

struct Trace {
    std::vector<JobSpec> jobs;  // sorted by submit_time, stable
    double horizon_end = 0.0;
};

inline const ModelSpec& find_model(const std::vector<ModelSpec>& catalog, const std::string& name) {
    for (const auto& m : catalog)
        if (m.name == name) return m;
    throw std::runtime_error("unknown model '" + name + "' (not in catalog)");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_num(const std::string& s, const char* field, int line_no) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing chars");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                                 ": bad value '" + s + "' for field " + field);
    }
}

inline void sort_by_submit(std::vector<JobSpec>& jobs) {
    std::stable_sort(jobs.begin(), jobs.end(),
                     [](const JobSpec& a, const JobSpec& b) { return a.submit_time < b.submit_time; });
}

}  // namespace detail

inline constexpr const char* kTraceHeader =
    "job_id,submit_time_s,model,rank,batch_size,seq_len,step_budget,gpu_demand,max_slowdown,deadline_s";

// Trace CSV: header required, '#' comment lines ignored, max_slowdown and
// deadline_s may be empty. Rows are reordered by submit_time if needed.
inline Trace parse_trace(const std::string& path, const std::vector<ModelSpec>& catalog) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    Trace trace;
    std::optional<double> horizon_from_comment;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    std::unordered_set<std::string> seen_ids;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            std::istringstream cs(line);
            std::string hash, key;
            cs >> hash >> key;
            if (key == "horizon_end") {
                double v;
                if (cs >> v) horizon_from_comment = v;
            }
            continue;
        }
        if (!header_seen) {
            // tolerate absent optional columns in the header tail
            if (line.rfind("job_id,submit_time_s,model,rank,batch_size,seq_len,step_budget,gpu_demand",
                           0) != 0)
                throw std::runtime_error("trace header mismatch at line " + std::to_string(line_no) +
                                         "; expected: " + std::string(kTraceHeader));
            header_seen = true;
            continue;
        }
        auto f = detail::split_csv_line(line);
        if (f.size() < 8)
            throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                                     ": expected >= 8 columns, got " + std::to_string(f.size()));
        JobSpec job;
        job.job_id = f[0];
        if (job.job_id.empty())
            throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                                     ": empty job_id");
        if (!seen_ids.insert(job.job_id).second)
            throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                                     ": duplicate job_id '" + job.job_id + "'");
        job.submit_time = detail::parse_num(f[1], "submit_time_s", line_no);
        job.model = find_model(catalog, f[2]);
        job.rank = static_cast<int>(detail::parse_num(f[3], "rank", line_no));
        job.batch_size = static_cast<int>(detail::parse_num(f[4], "batch_size", line_no));
        job.seq_len = f[5].empty() ? 512 : static_cast<int>(detail::parse_num(f[5], "seq_len", line_no));
        job.step_budget = static_cast<long long>(detail::parse_num(f[6], "step_budget", line_no));
        job.gpu_demand = static_cast<int>(detail::parse_num(f[7], "gpu_demand", line_no));
        job.max_slowdown =
            (f.size() > 8 && !f[8].empty()) ? detail::parse_num(f[8], "max_slowdown", line_no) : 1.25;
        if (f.size() > 9 && !f[9].empty())
            job.deadline = detail::parse_num(f[9], "deadline_s", line_no);
        job.validate();
        trace.jobs.push_back(std::move(job));
    }
    if (!header_seen) throw std::runtime_error("trace file has no header: " + path);

    detail::sort_by_submit(trace.jobs);
    trace.horizon_end = horizon_from_comment.value_or(
        trace.jobs.empty() ? 0.0 : trace.jobs.back().submit_time);
    return trace;
}

inline void serialize_trace(const Trace& trace, std::ostream& out) {
    out << std::setprecision(17);  // exact double round-trip
    out << "# horizon_end " << trace.horizon_end << "\n";
    out << kTraceHeader << "\n";
    for (const auto& j : trace.jobs) {
        out << j.job_id << ',' << j.submit_time << ',' << j.model.name << ',' << j.rank << ','
            << j.batch_size << ',' << j.seq_len << ',' << j.step_budget << ',' << j.gpu_demand << ','
            << j.max_slowdown << ',';
        if (j.deadline) out << *j.deadline;
        out << "\n";
    }
}

inline void serialize_trace(const Trace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    serialize_trace(trace, out);
}

struct SynthParams {
    double max_slowdown = 1.25;
    int seq_len = 512;
    long long step_budget_min = 20;
    long long step_budget_max = 100;
};

// Synthetic arrivals: rank from {2,4,8,16}, batch from {1,2,4,8}, Poisson
// arrivals. Pure function of its arguments.
inline Trace synth_trace(int n_jobs, std::uint64_t seed, double arrival_rate,
                         const std::vector<ModelSpec>& catalog, const SynthParams& params = {}) {
    if (n_jobs < 1) throw std::invalid_argument("synth_trace: n_jobs must be >= 1");
    if (arrival_rate <= 0.0) throw std::invalid_argument("synth_trace: arrival_rate must be > 0");
    if (catalog.empty()) throw std::invalid_argument("synth_trace: empty model catalog");

    static const int kRanks[] = {2, 4, 8, 16};
    static const int kBatches[] = {1, 2, 4, 8};
    static const int kGpuDemands[] = {1, 2, 4, 8};

    std::mt19937_64 rng(seed);
    auto pick = [&rng](auto& arr) { return arr[rng() % 4]; };

    Trace trace;
    double t = 0.0;
    for (int i = 0; i < n_jobs; ++i) {
        // inverse-CDF exponential inter-arrival; uses raw 64-bit draws so the
        // stream layout is fixed by the seed alone
        double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1p-53;
        t += -std::log(u) / arrival_rate;

        JobSpec job;
        job.job_id = "j" + std::to_string(i);
        job.model = catalog[rng() % catalog.size()];
        job.rank = pick(kRanks);
        job.batch_size = pick(kBatches);
        job.seq_len = params.seq_len;
        job.gpu_demand = pick(kGpuDemands);
        long long span = params.step_budget_max - params.step_budget_min + 1;
        job.step_budget = params.step_budget_min + static_cast<long long>(rng() % span);
        job.submit_time = t;
        job.max_slowdown = params.max_slowdown;
        job.validate();
        trace.jobs.push_back(std::move(job));
    }
    trace.horizon_end = t;
    return trace;
}

// Divides all submit times by `factor`: factor 2 means jobs arrive twice as
// soon. Non-time fields untouched.
inline Trace scale_arrivals(const Trace& trace, double factor) {
    if (factor <= 0.0) throw std::invalid_argument("scale_arrivals: factor must be > 0");
    Trace out = trace;
    for (auto& j : out.jobs) j.submit_time /= factor;
    out.horizon_end /= factor;
    return out;
}

}  // namespace lora_fleet
