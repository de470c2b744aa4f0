#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lora_fleet/cluster.hpp"
#include "lora_fleet/scheduler.hpp"
#include "lora_fleet/sim_engine.hpp"
#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Run configuration: a flat `key = value` text file with full defaulting.
 * `#` starts a comment. Unknown keys are an error (typos should not silently
 * fall back to defaults). Custom base models can be declared inline as
 * model.<name>.<field> keys and then referenced from traces.
 */

struct RunConfig {
    ClusterSpec cluster;
    Policy policy = Policy::tlora;
    SimConfig sim;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // trace synthesis defaults
    int trace_jobs = 200;
    double arrival_rate = 1.0;  // jobs per second
    SynthParams synth;

    std::vector<ModelSpec> catalog;
};

// llama3-8b / qwen3-8b: layer counts and dims are public; per-layer flops per
// token is 2 * params / layers (dense forward), memory is fp16 weights.
inline std::vector<ModelSpec> builtin_catalog() {
    ModelSpec llama;
    llama.name = "llama3-8b";
    llama.num_layers = 32;
    llama.hidden_dim = 4096;
    llama.proj_dim = 4096;
    llama.per_layer_flops_per_token = 5.0e8;
    llama.base_memory_bytes = 1.6e10;

    ModelSpec qwen;
    qwen.name = "qwen3-8b";
    qwen.num_layers = 36;
    qwen.hidden_dim = 4096;
    qwen.proj_dim = 4096;
    qwen.per_layer_flops_per_token = 4.5e8;
    qwen.base_memory_bytes = 1.6e10;

    return {llama, qwen};
}

namespace config_detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

inline double to_num(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing chars");
        return d;
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad numeric value '" + v + "' for key " + key);
    }
}

}  // namespace config_detail

inline RunConfig parse_config_text(std::istream& in, const std::string& origin = "<config>") {
    RunConfig cfg;
    cfg.catalog = builtin_catalog();

    std::map<std::string, std::map<std::string, std::string>> model_defs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        std::string key = config_detail::trim(line.substr(0, eq));
        std::string val = config_detail::trim(line.substr(eq + 1));
        auto num = [&] { return config_detail::to_num(val, key); };

        if (key.rfind("model.", 0) == 0) {
            auto rest = key.substr(6);
            auto dot = rest.find('.');
            if (dot == std::string::npos)
                throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                         ": model keys are model.<name>.<field>");
            model_defs[rest.substr(0, dot)][rest.substr(dot + 1)] = val;
        } else if (key == "total_gpus") {
            cfg.cluster.total_gpus = static_cast<int>(num());
        } else if (key == "concurrency_cap") {
            cfg.cluster.concurrency_cap = static_cast<int>(num());
        } else if (key == "rank_nodes") {
            cfg.cluster.rank_nodes = static_cast<int>(num());
        } else if (key == "gpus_per_node") {
            cfg.cluster.hw.gpus_per_node = static_cast<int>(num());
        } else if (key == "gpu_flops") {
            cfg.cluster.hw.gpu_flops = num();
        } else if (key == "gpu_memory") {
            cfg.cluster.hw.gpu_memory = num();
        } else if (key == "intra_node_bw") {
            cfg.cluster.hw.intra_node_bw = num();
        } else if (key == "inter_node_bw") {
            cfg.cluster.hw.inter_node_bw = num();
        } else if (key == "weight_stream_bw") {
            cfg.cluster.hw.weight_stream_bw = num();
        } else if (key == "kernel_launch_overhead") {
            cfg.cluster.hw.kernel_launch_overhead = num();
        } else if (key == "activation_bytes") {
            cfg.cluster.hw.activation_bytes = num();
        } else if (key == "backward_multiplier") {
            cfg.cluster.hw.backward_multiplier = num();
        } else if (key == "policy") {
            cfg.policy = parse_policy(val);
        } else if (key == "horizon") {
            cfg.sim.horizon = num();
        } else if (key == "aimd_initial_n") {
            cfg.sim.aimd_initial_n = static_cast<int>(num());
        } else if (key == "aimd_alpha") {
            cfg.sim.aimd_alpha = static_cast<int>(num());
        } else if (key == "aimd_beta") {
            cfg.sim.aimd_beta = num();
        } else if (key == "aimd_tau") {
            cfg.sim.aimd_tau_rel = num();
        } else if (key == "reconfig_penalty") {
            cfg.sim.reconfig_penalty = num();
        } else if (key == "fixed_n") {
            int n = static_cast<int>(num());  // 0 = adaptive
            if (n > 0) cfg.sim.fixed_n = n;
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(num());
        } else if (key == "out_dir") {
            cfg.out_dir = val;
        } else if (key == "trace_jobs") {
            cfg.trace_jobs = static_cast<int>(num());
        } else if (key == "arrival_rate") {
            cfg.arrival_rate = num();
        } else if (key == "seq_len") {
            cfg.synth.seq_len = static_cast<int>(num());
        } else if (key == "max_slowdown") {
            cfg.synth.max_slowdown = num();
        } else if (key == "step_budget_min") {
            cfg.synth.step_budget_min = static_cast<long long>(num());
        } else if (key == "step_budget_max") {
            cfg.synth.step_budget_max = static_cast<long long>(num());
        } else {
            throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": unknown key '" +
                                     key + "'");
        }
    }

    for (const auto& [name, fields] : model_defs) {
        ModelSpec m;
        m.name = name;
        for (const auto& [field, val] : fields) {
            if (field != "num_layers" && field != "hidden_dim" && field != "proj_dim" &&
                field != "per_layer_flops_per_token" && field != "base_memory_bytes")
                throw std::runtime_error("config: unknown model field '" + field + "' for model " +
                                         name);
            double v = config_detail::to_num(val, "model." + name + "." + field);
            if (field == "num_layers")
                m.num_layers = static_cast<int>(v);
            else if (field == "hidden_dim")
                m.hidden_dim = static_cast<long long>(v);
            else if (field == "proj_dim")
                m.proj_dim = static_cast<long long>(v);
            else if (field == "per_layer_flops_per_token")
                m.per_layer_flops_per_token = v;
            else if (field == "base_memory_bytes")
                m.base_memory_bytes = v;
        }
        m.validate();
        // a definition with an existing name overrides the builtin
        bool replaced = false;
        for (auto& existing : cfg.catalog)
            if (existing.name == name) {
                existing = m;
                replaced = true;
            }
        if (!replaced) cfg.catalog.push_back(m);
    }

    cfg.cluster.validate();
    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse_config_text(in, path);
}

}  // namespace lora_fleet
