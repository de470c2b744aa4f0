#pragma once

#include <stdexcept>

namespace lora_fleet {

struct HardwareSpec {
    double gpu_flops = 1e13;           // flops/s per GPU
    double gpu_memory = 4e10;          // bytes per GPU
    double intra_node_bw = 1e11;       // bytes/s across GPUs in a node
    double inter_node_bw = 5e8;        // bytes/s across nodes
    double weight_stream_bw = 3e10;    // bytes/s, per-GPU weight streaming
    int gpus_per_node = 8;
    double kernel_launch_overhead = 0.2;  // seconds per nano-batch
    double activation_bytes = 2.0;        // bytes per activation value
    double backward_multiplier = 3.0;     // total flops = fwd * this

    void validate() const {
        if (gpu_flops <= 0 || gpu_memory <= 0 || intra_node_bw <= 0 || inter_node_bw <= 0 ||
            weight_stream_bw <= 0 || gpus_per_node < 1 || kernel_launch_overhead < 0)
            throw std::invalid_argument("HardwareSpec: all rates must be positive");
        if (intra_node_bw < inter_node_bw)
            throw std::invalid_argument("HardwareSpec: intra_node_bw must be >= inter_node_bw");
    }
};

}  // namespace lora_fleet
