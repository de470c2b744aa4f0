#pragma once

#include <stdexcept>

#include "lora_fleet/hardware.hpp"

namespace lora_fleet {

struct ClusterSpec {
    int total_gpus = 128;
    HardwareSpec hw;
    int concurrency_cap = 128;  // max runnable jobs
    int rank_nodes = 4;         // nodes per rank block for the grouping tiers

    void validate() const {
        hw.validate();
        if (total_gpus < 1) throw std::invalid_argument("ClusterSpec: total_gpus must be >= 1");
        if (concurrency_cap < 1)
            throw std::invalid_argument("ClusterSpec: concurrency_cap must be >= 1");
        if (rank_nodes < 1) throw std::invalid_argument("ClusterSpec: rank_nodes must be >= 1");
    }
};

}  // namespace lora_fleet
