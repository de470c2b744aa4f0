#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lora_fleet/workload.hpp"

namespace lora_fleet {

/*
 * Desk-scale reference of the fused batched LoRA kernel semantics:
 * gather -> down-projection -> up-projection -> scatter, never forming the
 * d x k product. Double precision throughout; also produces the FLOP/byte
 * accounting the cost model is calibrated against.
 */

using Matrix = Eigen::MatrixXd;

struct AdapterMatrices {
    std::string job_id;
    Matrix A;  // d x r, down-projection
    Matrix B;  // r x k, up-projection
};

struct TokenBatch {
    Matrix rows;                          // total_tokens x d
    std::vector<std::string> segment_map;  // owning job_id per row
};

struct OpCost {
    double flops = 0.0;
    double bytes_moved = 0.0;
    long long kernel_launches = 0;

    OpCost& operator+=(const OpCost& o) {
        flops += o.flops;
        bytes_moved += o.bytes_moved;
        kernel_launches += o.kernel_launches;
        return *this;
    }
};

namespace detail {

inline std::map<std::string, const AdapterMatrices*> index_adapters(
    const std::vector<AdapterMatrices>& adapters) {
    std::map<std::string, const AdapterMatrices*> by_id;
    for (const auto& a : adapters) by_id[a.job_id] = &a;
    return by_id;
}

// rows of `batch` owned by job_id, in order
inline std::vector<Eigen::Index> segment_rows(const TokenBatch& batch, const std::string& job_id) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index t = 0; t < batch.rows.rows(); ++t)
        if (batch.segment_map[t] == job_id) idx.push_back(t);
    return idx;
}

inline void check_shapes(const TokenBatch& batch, const Matrix& base_weight,
                         const std::map<std::string, const AdapterMatrices*>& by_id) {
    const auto d = batch.rows.cols();
    if (base_weight.rows() != d)
        throw std::runtime_error("fused_lora: base weight rows != token dim d");
    if (static_cast<Eigen::Index>(batch.segment_map.size()) != batch.rows.rows())
        throw std::runtime_error("fused_lora: segment_map length != token count");
    for (const auto& id : batch.segment_map) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::runtime_error("fused_lora: segment '" + id + "' has no adapter");
        const auto& a = *it->second;
        if (a.A.rows() != d || a.A.cols() != a.B.rows() || a.B.cols() != base_weight.cols())
            throw std::runtime_error("fused_lora: shape mismatch in segment '" + id + "'");
    }
}

}  // namespace detail

// Y[t] = X[t] * W + X[t] * A_i * B_i for t's owning job i. The intermediate
// per segment has shape (|X_i|, r_i); no d x k adapter product is formed.
inline std::pair<Matrix, OpCost> fused_forward(const TokenBatch& batch, const Matrix& base_weight,
                                               const std::vector<AdapterMatrices>& adapters) {
    auto by_id = detail::index_adapters(adapters);
    detail::check_shapes(batch, base_weight, by_id);

    const auto total_tokens = batch.rows.rows();
    const double d = static_cast<double>(batch.rows.cols());
    const double k = static_cast<double>(base_weight.cols());

    Matrix out = batch.rows * base_weight;  // shared base term, computed once

    OpCost cost;
    cost.flops = 2.0 * static_cast<double>(total_tokens) * d * k;
    cost.bytes_moved = 8.0 * (static_cast<double>(total_tokens) * d      // X read
                              + d * k                                    // W read
                              + static_cast<double>(total_tokens) * k);  // Y write
    cost.kernel_launches = 1;  // one fused launch per nano-batch

    for (const auto& [id, adapter] : by_id) {
        auto rows = detail::segment_rows(batch, id);
        if (rows.empty()) continue;
        const double n = static_cast<double>(rows.size());
        const double r = static_cast<double>(adapter->A.cols());

        Matrix gathered(rows.size(), batch.rows.cols());
        for (size_t i = 0; i < rows.size(); ++i) gathered.row(static_cast<Eigen::Index>(i)) = batch.rows.row(rows[i]);

        Matrix mid = gathered * adapter->A;   // (|X_i|, r_i)
        Matrix delta = mid * adapter->B;      // (|X_i|, k)
        for (size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) += delta.row(static_cast<Eigen::Index>(i));

        cost.flops += 2.0 * n * d * r + 2.0 * n * r * k;
        cost.bytes_moved += 8.0 * (d * r + r * k + 2.0 * n * r);  // A, B, intermediate rw
    }
    return {std::move(out), cost};
}

// Contrast case: explicitly materializes dW_i = A_i * B_i and applies
// X_i * (W + dW_i) per segment. Kept as the independent check for the fused
// path; deliberately the dumbest possible formulation.
inline Matrix materialized_oracle(const TokenBatch& batch, const Matrix& base_weight,
                                  const std::vector<AdapterMatrices>& adapters) {
    auto by_id = detail::index_adapters(adapters);
    detail::check_shapes(batch, base_weight, by_id);

    Matrix out(batch.rows.rows(), base_weight.cols());
    for (const auto& [id, adapter] : by_id) {
        Matrix w_i = base_weight + adapter->A * adapter->B;
        for (auto t : detail::segment_rows(batch, id)) out.row(t) = batch.rows.row(t) * w_i;
    }
    return out;
}

// Per-adapter accounting for the unfused design: one gather, two GEMMs and a
// scatter per adapter instead of a single fused launch.
inline OpCost unfused_cost(const TokenBatch& batch, const Matrix& base_weight,
                           const std::vector<AdapterMatrices>& adapters) {
    auto by_id = detail::index_adapters(adapters);
    detail::check_shapes(batch, base_weight, by_id);

    const double total_tokens = static_cast<double>(batch.rows.rows());
    const double d = static_cast<double>(batch.rows.cols());
    const double k = static_cast<double>(base_weight.cols());

    OpCost cost;
    cost.flops = 2.0 * total_tokens * d * k;
    cost.bytes_moved = 8.0 * (total_tokens * d + d * k + total_tokens * k);
    cost.kernel_launches = 1;  // base GEMM
    for (const auto& [id, adapter] : by_id) {
        auto rows = detail::segment_rows(batch, id);
        if (rows.empty()) continue;
        const double n = static_cast<double>(rows.size());
        const double r = static_cast<double>(adapter->A.cols());
        cost.flops += 2.0 * n * d * r + 2.0 * n * r * k;
        // gather + down GEMM + up GEMM + scatter; intermediates spill to HBM
        cost.bytes_moved += 8.0 * (2.0 * n * d + d * r + r * k + 4.0 * n * r + 2.0 * n * k);
        cost.kernel_launches += 4;
    }
    return cost;
}

// r * (d + k) trainable parameters per adapted layer
inline long long trainable_param_count(const JobSpec& job) {
    job.validate();
    return static_cast<long long>(job.rank) * (job.model.hidden_dim + job.model.proj_dim) *
           job.model.num_layers;
}

// adapter FLOPs per token per adapted layer (forward), per the fused path
inline double adapter_flops_per_token(const JobSpec& job) {
    return 2.0 * static_cast<double>(job.rank) *
           static_cast<double>(job.model.hidden_dim + job.model.proj_dim);
}

}  // namespace lora_fleet
