#pragma once

#include <cmath>
#include <cstdint>

#include "mergelock/checkpoint.hpp"
#include "mergelock/config.hpp"
#include "mergelock/rng.hpp"
#include "mergelock/transformer.hpp"

namespace mergelock {

// Random initialization standing in for a pretrained model. Projection
// entries scale like 1/sqrt(fan-in) so activations stay O(1); layer norms
// start at gamma=1, beta=0.
inline Checkpoint make_pretrained(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Checkpoint ckpt;
    ckpt.config = config;
    const double attn_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    const double w2_std = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
    const double bias_std = 0.02;

    for (const TensorSpec& spec : tensor_schema(config)) {
        Matrix m(spec.rows, spec.cols);
        const bool is_gamma = spec.name.ends_with("gamma");
        const bool is_beta = spec.name.ends_with("beta");
        if (is_gamma) {
            for (double& v : m.storage()) v = 1.0;
        } else if (is_beta) {
            // zeros
        } else if (spec.is_bias) {
            if (config.includes_bias)
                for (double& v : m.storage()) v = bias_std * rng.gaussian();
        } else {
            const double std_dev = spec.name.ends_with("mlp.w2") ? w2_std : attn_std;
            for (double& v : m.storage()) v = std_dev * rng.gaussian();
        }
        ckpt.tensors.emplace(spec.name, std::move(m));
    }
    ckpt.validate();
    return ckpt;
}

// Synthetic fine-tune: theta_pre plus a seeded gaussian task vector whose
// per-entry std is scale * ||theta_pre||_F / sqrt(param count), i.e. the
// task vector norm is about scale * ||theta_pre||_F. No training happens.
inline Checkpoint make_finetune(const Checkpoint& pre, std::uint64_t seed, double scale = 0.02) {
    if (scale < 0.0) throw ParameterError("make_finetune: scale must be >= 0");
    Rng rng(seed);
    double norm_sq = 0.0;
    std::size_t count = 0;
    for (const auto& [name, m] : pre.tensors) {
        for (double v : m.storage()) norm_sq += v * v;
        count += m.size();
    }
    const double entry_std = scale * std::sqrt(norm_sq / static_cast<double>(count));

    Checkpoint ft = pre;
    for (const TensorSpec& spec : tensor_schema(pre.config)) {
        if (spec.is_bias && !pre.config.includes_bias) continue;
        Matrix& m = ft.at(spec.name);
        for (double& v : m.storage()) v += entry_std * rng.gaussian();
    }
    ft.validate();
    return ft;
}

inline Batch make_batch(std::size_t count, std::size_t seq_len, std::size_t d_model,
                        std::uint64_t seed) {
    if (count < 1 || seq_len < 1 || d_model < 1)
        throw ParameterError("make_batch: count, seq_len and d_model must be >= 1");
    Rng rng(seed);
    Batch batch;
    batch.inputs.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        batch.inputs.push_back(sample_gaussian(seq_len, d_model, 1.0, rng));
    return batch;
}

}  // namespace mergelock
