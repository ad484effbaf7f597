#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mergelock/errors.hpp"

namespace mergelock {

enum class Activation { relu, gelu, tanh };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh: return "tanh";
    }
    return "relu";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    if (s == "tanh") return Activation::tanh;
    throw ParameterError("unknown activation: " + s);
}

struct ModelConfig {
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    Activation activation = Activation::relu;
    bool includes_bias = true;

    std::size_t d_head() const { return d_model / num_heads; }

    void validate() const {
        if (num_layers < 1 || num_heads < 1 || d_model < 1 || d_ff < 1)
            throw SchemaError("model config: all counts must be >= 1");
        if (d_model % num_heads != 0)
            throw SchemaError("model config: num_heads must divide d_model");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSpec {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    bool is_bias;  // absent from files when includes_bias is off
};

// Canonical tensor schema for one model. Weights act on row-vector
// activations as X * W^T + b, so w_q..w_o are d_model x d_model with head h
// occupying rows [h*d_head, (h+1)*d_head) of w_q/w_k/w_v and the matching
// columns of w_o.
inline std::vector<TensorSpec> tensor_schema(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    const std::size_t d = c.d_model;
    const std::size_t f = c.d_ff;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        specs.push_back({p + "attn.w_q", d, d, false});
        specs.push_back({p + "attn.w_k", d, d, false});
        specs.push_back({p + "attn.w_v", d, d, false});
        specs.push_back({p + "attn.w_o", d, d, false});
        specs.push_back({p + "attn.b_q", 1, d, true});
        specs.push_back({p + "attn.b_k", 1, d, true});
        specs.push_back({p + "attn.b_v", 1, d, true});
        specs.push_back({p + "attn.b_o", 1, d, true});
        specs.push_back({p + "mlp.w1", f, d, false});
        specs.push_back({p + "mlp.b1", 1, f, true});
        specs.push_back({p + "mlp.w2", d, f, false});
        specs.push_back({p + "mlp.b2", 1, d, true});
        specs.push_back({p + "ln1.gamma", 1, d, false});
        specs.push_back({p + "ln1.beta", 1, d, false});
        specs.push_back({p + "ln2.gamma", 1, d, false});
        specs.push_back({p + "ln2.beta", 1, d, false});
    }
    return specs;
}

}  // namespace mergelock
