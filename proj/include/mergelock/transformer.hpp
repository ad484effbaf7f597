#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mergelock/checkpoint.hpp"
#include "mergelock/config.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/parallel.hpp"

namespace mergelock {

// Evaluation inputs: sequences of d_model-dimensional rows, uniform length.
struct Batch {
    std::vector<Matrix> inputs;

    void validate() const {
        if (inputs.empty()) throw ParameterError("batch is empty");
        for (const Matrix& x : inputs)
            if (x.rows() != inputs.front().rows() || x.cols() != inputs.front().cols())
                throw ShapeError("batch sequences must share T and d_model");
    }

    std::size_t seq_len() const { return inputs.front().rows(); }
    std::size_t d_model() const { return inputs.front().cols(); }
};

struct AttentionHeadView {
    Matrix w_q, w_k, w_v;  // d_head x d_model row slices
    Matrix w_o;            // d_model x d_head column slice
    Matrix b_q, b_k, b_v;  // 1 x d_head
};

struct LayerView {
    std::vector<AttentionHeadView> heads;
    Matrix b_o;
    Matrix w1, b1, w2, b2;
    Matrix ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

// Structured per-layer view over a checkpoint; slices concatenate back to
// the stored matrices exactly (pure copies, no arithmetic).
struct TransformerParams {
    ModelConfig config;
    std::vector<LayerView> layers;

    static TransformerParams from(const Checkpoint& ckpt) {
        ckpt.config.validate();
        TransformerParams p;
        p.config = ckpt.config;
        const std::size_t dh = ckpt.config.d_head();
        p.layers.reserve(ckpt.config.num_layers);
        for (std::size_t l = 0; l < ckpt.config.num_layers; ++l) {
            LayerView layer;
            const Matrix& w_q = ckpt.layer_tensor(l, "attn.w_q");
            const Matrix& w_k = ckpt.layer_tensor(l, "attn.w_k");
            const Matrix& w_v = ckpt.layer_tensor(l, "attn.w_v");
            const Matrix& w_o = ckpt.layer_tensor(l, "attn.w_o");
            const Matrix& b_q = ckpt.layer_tensor(l, "attn.b_q");
            const Matrix& b_k = ckpt.layer_tensor(l, "attn.b_k");
            const Matrix& b_v = ckpt.layer_tensor(l, "attn.b_v");
            for (std::size_t h = 0; h < ckpt.config.num_heads; ++h) {
                AttentionHeadView head;
                head.w_q = row_block(w_q, h * dh, dh);
                head.w_k = row_block(w_k, h * dh, dh);
                head.w_v = row_block(w_v, h * dh, dh);
                head.w_o = col_block(w_o, h * dh, dh);
                head.b_q = col_block(b_q, h * dh, dh);
                head.b_k = col_block(b_k, h * dh, dh);
                head.b_v = col_block(b_v, h * dh, dh);
                layer.heads.push_back(std::move(head));
            }
            layer.b_o = ckpt.layer_tensor(l, "attn.b_o");
            layer.w1 = ckpt.layer_tensor(l, "mlp.w1");
            layer.b1 = ckpt.layer_tensor(l, "mlp.b1");
            layer.w2 = ckpt.layer_tensor(l, "mlp.w2");
            layer.b2 = ckpt.layer_tensor(l, "mlp.b2");
            layer.ln1_gamma = ckpt.layer_tensor(l, "ln1.gamma");
            layer.ln1_beta = ckpt.layer_tensor(l, "ln1.beta");
            layer.ln2_gamma = ckpt.layer_tensor(l, "ln2.gamma");
            layer.ln2_beta = ckpt.layer_tensor(l, "ln2.beta");
            p.layers.push_back(std::move(layer));
        }
        return p;
    }
};

inline double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
        case Activation::tanh: return std::tanh(x);
    }
    return x;
}

// X * W^T + b with b broadcast over rows.
inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix out = matmul(x, w.transpose());
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
    return out;
}

inline void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double mx = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            m(i, j) = std::exp(m(i, j) - mx);
            sum += m(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) /= sum;
    }
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                         double epsilon = 1e-5) {
    Matrix out(x.rows(), x.cols());
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t j = 0; j < d; ++j)
            out(i, j) = (x(i, j) - mean) * inv * gamma(0, j) + beta(0, j);
    }
    return out;
}

// Bidirectional multi-head self-attention, scores scaled by 1/sqrt(d_head).
inline Matrix attention_forward(const TransformerParams& params, std::size_t layer,
                                const Matrix& x) {
    if (x.cols() != params.config.d_model)
        throw ShapeError("attention_forward: input width != d_model");
    const LayerView& lv = params.layers.at(layer);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.config.d_head()));

    Matrix out(x.rows(), params.config.d_model);
    for (const AttentionHeadView& head : lv.heads) {
        Matrix q = affine(x, head.w_q, head.b_q);
        Matrix k = affine(x, head.w_k, head.b_k);
        Matrix v = affine(x, head.w_v, head.b_v);
        Matrix scores = matmul(q, k.transpose());
        scores *= scale;
        softmax_rows(scores);
        // head output (T x d_head) projected straight into the residual width
        out += matmul(matmul(scores, v), head.w_o.transpose());
    }
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += lv.b_o(0, j);
    return out;
}

inline Matrix mlp_forward(const TransformerParams& params, std::size_t layer, const Matrix& x) {
    if (x.cols() != params.config.d_model)
        throw ShapeError("mlp_forward: input width != d_model");
    const LayerView& lv = params.layers.at(layer);
    Matrix hidden = affine(x, lv.w1, lv.b1);
    for (double& v : hidden.storage()) v = apply_activation(params.config.activation, v);
    return affine(hidden, lv.w2, lv.b2);
}

// Pre-LN residual stack: X += ATTN(LN1(X)); X += MLP(LN2(X)) per layer.
inline Matrix model_forward(const TransformerParams& params, const Matrix& x0) {
    Matrix x = x0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const LayerView& lv = params.layers[l];
        x += attention_forward(params, l, layer_norm(x, lv.ln1_gamma, lv.ln1_beta));
        x += mlp_forward(params, l, layer_norm(x, lv.ln2_gamma, lv.ln2_beta));
    }
    return x;
}

inline Matrix model_forward(const Checkpoint& ckpt, const Matrix& x0) {
    return model_forward(TransformerParams::from(ckpt), x0);
}

// Mean over the batch of ||f(a,x) - f(b,x)||_F^2 / (T * d_model); the
// data-free stand-in for a task loss gap.
inline double functional_divergence(const Checkpoint& a, const Checkpoint& b, const Batch& batch) {
    a.require_same_schema(b);
    batch.validate();
    if (batch.d_model() != a.config.d_model)
        throw SchemaError("batch width does not match model d_model");
    const TransformerParams pa = TransformerParams::from(a);
    const TransformerParams pb = TransformerParams::from(b);

    std::vector<double> per_item(batch.inputs.size());
    parallel_for(batch.inputs.size(), [&](std::size_t i) {
        const Matrix& x = batch.inputs[i];
        const Matrix fa = model_forward(pa, x);
        const Matrix fb = model_forward(pb, x);
        const double d = frobenius_distance(fa, fb);
        per_item[i] = d * d / static_cast<double>(x.rows() * x.cols());
    });
    double total = 0.0;
    for (double v : per_item) total += v;
    return total / static_cast<double>(per_item.size());
}

// Largest single-output deviation over the batch; the Performance
// Preservation check uses this directly.
inline double max_output_deviation(const Checkpoint& a, const Checkpoint& b, const Batch& batch) {
    a.require_same_schema(b);
    batch.validate();
    const TransformerParams pa = TransformerParams::from(a);
    const TransformerParams pb = TransformerParams::from(b);
    std::vector<double> per_item(batch.inputs.size());
    parallel_for(batch.inputs.size(), [&](std::size_t i) {
        per_item[i] = max_abs_diff(model_forward(pa, batch.inputs[i]),
                                   model_forward(pb, batch.inputs[i]));
    });
    double m = 0.0;
    for (double v : per_item) m = std::max(m, v);
    return m;
}

}  // namespace mergelock
