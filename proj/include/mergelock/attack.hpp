#pragma once

#include <string>
#include <vector>

#include "mergelock/assignment.hpp"
#include "mergelock/checkpoint.hpp"
#include "mergelock/decompose.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/protect.hpp"

namespace mergelock {

// Data-free alignment: re-parameterize model1 (typically a protected model)
// toward model2 without changing model1's function. Rotations act exactly
// like protection transforms with A := R, A^-1 := R^T.

struct QkHeadBlocks {
    Matrix w_q, w_k;  // d_head x d_model
    Matrix b_q, b_k;  // 1 x d_head
};

struct VoHeadBlocks {
    Matrix w_v;  // d_head x d_model
    Matrix b_v;  // 1 x d_head
    Matrix w_o;  // d_model x d_head
};

inline QkHeadBlocks qk_blocks(const Checkpoint& ckpt, std::size_t layer, std::size_t head) {
    const std::size_t dh = ckpt.config.d_head();
    return {row_block(ckpt.layer_tensor(layer, "attn.w_q"), head * dh, dh),
            row_block(ckpt.layer_tensor(layer, "attn.w_k"), head * dh, dh),
            col_block(ckpt.layer_tensor(layer, "attn.b_q"), head * dh, dh),
            col_block(ckpt.layer_tensor(layer, "attn.b_k"), head * dh, dh)};
}

inline VoHeadBlocks vo_blocks(const Checkpoint& ckpt, std::size_t layer, std::size_t head) {
    const std::size_t dh = ckpt.config.d_head();
    return {row_block(ckpt.layer_tensor(layer, "attn.w_v"), head * dh, dh),
            col_block(ckpt.layer_tensor(layer, "attn.b_v"), head * dh, dh),
            col_block(ckpt.layer_tensor(layer, "attn.w_o"), head * dh, dh)};
}

// Squared-Frobenius mismatch after rotating model1's QK branch by r.
inline double qk_alignment_objective(const QkHeadBlocks& m1, const QkHeadBlocks& m2,
                                     const Matrix& r) {
    auto sq = [](double x) { return x * x; };
    double total = 0.0;
    total += sq(frobenius_distance(matmul(m1.w_q.transpose(), r), m2.w_q.transpose()));
    total += sq(frobenius_distance(matmul(m1.b_q, r), m2.b_q));
    total += sq(frobenius_distance(matmul(m1.w_k.transpose(), r), m2.w_k.transpose()));
    total += sq(frobenius_distance(matmul(m1.b_k, r), m2.b_k));
    return total;
}

inline double vo_alignment_objective(const VoHeadBlocks& m1, const VoHeadBlocks& m2,
                                     const Matrix& r) {
    auto sq = [](double x) { return x * x; };
    double total = 0.0;
    total += sq(frobenius_distance(matmul(m1.w_v.transpose(), r), m2.w_v.transpose()));
    total += sq(frobenius_distance(matmul(m1.b_v, r), m2.b_v));
    total += sq(frobenius_distance(matmul(m1.w_o, r), m2.w_o));
    return total;
}

struct KabschResult {
    Matrix rotation;
    double residual;  // objective value at the returned rotation
};

// Closed-form orthogonal Procrustes factor U V^T of the cross matrix.
inline Matrix kabsch_rotation(const Matrix& cross) {
    const SvdResult f = svd(cross);
    return matmul(f.u, f.vt);
}

// Optimal rotation for min_R ||W_Q1^T R - W_Q2^T||^2 + ||b_Q1 R - b_Q2||^2
// + (same for K); R = U V^T of W_Q1 W_Q2^T + W_K1 W_K2^T + b_Q1^T b_Q2
// + b_K1^T b_K2.
inline KabschResult kabsch_align_qk(const QkHeadBlocks& m1, const QkHeadBlocks& m2) {
    if (m1.w_q.rows() != m2.w_q.rows()) throw ShapeError("kabsch_align_qk: d_head mismatch");
    Matrix cross = matmul(m1.w_q, m2.w_q.transpose());
    cross += matmul(m1.w_k, m2.w_k.transpose());
    cross += matmul(m1.b_q.transpose(), m2.b_q);
    cross += matmul(m1.b_k.transpose(), m2.b_k);
    KabschResult result;
    result.rotation = kabsch_rotation(cross);
    result.residual = qk_alignment_objective(m1, m2, result.rotation);
    return result;
}

// Companion objective for the value/output branch; the W_O block enters
// untransposed because w_o columns carry the head dimension here.
inline KabschResult kabsch_align_vo(const VoHeadBlocks& m1, const VoHeadBlocks& m2) {
    if (m1.w_v.rows() != m2.w_v.rows()) throw ShapeError("kabsch_align_vo: d_head mismatch");
    Matrix cross = matmul(m1.w_v, m2.w_v.transpose());
    cross += matmul(m1.b_v.transpose(), m2.b_v);
    cross += matmul(m1.w_o.transpose(), m2.w_o);
    KabschResult result;
    result.rotation = kabsch_rotation(cross);
    result.residual = vo_alignment_objective(m1, m2, result.rotation);
    return result;
}

// Per-layer, per-head rotations for both branches.
struct AttentionAlignment {
    std::vector<std::vector<Matrix>> qk;  // [layer][head]
    std::vector<std::vector<Matrix>> vo;
};

inline double orthogonality_defect(const Matrix& r) {
    return frobenius_distance(matmul(r.transpose(), r), Matrix::identity(r.cols()));
}

inline Checkpoint apply_attention_alignment(const Checkpoint& model1,
                                            const AttentionAlignment& alignment) {
    model1.validate();
    if (alignment.qk.size() != model1.config.num_layers ||
        alignment.vo.size() != model1.config.num_layers)
        throw ParameterError("alignment does not cover every layer");
    Checkpoint out = model1;
    for (std::size_t l = 0; l < alignment.qk.size(); ++l) {
        if (alignment.qk[l].size() != model1.config.num_heads ||
            alignment.vo[l].size() != model1.config.num_heads)
            throw ParameterError("alignment does not cover every head");
        for (std::size_t h = 0; h < alignment.qk[l].size(); ++h) {
            const Matrix& r1 = alignment.qk[l][h];
            const Matrix& r3 = alignment.vo[l][h];
            if (orthogonality_defect(r1) > 1e-8 || orthogonality_defect(r3) > 1e-8)
                throw ParameterError("alignment rotation is not orthogonal within 1e-8");
            apply_qk_pair(out, l, h, r1, r1.transpose());
            apply_vo_pair(out, l, h, r3, r3.transpose());
        }
    }
    return out;
}

struct AlignEntry {
    std::size_t layer;
    std::size_t head;  // d_ff-wide branches report head 0
    std::string branch;
    double residual_before;
    double residual_after;
};

struct AlignOutcome {
    Checkpoint model;
    std::vector<AlignEntry> report;
};

// Full Kabsch pass: per layer and head, rotate model1's QK and VO branches
// toward model2. Function-preserving by construction.
inline AlignOutcome kabsch_align_model(const Checkpoint& model1, const Checkpoint& model2) {
    model1.require_same_schema(model2);
    AttentionAlignment alignment;
    alignment.qk.resize(model1.config.num_layers);
    alignment.vo.resize(model1.config.num_layers);
    AlignOutcome outcome;
    for (std::size_t l = 0; l < model1.config.num_layers; ++l) {
        for (std::size_t h = 0; h < model1.config.num_heads; ++h) {
            const QkHeadBlocks qk1 = qk_blocks(model1, l, h);
            const QkHeadBlocks qk2 = qk_blocks(model2, l, h);
            const VoHeadBlocks vo1 = vo_blocks(model1, l, h);
            const VoHeadBlocks vo2 = vo_blocks(model2, l, h);
            const KabschResult rqk = kabsch_align_qk(qk1, qk2);
            const KabschResult rvo = kabsch_align_vo(vo1, vo2);
            const Matrix eye = Matrix::identity(model1.config.d_head());
            outcome.report.push_back(
                {l, h, "qk", qk_alignment_objective(qk1, qk2, eye), rqk.residual});
            outcome.report.push_back(
                {l, h, "vo", vo_alignment_objective(vo1, vo2, eye), rvo.residual});
            alignment.qk[l].push_back(rqk.rotation);
            alignment.vo[l].push_back(rvo.rotation);
        }
    }
    outcome.model = apply_attention_alignment(model1, alignment);
    return outcome;
}

struct MlpAlignOutcome {
    Checkpoint model;
    std::vector<Permutation> perms;  // per layer, as applied to model1
    std::vector<AlignEntry> report;
};

namespace detail {

inline double mlp_branch_sq_distance(const Checkpoint& a, const Checkpoint& b, std::size_t l) {
    auto sq = [](double x) { return x * x; };
    double total = 0.0;
    for (const char* t : {"mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"})
        total += sq(frobenius_distance(a.layer_tensor(l, t), b.layer_tensor(l, t)));
    return total;
}

}  // namespace detail

// Solves the neuron matching as a minimum assignment (the protection solved
// the maximum); a planted permutation is recovered exactly as its inverse.
inline MlpAlignOutcome hungarian_align_mlp(const Checkpoint& model1, const Checkpoint& model2) {
    model1.require_same_schema(model2);
    const std::size_t df = model1.config.d_ff;
    MlpAlignOutcome outcome;
    outcome.model = model1;
    for (std::size_t l = 0; l < model1.config.num_layers; ++l) {
        const Matrix& w1_1 = model1.layer_tensor(l, "mlp.w1");
        const Matrix& w2_1 = model1.layer_tensor(l, "mlp.w2");
        const Matrix& w1_2 = model2.layer_tensor(l, "mlp.w1");
        const Matrix& w2_2 = model2.layer_tensor(l, "mlp.w2");
        // cost[r][j] = -<m2 neuron r, m1 neuron j>: minimizing maximizes the
        // matched inner product, i.e. minimizes the post-move distance.
        Matrix cost(df, df);
        for (std::size_t r = 0; r < df; ++r)
            for (std::size_t j = 0; j < df; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < model1.config.d_model; ++c)
                    dot += w1_2(r, c) * w1_1(j, c) + w2_2(c, r) * w2_1(c, j);
                cost(r, j) = -dot;
            }
        const Permutation assignment = hungarian(cost).perm;  // slot r takes m1 neuron
        const Permutation perm = assignment.inverse();        // m1 neuron j -> its slot
        const double before = detail::mlp_branch_sq_distance(outcome.model, model2, l);
        apply_mlp_permutation(outcome.model, l, perm);
        const double after = detail::mlp_branch_sq_distance(outcome.model, model2, l);
        outcome.report.push_back({l, 0, "mlp", before, after});
        outcome.perms.push_back(perm);
    }
    return outcome;
}

struct DiagonalAlignOutcome {
    Checkpoint model;
    std::vector<std::vector<double>> scales;  // per layer, concatenated per-head diagonals
    std::vector<AlignEntry> report;
};

namespace detail {

inline double branch_sq_distance(const Checkpoint& a, const Checkpoint& b, std::size_t l,
                                 std::initializer_list<const char*> names) {
    auto sq = [](double x) { return x * x; };
    double total = 0.0;
    for (const char* t : names)
        total += sq(frobenius_distance(a.layer_tensor(l, t), b.layer_tensor(l, t)));
    return total;
}

// Least-squares per-row scale: d_i = <row_i(source), row_i(target)> /
// ||row_i(source)||^2; degenerate rows fall back to 1 to keep the pair
// invertible.
inline std::vector<double> row_scale_estimate(const Matrix& source, const Matrix& target) {
    std::vector<double> scales(source.rows(), 1.0);
    for (std::size_t i = 0; i < source.rows(); ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < source.cols(); ++c) {
            num += source(i, c) * target(i, c);
            den += source(i, c) * source(i, c);
        }
        if (den > 0.0 && std::abs(num) > 1e-12 * den) scales[i] = num / den;
    }
    return scales;
}

}  // namespace detail

// Estimates the per-dimension QK scaling of model1 against model2 from the
// W_Q rows and applies (D, D^-1): the K branch receives the reciprocal.
inline DiagonalAlignOutcome diagonal_align_qk(const Checkpoint& model1, const Checkpoint& model2) {
    model1.require_same_schema(model2);
    const std::size_t dh = model1.config.d_head();
    DiagonalAlignOutcome outcome;
    outcome.model = model1;
    for (std::size_t l = 0; l < model1.config.num_layers; ++l) {
        std::vector<double> layer_scales;
        const double before = detail::branch_sq_distance(
            outcome.model, model2, l, {"attn.w_q", "attn.w_k", "attn.b_q", "attn.b_k"});
        for (std::size_t h = 0; h < model1.config.num_heads; ++h) {
            const std::vector<double> d = detail::row_scale_estimate(
                row_block(outcome.model.layer_tensor(l, "attn.w_q"), h * dh, dh),
                row_block(model2.layer_tensor(l, "attn.w_q"), h * dh, dh));
            Matrix diag = Matrix::diagonal(d);
            Matrix diag_inv(dh, dh);
            for (std::size_t i = 0; i < dh; ++i) diag_inv(i, i) = 1.0 / d[i];
            apply_qk_pair(outcome.model, l, h, diag, diag_inv);
            layer_scales.insert(layer_scales.end(), d.begin(), d.end());
        }
        const double after = detail::branch_sq_distance(
            outcome.model, model2, l, {"attn.w_q", "attn.w_k", "attn.b_q", "attn.b_k"});
        outcome.report.push_back({l, 0, "qk", before, after});
        outcome.scales.push_back(std::move(layer_scales));
    }
    return outcome;
}

// Same estimate on the W_V rows; W_O columns receive the reciprocal.
inline DiagonalAlignOutcome diagonal_align_vo(const Checkpoint& model1, const Checkpoint& model2) {
    model1.require_same_schema(model2);
    const std::size_t dh = model1.config.d_head();
    DiagonalAlignOutcome outcome;
    outcome.model = model1;
    for (std::size_t l = 0; l < model1.config.num_layers; ++l) {
        std::vector<double> layer_scales;
        const double before = detail::branch_sq_distance(
            outcome.model, model2, l, {"attn.w_v", "attn.w_o", "attn.b_v"});
        for (std::size_t h = 0; h < model1.config.num_heads; ++h) {
            const std::vector<double> d = detail::row_scale_estimate(
                row_block(outcome.model.layer_tensor(l, "attn.w_v"), h * dh, dh),
                row_block(model2.layer_tensor(l, "attn.w_v"), h * dh, dh));
            Matrix diag = Matrix::diagonal(d);
            Matrix diag_inv(dh, dh);
            for (std::size_t i = 0; i < dh; ++i) diag_inv(i, i) = 1.0 / d[i];
            apply_vo_pair(outcome.model, l, h, diag, diag_inv);
            layer_scales.insert(layer_scales.end(), d.begin(), d.end());
        }
        const double after = detail::branch_sq_distance(
            outcome.model, model2, l, {"attn.w_v", "attn.w_o", "attn.b_v"});
        outcome.report.push_back({l, 0, "vo", before, after});
        outcome.scales.push_back(std::move(layer_scales));
    }
    return outcome;
}

// PaRaMS counter-attack: undo the MLP permutation, then both diagonal
// scalings.
inline AlignOutcome params_align_model(const Checkpoint& model1, const Checkpoint& model2) {
    MlpAlignOutcome mlp = hungarian_align_mlp(model1, model2);
    DiagonalAlignOutcome qk = diagonal_align_qk(mlp.model, model2);
    DiagonalAlignOutcome vo = diagonal_align_vo(qk.model, model2);
    AlignOutcome outcome;
    outcome.model = std::move(vo.model);
    outcome.report = std::move(mlp.report);
    outcome.report.insert(outcome.report.end(), qk.report.begin(), qk.report.end());
    outcome.report.insert(outcome.report.end(), vo.report.begin(), vo.report.end());
    return outcome;
}

}  // namespace mergelock
