#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mergelock/assignment.hpp"
#include "mergelock/checkpoint.hpp"
#include "mergelock/container.hpp"
#include "mergelock/decompose.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/key.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/permutation.hpp"
#include "mergelock/rng.hpp"

namespace mergelock {

struct TransformPair {
    Matrix a;
    Matrix a_inv;
};

// A = R * P * D: dense gaussian R (resampled until cond(R) <= cond_cap),
// uniform permutation P, positive diagonal D in [diag_lo, diag_hi].
// A_inv = D^-1 * P^T * R^-1 so the stored pair multiplies to I within 1e-10.
inline TransformPair sample_transform(std::size_t d_head, Rng& rng, const SamplingConfig& cfg) {
    cfg.validate();
    if (d_head < 1) throw ParameterError("sample_transform: d_head must be >= 1");
    const double std_dev = cfg.resolved_std(d_head);
    const Matrix eye = Matrix::identity(d_head);

    double last_cond = std::numeric_limits<double>::infinity();
    for (std::size_t attempt = 0; attempt < cfg.max_resamples; ++attempt) {
        const Matrix r = sample_gaussian(d_head, d_head, std_dev, rng);
        last_cond = condition_estimate(r);
        if (last_cond > cfg.cond_cap) continue;

        const Permutation p = sample_permutation(d_head, rng);
        const Matrix d = sample_diagonal(d_head, cfg.diag_lo, cfg.diag_hi, rng);

        Matrix d_inv(d_head, d_head);
        for (std::size_t i = 0; i < d_head; ++i) d_inv(i, i) = 1.0 / d(i, i);

        TransformPair pair;
        pair.a = matmul(matmul(r, p.as_matrix()), d);
        pair.a_inv = matmul(matmul(d_inv, p.as_matrix().transpose()), invert(r));
        if (frobenius_distance(matmul(pair.a, pair.a_inv), eye) <= MergeLockKey::kPairTolerance)
            return pair;
    }
    throw SamplingError("sample_transform: resample budget exhausted", last_cond);
}

// Orthogonal-only variant: polar factor of a gaussian times a permutation,
// so A^-1 = A^T exactly up to roundoff. Used to study what a rotation-based
// alignment can and cannot undo.
inline TransformPair sample_orthogonal_transform(std::size_t d_head, Rng& rng) {
    const Matrix g = sample_gaussian(d_head, d_head, 1.0, rng);
    const SvdResult f = svd(g);
    const Matrix q = matmul(f.u, f.vt);
    const Permutation p = sample_permutation(d_head, rng);
    TransformPair pair;
    pair.a = matmul(q, p.as_matrix());
    pair.a_inv = pair.a.transpose();
    return pair;
}

using TransformSampler = std::function<TransformPair(std::size_t, Rng&)>;

// ---- per-branch application (row-vector convention: projections are
// X * W^T + b, head h owns rows [h*d_head, ..) of w_q/w_k/w_v and the same
// columns of w_o) ----

// W_Q^h <- A^T W_Q^h, b_Q^h <- b_Q^h A, W_K^h <- A^-1 W_K^h,
// b_K^h <- b_K^h (A^-1)^T. Scores are invariant: Q' K'^T = Q A A^-1 K^T.
inline void apply_qk_pair(Checkpoint& ckpt, std::size_t layer, std::size_t head, const Matrix& a,
                          const Matrix& a_inv) {
    const std::size_t dh = ckpt.config.d_head();
    if (a.rows() != dh || !a.is_square() || !a_inv.same_shape(a))
        throw SchemaError("qk transform does not match d_head");
    const std::size_t r0 = head * dh;

    Matrix& w_q = ckpt.layer_tensor(layer, "attn.w_q");
    set_row_block(w_q, r0, matmul(a.transpose(), row_block(w_q, r0, dh)));
    Matrix& b_q = ckpt.layer_tensor(layer, "attn.b_q");
    set_col_block(b_q, r0, matmul(col_block(b_q, r0, dh), a));

    Matrix& w_k = ckpt.layer_tensor(layer, "attn.w_k");
    set_row_block(w_k, r0, matmul(a_inv, row_block(w_k, r0, dh)));
    Matrix& b_k = ckpt.layer_tensor(layer, "attn.b_k");
    set_col_block(b_k, r0, matmul(col_block(b_k, r0, dh), a_inv.transpose()));
}

// W_V^h <- B^T W_V^h, b_V^h <- b_V^h B, W_O^h <- W_O^h (B^-1)^T; b_O is
// untouched. The head output contribution V' W_O'^T stays fixed.
inline void apply_vo_pair(Checkpoint& ckpt, std::size_t layer, std::size_t head, const Matrix& b,
                          const Matrix& b_inv) {
    const std::size_t dh = ckpt.config.d_head();
    if (b.rows() != dh || !b.is_square() || !b_inv.same_shape(b))
        throw SchemaError("vo transform does not match d_head");
    const std::size_t r0 = head * dh;

    Matrix& w_v = ckpt.layer_tensor(layer, "attn.w_v");
    set_row_block(w_v, r0, matmul(b.transpose(), row_block(w_v, r0, dh)));
    Matrix& b_v = ckpt.layer_tensor(layer, "attn.b_v");
    set_col_block(b_v, r0, matmul(col_block(b_v, r0, dh), b));

    Matrix& w_o = ckpt.layer_tensor(layer, "attn.w_o");
    set_col_block(w_o, r0, matmul(col_block(w_o, r0, dh), b_inv.transpose()));
}

// W_1 <- P^T W_1, b_1 <- b_1 P, W_2 <- W_2 P: hidden neuron i moves to slot
// perm[i]; the activation commutes with the reordering.
inline void apply_mlp_permutation(Checkpoint& ckpt, std::size_t layer, const Permutation& perm) {
    if (perm.size() != ckpt.config.d_ff) throw SchemaError("mlp permutation does not match d_ff");
    if (perm.is_identity()) return;
    Matrix& w1 = ckpt.layer_tensor(layer, "mlp.w1");
    w1 = perm.permute_rows(w1);
    Matrix& b1 = ckpt.layer_tensor(layer, "mlp.b1");
    b1 = perm.permute_cols(b1);
    Matrix& w2 = ckpt.layer_tensor(layer, "mlp.w2");
    w2 = perm.permute_cols(w2);
}

struct ProtectResult {
    Checkpoint model;
    MergeLockKey key;
};

inline ProtectResult protect_mergelock(const Checkpoint& ckpt, const SamplingConfig& cfg,
                                       const TransformSampler& sampler) {
    ckpt.validate();
    cfg.validate();
    Rng rng(cfg.seed);

    ProtectResult result;
    result.model = ckpt;
    result.key.scheme = Scheme::mergelock;
    result.key.num_heads = ckpt.config.num_heads;
    result.key.d_head = ckpt.config.d_head();
    result.key.d_ff = ckpt.config.d_ff;
    result.key.seed = cfg.seed;
    result.key.sampling = cfg;
    result.key.layers.resize(ckpt.config.num_layers);

    for (std::size_t l = 0; l < ckpt.config.num_layers; ++l) {
        LayerKey& layer_key = result.key.layers[l];
        for (std::size_t h = 0; h < ckpt.config.num_heads; ++h) {
            // fresh independent pairs per layer and head, QK then VO
            const TransformPair qk = sampler(result.key.d_head, rng);
            const TransformPair vo = sampler(result.key.d_head, rng);
            apply_qk_pair(result.model, l, h, qk.a, qk.a_inv);
            apply_vo_pair(result.model, l, h, vo.a, vo.a_inv);
            layer_key.heads.push_back({qk.a, qk.a_inv, vo.a, vo.a_inv});
        }
    }
    result.key.fingerprint = fingerprint(result.model);
    result.key.validate();
    return result;
}

inline ProtectResult protect_mergelock(const Checkpoint& ckpt, const SamplingConfig& cfg) {
    return protect_mergelock(ckpt, cfg,
                             [&cfg](std::size_t dh, Rng& r) { return sample_transform(dh, r, cfg); });
}

// PaRaMS baseline: per-layer MLP permutation maximizing the parameter
// mismatch against the pretrained model (Hungarian on the neuron
// inner-product cost), plus diagonal-only QK/VO pairs.
inline ProtectResult protect_params(const Checkpoint& ckpt, const Checkpoint& pre,
                                    const SamplingConfig& cfg) {
    ckpt.validate();
    ckpt.require_same_schema(pre);
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t dh = ckpt.config.d_head();
    const std::size_t df = ckpt.config.d_ff;

    ProtectResult result;
    result.model = ckpt;
    result.key.scheme = Scheme::params;
    result.key.num_heads = ckpt.config.num_heads;
    result.key.d_head = dh;
    result.key.d_ff = df;
    result.key.seed = cfg.seed;
    result.key.sampling = cfg;
    result.key.layers.resize(ckpt.config.num_layers);

    for (std::size_t l = 0; l < ckpt.config.num_layers; ++l) {
        LayerKey& layer_key = result.key.layers[l];

        // cost[i][j] = <pre neuron i, ft neuron j> over W1 rows and W2
        // columns; minimizing the matched sum maximizes the distance.
        const Matrix& pre_w1 = pre.layer_tensor(l, "mlp.w1");
        const Matrix& pre_w2 = pre.layer_tensor(l, "mlp.w2");
        const Matrix& ft_w1 = ckpt.layer_tensor(l, "mlp.w1");
        const Matrix& ft_w2 = ckpt.layer_tensor(l, "mlp.w2");
        Matrix cost(df, df);
        for (std::size_t i = 0; i < df; ++i) {
            for (std::size_t j = 0; j < df; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < ckpt.config.d_model; ++c)
                    dot += pre_w1(i, c) * ft_w1(j, c) + pre_w2(c, i) * ft_w2(c, j);
                cost(i, j) = dot;
            }
        }
        // assignment(i) = ft neuron placed at slot i, so neuron j moves to
        // the slot that selected it
        const Permutation assignment = hungarian(cost).perm;
        const Permutation perm = assignment.inverse();
        apply_mlp_permutation(result.model, l, perm);
        layer_key.mlp_perm = perm;

        layer_key.qk_diag.resize(ckpt.config.d_model);
        layer_key.vo_diag.resize(ckpt.config.d_model);
        for (std::size_t h = 0; h < ckpt.config.num_heads; ++h) {
            const Matrix d_a = sample_diagonal(dh, cfg.diag_lo, cfg.diag_hi, rng);
            const Matrix d_b = sample_diagonal(dh, cfg.diag_lo, cfg.diag_hi, rng);
            Matrix d_a_inv(dh, dh), d_b_inv(dh, dh);
            for (std::size_t i = 0; i < dh; ++i) {
                d_a_inv(i, i) = 1.0 / d_a(i, i);
                d_b_inv(i, i) = 1.0 / d_b(i, i);
                layer_key.qk_diag[h * dh + i] = d_a(i, i);
                layer_key.vo_diag[h * dh + i] = d_b(i, i);
            }
            apply_qk_pair(result.model, l, h, d_a, d_a_inv);
            apply_vo_pair(result.model, l, h, d_b, d_b_inv);
            layer_key.heads.push_back({d_a, d_a_inv, d_b, d_b_inv});
        }
    }
    result.key.fingerprint = fingerprint(result.model);
    result.key.validate();
    return result;
}

struct RecoverResult {
    Checkpoint model;
    std::vector<std::string> warnings;
};

// Applies the stored inverse pairs (and inverse permutation for the params
// scheme). A fingerprint mismatch is surfaced as a warning, not an error:
// the key may legitimately be applied to a re-serialized copy.
inline RecoverResult recover(const Checkpoint& protected_ckpt, const MergeLockKey& key) {
    protected_ckpt.validate();
    key.validate();
    key.require_matches(protected_ckpt.config);

    RecoverResult result;
    if (!key.fingerprint.empty() && key.fingerprint != fingerprint(protected_ckpt))
        result.warnings.push_back(
            "key fingerprint does not match this checkpoint; recovery may not restore the "
            "original model");

    result.model = protected_ckpt;
    for (std::size_t l = 0; l < key.layers.size(); ++l) {
        const LayerKey& layer_key = key.layers[l];
        for (std::size_t h = 0; h < layer_key.heads.size(); ++h) {
            const HeadKey& hk = layer_key.heads[h];
            apply_qk_pair(result.model, l, h, hk.a_inv, hk.a);
            apply_vo_pair(result.model, l, h, hk.b_inv, hk.b);
        }
        if (key.scheme == Scheme::params)
            apply_mlp_permutation(result.model, l, layer_key.mlp_perm.inverse());
    }
    return result;
}

}  // namespace mergelock
