#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mergelock/config.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/permutation.hpp"

namespace mergelock {

enum class Scheme { mergelock, params };

inline std::string to_string(Scheme s) {
    return s == Scheme::mergelock ? "mergelock" : "params";
}

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "mergelock") return Scheme::mergelock;
    if (s == "params") return Scheme::params;
    throw ParameterError("unknown scheme: " + s);
}

// Knobs for drawing the per-head transforms. gaussian_std == 0 means the
// width-dependent default 1/sqrt(d_head).
struct SamplingConfig {
    double gaussian_std = 0.0;
    double diag_lo = 0.5;
    double diag_hi = 2.0;
    double cond_cap = 1e3;
    std::size_t max_resamples = 16;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(0.0 < diag_lo && diag_lo <= diag_hi))
            throw ParameterError("sampling config: need 0 < diag_lo <= diag_hi");
        if (!(cond_cap > 1.0)) throw ParameterError("sampling config: cond_cap must be > 1");
        if (gaussian_std < 0.0) throw ParameterError("sampling config: gaussian_std must be >= 0");
    }

    double resolved_std(std::size_t d_head) const {
        return gaussian_std > 0.0 ? gaussian_std : 1.0 / std::sqrt(static_cast<double>(d_head));
    }
};

struct HeadKey {
    Matrix a, a_inv;  // QK pair
    Matrix b, b_inv;  // VO pair
};

struct LayerKey {
    std::vector<HeadKey> heads;
    // params scheme only:
    Permutation mlp_perm;              // size d_ff, identity otherwise unused
    std::vector<double> qk_diag;       // concatenated per-head diagonals, size d_model
    std::vector<double> vo_diag;
};

// The secret enabling authorized recovery: exact per-layer, per-head inverse
// pairs plus sampling provenance and the protected checkpoint's fingerprint.
struct MergeLockKey {
    Scheme scheme = Scheme::mergelock;
    std::size_t num_heads = 0;
    std::size_t d_head = 0;
    std::size_t d_ff = 0;
    std::vector<LayerKey> layers;
    std::uint64_t seed = 0;
    SamplingConfig sampling;
    std::string fingerprint;  // sha256 of the protected checkpoint it unlocks

    static constexpr double kPairTolerance = 1e-10;

    static MergeLockKey identity(const ModelConfig& config, Scheme scheme) {
        MergeLockKey key;
        key.scheme = scheme;
        key.num_heads = config.num_heads;
        key.d_head = config.d_head();
        key.d_ff = config.d_ff;
        key.layers.resize(config.num_layers);
        const Matrix eye = Matrix::identity(key.d_head);
        for (LayerKey& layer : key.layers) {
            layer.heads.assign(config.num_heads, HeadKey{eye, eye, eye, eye});
            if (scheme == Scheme::params) {
                layer.mlp_perm = Permutation::identity(config.d_ff);
                layer.qk_diag.assign(config.d_model, 1.0);
                layer.vo_diag.assign(config.d_model, 1.0);
            }
        }
        return key;
    }

    void validate() const {
        if (layers.empty() || num_heads == 0 || d_head == 0)
            throw KeyError("key has no head slots");
        const Matrix eye = Matrix::identity(d_head);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const LayerKey& layer = layers[l];
            if (layer.heads.size() != num_heads)
                throw KeyError("layer " + std::to_string(l) + " covers " +
                               std::to_string(layer.heads.size()) + " heads, expected " +
                               std::to_string(num_heads));
            for (std::size_t h = 0; h < layer.heads.size(); ++h) {
                const HeadKey& hk = layer.heads[h];
                for (const Matrix* m : {&hk.a, &hk.a_inv, &hk.b, &hk.b_inv})
                    if (m->rows() != d_head || m->cols() != d_head)
                        throw KeyError("key matrix has wrong shape at layer " + std::to_string(l));
                if (frobenius_distance(matmul(hk.a, hk.a_inv), eye) > kPairTolerance ||
                    frobenius_distance(matmul(hk.b, hk.b_inv), eye) > kPairTolerance)
                    throw KeyError("corrupted key: inverse pair check failed at layer " +
                                   std::to_string(l) + " head " + std::to_string(h));
            }
            if (scheme == Scheme::params) {
                if (layer.mlp_perm.size() != d_ff)
                    throw KeyError("params key: mlp_perm size mismatch at layer " +
                                   std::to_string(l));
                if (layer.qk_diag.size() != num_heads * d_head ||
                    layer.vo_diag.size() != num_heads * d_head)
                    throw KeyError("params key: diagonal size mismatch at layer " +
                                   std::to_string(l));
            }
        }
    }

    void require_matches(const ModelConfig& config) const {
        if (layers.size() != config.num_layers || num_heads != config.num_heads ||
            d_head != config.d_head() ||
            (scheme == Scheme::params && d_ff != config.d_ff))
            throw KeyError("key dimensions do not match the model configuration");
    }
};

}  // namespace mergelock
