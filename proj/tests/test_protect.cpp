#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "mergelock/analysis.hpp"
#include "mergelock/protect.hpp"
#include "mergelock/synth.hpp"
#include "mergelock/transformer.hpp"

using namespace mergelock;

namespace {

ModelConfig cfg(std::size_t layers, std::size_t heads, std::size_t d_model, std::size_t d_ff,
                Activation act = Activation::gelu) {
    ModelConfig c;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_model = d_model;
    c.d_ff = d_ff;
    c.activation = act;
    return c;
}

SamplingConfig sampling(std::uint64_t seed) {
    SamplingConfig c;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("sample_transform produces a tight inverse pair") {
    Rng rng(404);
    SamplingConfig c = sampling(0);
    for (std::size_t d : {1u, 2u, 5u, 16u}) {
        TransformPair pair = sample_transform(d, rng, c);
        CHECK(frobenius_distance(matmul(pair.a, pair.a_inv), Matrix::identity(d)) <= 1e-10);
        CHECK(frobenius_distance(matmul(pair.a_inv, pair.a), Matrix::identity(d)) <= 1e-10);
    }
}

TEST_CASE("scalar transform is r*d and its reciprocal") {
    Rng rng(7);
    SamplingConfig c = sampling(0);
    TransformPair pair = sample_transform(1, rng, c);
    CHECK(pair.a(0, 0) * pair.a_inv(0, 0) == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("resample budget exhaustion raises with the last condition number") {
    Rng rng(1);
    SamplingConfig c = sampling(0);
    c.cond_cap = 1.0 + 1e-12;  // unattainable for a gaussian draw
    c.max_resamples = 3;
    try {
        sample_transform(4, rng, c);
        FAIL("expected SamplingError");
    } catch (const SamplingError& e) {
        CHECK(e.last_condition > c.cond_cap);
    }
}

TEST_CASE("identity sampler hook leaves the checkpoint bit-identical") {
    Checkpoint ckpt = make_pretrained(cfg(2, 2, 8, 16), 5);
    SamplingConfig c = sampling(9);
    TransformSampler identity_hook = [](std::size_t d, Rng&) {
        return TransformPair{Matrix::identity(d), Matrix::identity(d)};
    };
    ProtectResult r = protect_mergelock(ckpt, c, identity_hook);
    for (const auto& [name, m] : ckpt.tensors) CHECK(r.model.at(name) == m);
}

TEST_CASE("hand-built transform matches the block formulas") {
    Checkpoint ckpt = make_pretrained(cfg(1, 1, 4, 8), 12);
    const Checkpoint original = ckpt;
    Matrix a{{1, 2, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 1, 1}};
    Matrix a_inv = invert(a);

    apply_qk_pair(ckpt, 0, 0, a, a_inv);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.w_q"),
                       matmul(a.transpose(), original.at("layers.0.attn.w_q"))) == 0.0);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.b_q"),
                       matmul(original.at("layers.0.attn.b_q"), a)) == 0.0);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.w_k"),
                       matmul(a_inv, original.at("layers.0.attn.w_k"))) == 0.0);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.b_k"),
                       matmul(original.at("layers.0.attn.b_k"), a_inv.transpose())) == 0.0);

    apply_vo_pair(ckpt, 0, 0, a, a_inv);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.w_v"),
                       matmul(a.transpose(), original.at("layers.0.attn.w_v"))) == 0.0);
    CHECK(max_abs_diff(ckpt.at("layers.0.attn.w_o"),
                       matmul(original.at("layers.0.attn.w_o"), a_inv.transpose())) == 0.0);
    CHECK(ckpt.at("layers.0.attn.b_o") == original.at("layers.0.attn.b_o"));
    CHECK(ckpt.at("layers.0.mlp.w1") == original.at("layers.0.mlp.w1"));
}

TEST_CASE("mergelock protection preserves the forward function") {
    Checkpoint ckpt = make_pretrained(cfg(2, 2, 16, 32), 31);
    Batch batch = make_batch(3, 4, 16, 32);
    ProtectResult r = protect_mergelock(ckpt, sampling(33));
    CHECK(max_output_deviation(ckpt, r.model, batch) <= 1e-6);
    // and actually moved the parameters
    CHECK(checkpoint_max_abs_diff(ckpt, r.model) > 1e-2);
}

TEST_CASE("protection equivalence holds over many random models") {
    Rng meta(2000);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t heads = 1 + meta.index(4);
        const std::size_t d_model = heads * (2 + meta.index(6));
        const std::size_t layers = 1 + meta.index(4);
        const Activation act = trial % 2 ? Activation::relu : Activation::gelu;
        Checkpoint ckpt = make_pretrained(cfg(layers, heads, d_model, 2 * d_model, act),
                                          3000 + trial);
        Batch batch = make_batch(2, 1 + meta.index(8), d_model, 4000 + trial);
        ProtectResult r = protect_mergelock(ckpt, sampling(5000 + trial));
        REQUIRE(max_output_deviation(ckpt, r.model, batch) <= 1e-6);
    }
}

TEST_CASE("per-head independence: other heads stay bit-identical") {
    Checkpoint ckpt = make_pretrained(cfg(1, 4, 16, 8), 3);
    Checkpoint touched = ckpt;
    Rng rng(17);
    SamplingConfig c = sampling(0);
    TransformPair qk = sample_transform(4, rng, c);
    TransformPair vo = sample_transform(4, rng, c);
    apply_qk_pair(touched, 0, 1, qk.a, qk.a_inv);
    apply_vo_pair(touched, 0, 1, vo.a, vo.a_inv);

    for (std::size_t h : {0u, 2u, 3u}) {
        const std::size_t r0 = h * 4;
        CHECK(row_block(touched.at("layers.0.attn.w_q"), r0, 4) ==
              row_block(ckpt.at("layers.0.attn.w_q"), r0, 4));
        CHECK(row_block(touched.at("layers.0.attn.w_k"), r0, 4) ==
              row_block(ckpt.at("layers.0.attn.w_k"), r0, 4));
        CHECK(row_block(touched.at("layers.0.attn.w_v"), r0, 4) ==
              row_block(ckpt.at("layers.0.attn.w_v"), r0, 4));
        CHECK(col_block(touched.at("layers.0.attn.w_o"), r0, 4) ==
              col_block(ckpt.at("layers.0.attn.w_o"), r0, 4));
    }
    CHECK(touched.at("layers.0.mlp.w1") == ckpt.at("layers.0.mlp.w1"));
}

TEST_CASE("recover round trip restores the parameters") {
    Checkpoint pre = make_pretrained(cfg(2, 2, 16, 32), 41);
    Checkpoint ft = make_finetune(pre, 42);
    for (Scheme scheme : {Scheme::mergelock, Scheme::params}) {
        ProtectResult r = scheme == Scheme::mergelock ? protect_mergelock(ft, sampling(43))
                                                      : protect_params(ft, pre, sampling(43));
        RecoverResult rec = recover(r.model, r.key);
        CHECK(rec.warnings.empty());
        CHECK(checkpoint_max_abs_diff(rec.model, ft) <= 1e-8);
    }
}

TEST_CASE("identity key recovery is a no-op") {
    Checkpoint ckpt = make_pretrained(cfg(1, 2, 8, 16), 44);
    MergeLockKey key = MergeLockKey::identity(ckpt.config, Scheme::mergelock);
    RecoverResult rec = recover(ckpt, key);
    for (const auto& [name, m] : ckpt.tensors) CHECK(rec.model.at(name) == m);
}

TEST_CASE("wrong-seed key fails to recover the parameters") {
    Checkpoint pre = make_pretrained(cfg(2, 2, 16, 32), 50);
    Checkpoint ft = make_finetune(pre, 51);
    Batch batch = make_batch(3, 4, 16, 52);
    ProtectResult right = protect_mergelock(ft, sampling(53));
    ProtectResult wrong = protect_mergelock(ft, sampling(54));

    RecoverResult rec = recover(right.model, wrong.key);
    CHECK_FALSE(rec.warnings.empty());  // fingerprint mismatch surfaced

    // Composing the protection with a mismatched inverse pair is itself a
    // function-preserving insertion, so the forward function cannot tell the
    // keys apart; the failure shows up in parameter space, where the model
    // stays far from the original (and thus still unmergeable).
    CHECK(functional_divergence(rec.model, ft, batch) <= 1e-12);
    CHECK(checkpoint_max_abs_diff(rec.model, ft) > 1e-2);
}

TEST_CASE("key scheme and dimension mismatches are errors") {
    Checkpoint ckpt = make_pretrained(cfg(2, 2, 8, 16), 55);
    MergeLockKey key = MergeLockKey::identity(cfg(1, 2, 8, 16), Scheme::mergelock);
    CHECK_THROWS_AS(recover(ckpt, key), KeyError);
}

TEST_CASE("params protection maximizes the assignment objective on a toy mlp") {
    ModelConfig c = cfg(1, 1, 2, 4);
    Checkpoint pre = make_pretrained(c, 60);
    Checkpoint ft = make_finetune(pre, 61);
    ProtectResult r = protect_params(ft, pre, sampling(62));

    // brute force over all 4! permutations of ft neurons
    const Matrix& pw1 = pre.at("layers.0.mlp.w1");
    const Matrix& pw2 = pre.at("layers.0.mlp.w2");
    const Matrix& fw1 = ft.at("layers.0.mlp.w1");
    const Matrix& fw2 = ft.at("layers.0.mlp.w2");
    auto mismatch = [&](const std::vector<std::size_t>& slot_to_neuron) {
        // distance^2 between pre and permuted ft over w1 rows / w2 cols
        double total = 0.0;
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t n = slot_to_neuron[s];
            for (std::size_t cix = 0; cix < 2; ++cix) {
                const double d1 = pw1(s, cix) - fw1(n, cix);
                const double d2 = pw2(cix, s) - fw2(cix, n);
                total += d1 * d1 + d2 * d2;
            }
        }
        return total;
    };
    std::vector<std::size_t> idx = {0, 1, 2, 3};
    double best = -1.0;
    do {
        best = std::max(best, mismatch(idx));
    } while (std::next_permutation(idx.begin(), idx.end()));

    const Permutation& applied = r.key.layers[0].mlp_perm;
    std::vector<std::size_t> slot_to_neuron(4);
    for (std::size_t n = 0; n < 4; ++n) slot_to_neuron[applied[n]] = n;
    CHECK(mismatch(slot_to_neuron) == Catch::Approx(best).margin(1e-9));
}

TEST_CASE("params protection preserves the forward function") {
    Checkpoint pre = make_pretrained(cfg(2, 2, 16, 32), 70);
    Checkpoint ft = make_finetune(pre, 71);
    Batch batch = make_batch(3, 4, 16, 72);
    ProtectResult r = protect_params(ft, pre, sampling(73));
    CHECK(max_output_deviation(ft, r.model, batch) <= 1e-6);
}

TEST_CASE("degenerate params objective still yields an equivalent model") {
    // pre == ckpt: any optimal permutation is acceptable
    Checkpoint pre = make_pretrained(cfg(1, 2, 8, 16), 80);
    Batch batch = make_batch(2, 3, 8, 81);
    ProtectResult r = protect_params(pre, pre, sampling(82));
    CHECK(max_output_deviation(pre, r.model, batch) <= 1e-6);
}

TEST_CASE("protection amplifies the distance to the pretrained model") {
    Checkpoint pre = make_pretrained(cfg(2, 2, 16, 32), 90);
    Checkpoint ft = make_finetune(pre, 91, 0.02);
    ProtectResult r = protect_mergelock(ft, sampling(92));
    for (const std::string& branch : {std::string("qk"), std::string("vo")}) {
        const double before = model_branch_distance(ft, pre, branch);
        const double after = model_branch_distance(r.model, pre, branch);
        CHECK(after >= 10.0 * before);
    }
}
