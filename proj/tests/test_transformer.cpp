#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mergelock/synth.hpp"
#include "mergelock/transformer.hpp"

using namespace mergelock;

namespace {

ModelConfig cfg(std::size_t layers, std::size_t heads, std::size_t d_model, std::size_t d_ff,
                Activation act = Activation::relu) {
    ModelConfig c;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_model = d_model;
    c.d_ff = d_ff;
    c.activation = act;
    return c;
}

// Oracle: scalar-indexed attention with explicit exp/sum softmax, no Matrix
// helpers beyond element access.
Matrix oracle_attention(const Checkpoint& ckpt, std::size_t layer, const Matrix& x) {
    const std::size_t T = x.rows();
    const std::size_t d = ckpt.config.d_model;
    const std::size_t H = ckpt.config.num_heads;
    const std::size_t dh = d / H;
    const Matrix& w_q = ckpt.layer_tensor(layer, "attn.w_q");
    const Matrix& w_k = ckpt.layer_tensor(layer, "attn.w_k");
    const Matrix& w_v = ckpt.layer_tensor(layer, "attn.w_v");
    const Matrix& w_o = ckpt.layer_tensor(layer, "attn.w_o");
    const Matrix& b_q = ckpt.layer_tensor(layer, "attn.b_q");
    const Matrix& b_k = ckpt.layer_tensor(layer, "attn.b_k");
    const Matrix& b_v = ckpt.layer_tensor(layer, "attn.b_v");
    const Matrix& b_o = ckpt.layer_tensor(layer, "attn.b_o");

    Matrix concat(T, d);
    for (std::size_t h = 0; h < H; ++h) {
        Matrix q(T, dh), k(T, dh), v(T, dh);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) {
                double sq = 0, sk = 0, sv = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    sq += x(t, c) * w_q(h * dh + j, c);
                    sk += x(t, c) * w_k(h * dh + j, c);
                    sv += x(t, c) * w_v(h * dh + j, c);
                }
                q(t, j) = sq + b_q(0, h * dh + j);
                k(t, j) = sk + b_k(0, h * dh + j);
                v(t, j) = sv + b_v(0, h * dh + j);
            }
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> logits(T);
            for (std::size_t u = 0; u < T; ++u) {
                double s = 0;
                for (std::size_t j = 0; j < dh; ++j) s += q(t, j) * k(u, j);
                logits[u] = s / std::sqrt(static_cast<double>(dh));
            }
            double mx = logits[0];
            for (double l : logits) mx = std::max(mx, l);
            double denom = 0;
            for (double l : logits) denom += std::exp(l - mx);
            for (std::size_t j = 0; j < dh; ++j) {
                double acc = 0;
                for (std::size_t u = 0; u < T; ++u)
                    acc += std::exp(logits[u] - mx) / denom * v(u, j);
                concat(t, h * dh + j) = acc;
            }
        }
    }
    Matrix out(T, d);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += concat(t, j) * w_o(c, j);
            out(t, c) = s + b_o(0, c);
        }
    return out;
}

Matrix oracle_mlp(const Checkpoint& ckpt, std::size_t layer, const Matrix& x) {
    const Matrix& w1 = ckpt.layer_tensor(layer, "mlp.w1");
    const Matrix& b1 = ckpt.layer_tensor(layer, "mlp.b1");
    const Matrix& w2 = ckpt.layer_tensor(layer, "mlp.w2");
    const Matrix& b2 = ckpt.layer_tensor(layer, "mlp.b2");
    const std::size_t T = x.rows();
    Matrix hidden(T, w1.rows());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < w1.rows(); ++i) {
            double s = 0;
            for (std::size_t c = 0; c < x.cols(); ++c) s += x(t, c) * w1(i, c);
            s += b1(0, i);
            hidden(t, i) = apply_activation(ckpt.config.activation, s);
        }
    Matrix out(T, x.cols());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < x.cols(); ++c) {
            double s = 0;
            for (std::size_t i = 0; i < w1.rows(); ++i) s += hidden(t, i) * w2(c, i);
            out(t, c) = s + b2(0, c);
        }
    return out;
}

}  // namespace

TEST_CASE("attention with zero values returns the output bias") {
    Checkpoint ckpt = make_pretrained(cfg(1, 1, 4, 8), 5);
    ckpt.at("layers.0.attn.w_v") = Matrix(4, 4);
    ckpt.at("layers.0.attn.b_v") = Matrix(1, 4);
    Matrix b_o{{0.5, -1.0, 2.0, 0.25}};
    ckpt.at("layers.0.attn.b_o") = b_o;

    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 3, 4, 9).inputs[0];
    Matrix out = attention_forward(params, 0, x);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t c = 0; c < 4; ++c) CHECK(out(t, c) == Catch::Approx(b_o(0, c)));
}

TEST_CASE("single-token attention collapses the softmax") {
    Checkpoint ckpt = make_pretrained(cfg(1, 2, 8, 8), 6);
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 1, 8, 10).inputs[0];
    Matrix out = attention_forward(params, 0, x);
    // weight over the single key is 1, so out = (x W_V^T + b_V) W_O^T + b_O
    const Matrix v = affine(x, ckpt.at("layers.0.attn.w_v"), ckpt.at("layers.0.attn.b_v"));
    const Matrix expected =
        affine(v, ckpt.at("layers.0.attn.w_o"), ckpt.at("layers.0.attn.b_o"));
    CHECK(max_abs_diff(out, expected) <= 1e-12);
}

TEST_CASE("attention matches the explicit-loop oracle") {
    Checkpoint ckpt = make_pretrained(cfg(1, 2, 8, 16), 77);
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 3, 8, 11).inputs[0];
    CHECK(max_abs_diff(attention_forward(params, 0, x), oracle_attention(ckpt, 0, x)) <= 1e-12);
}

TEST_CASE("mlp zero second layer returns b2") {
    Checkpoint ckpt = make_pretrained(cfg(1, 1, 4, 8), 8);
    ckpt.at("layers.0.mlp.w2") = Matrix(4, 8);
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 2, 4, 12).inputs[0];
    Matrix out = mlp_forward(params, 0, x);
    const Matrix& b2 = ckpt.at("layers.0.mlp.b2");
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 4; ++c) CHECK(out(t, c) == Catch::Approx(b2(0, c)));
}

TEST_CASE("dead relu path returns b2") {
    Checkpoint ckpt = make_pretrained(cfg(1, 1, 4, 8, Activation::relu), 8);
    // force every pre-activation negative
    ckpt.at("layers.0.mlp.w1") = Matrix(8, 4);
    Matrix b1(1, 8);
    for (std::size_t i = 0; i < 8; ++i) b1(0, i) = -1.0 - static_cast<double>(i);
    ckpt.at("layers.0.mlp.b1") = b1;
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 2, 4, 13).inputs[0];
    Matrix out = mlp_forward(params, 0, x);
    const Matrix& b2 = ckpt.at("layers.0.mlp.b2");
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 4; ++c) CHECK(out(t, c) == Catch::Approx(b2(0, c)));
}

TEST_CASE("mlp matches the explicit-loop oracle for every activation") {
    for (Activation act : {Activation::relu, Activation::gelu, Activation::tanh}) {
        Checkpoint ckpt = make_pretrained(cfg(1, 2, 8, 16, act), 99);
        TransformerParams params = TransformerParams::from(ckpt);
        Matrix x = make_batch(1, 4, 8, 14).inputs[0];
        CHECK(max_abs_diff(mlp_forward(params, 0, x), oracle_mlp(ckpt, 0, x)) <= 1e-12);
    }
}

TEST_CASE("empty layer stack is the identity map") {
    TransformerParams params;
    params.config = cfg(1, 1, 4, 8);
    Matrix x = make_batch(1, 3, 4, 15).inputs[0];
    CHECK(model_forward(params, x) == x);
}

TEST_CASE("residual-only model passes input through") {
    Checkpoint ckpt = make_pretrained(cfg(2, 2, 8, 16), 1);
    for (auto& [name, m] : ckpt.tensors)
        if (name.find("gamma") == std::string::npos) m = Matrix(m.rows(), m.cols());
    Matrix x = make_batch(1, 3, 8, 16).inputs[0];
    CHECK(max_abs_diff(model_forward(ckpt, x), x) == 0.0);
}

TEST_CASE("model_forward composes per-layer calls") {
    Checkpoint ckpt = make_pretrained(cfg(2, 2, 8, 16, Activation::gelu), 3);
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix x = make_batch(1, 4, 8, 17).inputs[0];
    Matrix expected = x;
    for (std::size_t l = 0; l < 2; ++l) {
        const LayerView& lv = params.layers[l];
        expected += attention_forward(params, l, layer_norm(expected, lv.ln1_gamma, lv.ln1_beta));
        expected += mlp_forward(params, l, layer_norm(expected, lv.ln2_gamma, lv.ln2_beta));
    }
    CHECK(max_abs_diff(model_forward(params, x), expected) <= 1e-12);
}

TEST_CASE("head slices concatenate back to the stored matrices") {
    Checkpoint ckpt = make_pretrained(cfg(1, 4, 16, 8), 2);
    TransformerParams params = TransformerParams::from(ckpt);
    Matrix w_q(16, 16), w_o(16, 16);
    for (std::size_t h = 0; h < 4; ++h) {
        set_row_block(w_q, h * 4, params.layers[0].heads[h].w_q);
        set_col_block(w_o, h * 4, params.layers[0].heads[h].w_o);
    }
    CHECK(w_q == ckpt.at("layers.0.attn.w_q"));
    CHECK(w_o == ckpt.at("layers.0.attn.w_o"));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(55);
    Matrix m = sample_gaussian(6, 9, 3.0, rng);
    softmax_rows(m);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("functional divergence properties") {
    Checkpoint a = make_pretrained(cfg(2, 2, 8, 16), 4);
    Checkpoint b = make_finetune(a, 5, 0.05);
    Batch batch = make_batch(3, 4, 8, 18);

    CHECK(functional_divergence(a, a, batch) == 0.0);
    const double dab = functional_divergence(a, b, batch);
    CHECK(dab > 0.0);
    CHECK(dab == Catch::Approx(functional_divergence(b, a, batch)));

    // direct per-example oracle
    double expected = 0.0;
    for (const Matrix& x : batch.inputs) {
        const double d = frobenius_distance(model_forward(a, x), model_forward(b, x));
        expected += d * d / static_cast<double>(x.rows() * x.cols());
    }
    expected /= static_cast<double>(batch.inputs.size());
    CHECK(dab == Catch::Approx(expected).margin(1e-15));

    ModelConfig other = cfg(2, 2, 8, 8);
    CHECK_THROWS_AS(functional_divergence(a, make_pretrained(other, 1), batch), SchemaError);
}

TEST_CASE("forward pass is deterministic within a build") {
    Checkpoint a = make_pretrained(cfg(3, 2, 8, 16, Activation::gelu), 21);
    Matrix x = make_batch(1, 5, 8, 22).inputs[0];
    CHECK(model_forward(a, x) == model_forward(a, x));
}
