#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mergelock/merge.hpp"
#include "mergelock/synth.hpp"

using namespace mergelock;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.num_layers = 1;
    c.num_heads = 2;
    c.d_model = 4;
    c.d_ff = 8;
    return c;
}

}  // namespace

TEST_CASE("weight average identities") {
    Checkpoint a = make_pretrained(tiny(), 1);
    Checkpoint avg1 = weight_average({a});
    for (const auto& [name, m] : a.tensors) CHECK(avg1.at(name) == m);
    Checkpoint avg2 = weight_average({a, a});
    CHECK(checkpoint_max_abs_diff(avg2, a) == 0.0);
    CHECK_THROWS_AS(weight_average({}), ParameterError);
}

TEST_CASE("weight average of three models matches the elementwise oracle") {
    Checkpoint a = make_pretrained(tiny(), 1);
    Checkpoint b = make_pretrained(tiny(), 2);
    Checkpoint c = make_pretrained(tiny(), 3);
    Checkpoint avg = weight_average({a, b, c});
    for (const auto& [name, m] : avg.tensors)
        for (std::size_t k = 0; k < m.size(); ++k) {
            const double expected = (a.at(name).storage()[k] + b.at(name).storage()[k] +
                                     c.at(name).storage()[k]) /
                                    3.0;
            CHECK(m.storage()[k] == Catch::Approx(expected).margin(1e-15));
        }
}

TEST_CASE("task arithmetic trivial cases") {
    Checkpoint pre = make_pretrained(tiny(), 4);
    Checkpoint ft = make_finetune(pre, 5);

    Checkpoint at_zero = task_arithmetic(pre, {ft}, 0.0);
    for (const auto& [name, m] : at_zero.tensors) CHECK(m == pre.at(name));

    Checkpoint at_one = task_arithmetic(pre, {ft}, 1.0);
    CHECK(checkpoint_max_abs_diff(at_one, ft) <= 1e-12);

    CHECK_THROWS_AS(task_arithmetic(pre, {ft}, std::nan("")), ParameterError);
}

TEST_CASE("task arithmetic midpoint with a null second task") {
    Checkpoint pre = make_pretrained(tiny(), 6);
    Checkpoint ft1 = make_finetune(pre, 7);
    Checkpoint merged = task_arithmetic(pre, {ft1, pre}, 0.5);
    for (const auto& [name, m] : merged.tensors)
        for (std::size_t k = 0; k < m.size(); ++k) {
            const double expected =
                pre.at(name).storage()[k] +
                0.5 * (ft1.at(name).storage()[k] - pre.at(name).storage()[k]);
            CHECK(m.storage()[k] == Catch::Approx(expected).margin(1e-15));
        }
}

TEST_CASE("task arithmetic is linear in lambda") {
    Checkpoint pre = make_pretrained(tiny(), 8);
    Checkpoint ft1 = make_finetune(pre, 9);
    Checkpoint ft2 = make_finetune(pre, 10);
    Checkpoint m1 = task_arithmetic(pre, {ft1, ft2}, 0.2);
    Checkpoint m2 = task_arithmetic(pre, {ft1, ft2}, 0.5);
    Checkpoint m3 = task_arithmetic(pre, {ft1, ft2}, 0.7);
    for (const auto& [name, m] : m3.tensors)
        for (std::size_t k = 0; k < m.size(); ++k) {
            const double lhs = m1.at(name).storage()[k] + m2.at(name).storage()[k] -
                               pre.at(name).storage()[k];
            CHECK(std::abs(lhs - m.storage()[k]) <= 1e-12);
        }
}

TEST_CASE("ties with k=1 and a single task equals task arithmetic bit for bit") {
    Checkpoint pre = make_pretrained(tiny(), 11);
    Checkpoint ft = make_finetune(pre, 12);
    Checkpoint ties = ties_merge(pre, {ft}, 1.0, 0.4);
    Checkpoint ta = task_arithmetic(pre, {ft}, 0.4);
    for (const auto& [name, m] : ties.tensors) CHECK(m == ta.at(name));
}

TEST_CASE("ties golden case: sign conflict with a zero-sum tie") {
    // tau1 = (+2, +1), tau2 = (-2, +3), k = 1, lambda = 1.
    // coord 0: sum = 0, tie elects positive, only +2 agrees -> mean +2
    // coord 1: sum = +4, both agree -> mean (1+3)/2 = 2
    // Frozen from hand enumeration of trim/elect/mean.
    ModelConfig c = tiny();
    Checkpoint pre = make_pretrained(c, 13);
    Checkpoint ft1 = pre, ft2 = pre;
    Matrix& t1 = ft1.at("layers.0.attn.b_o");
    Matrix& t2 = ft2.at("layers.0.attn.b_o");
    t1(0, 0) += 2.0;
    t1(0, 1) += 1.0;
    t2(0, 0) += -2.0;
    t2(0, 1) += 3.0;

    Checkpoint merged = ties_merge(pre, {ft1, ft2}, 1.0, 1.0);
    const Matrix& base = pre.at("layers.0.attn.b_o");
    const Matrix& out = merged.at("layers.0.attn.b_o");
    CHECK(out(0, 0) == Catch::Approx(base(0, 0) + 2.0));
    CHECK(out(0, 1) == Catch::Approx(base(0, 1) + 2.0));
    CHECK(out(0, 2) == Catch::Approx(base(0, 2)));
}

TEST_CASE("ties trim keeps the top-k magnitudes from a sort oracle") {
    // a 10-entry vector via the smallest valid model; verify the surviving
    // support directly against sorted magnitudes
    ModelConfig c = tiny();
    Checkpoint pre = make_pretrained(c, 14);
    Checkpoint ft = pre;
    // craft one tensor with known magnitudes 1..8 and leave others at zero delta
    Matrix& target = ft.at("layers.0.mlp.b1");
    std::vector<double> mags = {5, -3, 8, 1, -7, 2, 6, -4};
    for (std::size_t i = 0; i < 8; ++i) target(0, i) += mags[i];

    // use k small enough that the cut lands inside this tensor
    std::size_t total = 0;
    for (const auto& [name, m] : pre.tensors) total += m.size();
    const double k_four = 4.0 / static_cast<double>(total);  // keep exactly 4 entries
    Checkpoint merged4 = ties_merge(pre, {ft}, k_four, 1.0);
    const Matrix& out = merged4.at("layers.0.mlp.b1");
    const Matrix& base = pre.at("layers.0.mlp.b1");
    // sort oracle: top-4 magnitudes are 8, -7, 6, 5
    for (std::size_t i = 0; i < 8; ++i) {
        const double delta = out(0, i) - base(0, i);
        const bool kept = std::abs(mags[i]) >= 5.0;
        if (kept)
            CHECK(delta == Catch::Approx(mags[i]));
        else
            CHECK(delta == 0.0);
    }
}

TEST_CASE("ties parameter validation") {
    Checkpoint pre = make_pretrained(tiny(), 15);
    Checkpoint ft = make_finetune(pre, 16);
    CHECK_THROWS_AS(ties_merge(pre, {ft}, 0.0, 1.0), ParameterError);
    CHECK_THROWS_AS(ties_merge(pre, {ft}, 1.5, 1.0), ParameterError);
    CHECK_THROWS_AS(ties_merge(pre, {}, 0.5, 1.0), ParameterError);
}

TEST_CASE("merging commutes with model order") {
    Checkpoint pre = make_pretrained(tiny(), 17);
    Checkpoint a = make_finetune(pre, 18);
    Checkpoint b = make_finetune(pre, 19);
    Checkpoint c = make_finetune(pre, 20);

    Checkpoint avg_abc = weight_average({a, b, c});
    Checkpoint avg_cba = weight_average({c, b, a});
    CHECK(checkpoint_max_abs_diff(avg_abc, avg_cba) <= 1e-13);

    Checkpoint ties_ab = ties_merge(pre, {a, b}, 0.2, 0.3);
    Checkpoint ties_ba = ties_merge(pre, {b, a}, 0.2, 0.3);
    CHECK(checkpoint_max_abs_diff(ties_ab, ties_ba) <= 1e-13);
}
