#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mergelock/analysis.hpp"
#include "mergelock/assignment.hpp"
#include "mergelock/attack.hpp"
#include "mergelock/merge.hpp"
#include "mergelock/protect.hpp"
#include "mergelock/synth.hpp"
#include "mergelock/transformer.hpp"

namespace mergelock {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

struct EvalSummary {
    std::uint64_t seed = 0;
    std::vector<CriterionResult> criteria;

    bool all_pass() const {
        for (const CriterionResult& c : criteria)
            if (!c.pass) return false;
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const CriterionResult& c : criteria)
            rows.push_back(
                {{"detail", c.detail}, {"id", c.id}, {"name", c.name}, {"pass", c.pass}});
        return {{"criteria", rows}, {"seed", seed}};
    }
};

namespace eval_detail {

inline std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

// Model shapes cycled across trials: every head count divides every width.
inline ModelConfig varied_config(std::size_t i) {
    static const std::size_t heads[] = {1, 2, 4};
    static const std::size_t widths[] = {8, 16, 32, 64};
    ModelConfig c;
    c.num_layers = 1 + i % 4;
    c.num_heads = heads[i % 3];
    c.d_model = widths[i % 4];
    c.d_ff = 2 * c.d_model;
    c.activation = i % 2 ? Activation::gelu : Activation::relu;
    return c;
}

// Fixed shape for the paired-seed merge studies.
inline ModelConfig paired_config() {
    ModelConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.activation = Activation::gelu;
    return c;
}

struct PairedModels {
    Checkpoint pre, ft1, ft2;
    Batch batch;
};

inline PairedModels paired_models(std::uint64_t seed, std::size_t trial) {
    const std::uint64_t base = seed + 1000003ull * (trial + 1);
    PairedModels p;
    p.pre = make_pretrained(paired_config(), base);
    p.ft1 = make_finetune(p.pre, base + 1, 0.02);
    p.ft2 = make_finetune(p.pre, base + 2, 0.02);
    p.batch = make_batch(4, 4, paired_config().d_model, base + 3);
    return p;
}

inline SamplingConfig sampling_with_seed(std::uint64_t seed) {
    SamplingConfig c;
    c.seed = seed;
    return c;
}

// Merge quality score: mean functional divergence of the merged model
// against the two clean endpoints.
inline double merge_score(const Checkpoint& merged, const PairedModels& p) {
    return 0.5 * (functional_divergence(merged, p.ft1, p.batch) +
                  functional_divergence(merged, p.ft2, p.batch));
}

// Independent forward oracle: scalar loops only, explicit exp/sum softmax.
inline Matrix oracle_forward(const Checkpoint& ckpt, const Matrix& input) {
    const std::size_t T = input.rows();
    const std::size_t d = ckpt.config.d_model;
    const std::size_t H = ckpt.config.num_heads;
    const std::size_t dh = d / H;
    Matrix x = input;

    auto norm_rows = [&](const Matrix& m, const Matrix& gamma, const Matrix& beta) {
        Matrix out(m.rows(), m.cols());
        for (std::size_t t = 0; t < m.rows(); ++t) {
            double mean = 0;
            for (std::size_t c = 0; c < m.cols(); ++c) mean += m(t, c);
            mean /= static_cast<double>(m.cols());
            double var = 0;
            for (std::size_t c = 0; c < m.cols(); ++c)
                var += (m(t, c) - mean) * (m(t, c) - mean);
            var /= static_cast<double>(m.cols());
            for (std::size_t c = 0; c < m.cols(); ++c)
                out(t, c) = (m(t, c) - mean) / std::sqrt(var + 1e-5) * gamma(0, c) + beta(0, c);
        }
        return out;
    };

    for (std::size_t l = 0; l < ckpt.config.num_layers; ++l) {
        const Matrix& w_q = ckpt.layer_tensor(l, "attn.w_q");
        const Matrix& w_k = ckpt.layer_tensor(l, "attn.w_k");
        const Matrix& w_v = ckpt.layer_tensor(l, "attn.w_v");
        const Matrix& w_o = ckpt.layer_tensor(l, "attn.w_o");
        const Matrix& b_q = ckpt.layer_tensor(l, "attn.b_q");
        const Matrix& b_k = ckpt.layer_tensor(l, "attn.b_k");
        const Matrix& b_v = ckpt.layer_tensor(l, "attn.b_v");
        const Matrix& b_o = ckpt.layer_tensor(l, "attn.b_o");

        const Matrix xn = norm_rows(x, ckpt.layer_tensor(l, "ln1.gamma"),
                                    ckpt.layer_tensor(l, "ln1.beta"));
        Matrix concat(T, d);
        for (std::size_t h = 0; h < H; ++h) {
            Matrix q(T, dh), k(T, dh), v(T, dh);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < dh; ++j) {
                    double sq = 0, sk = 0, sv = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                        sq += xn(t, c) * w_q(h * dh + j, c);
                        sk += xn(t, c) * w_k(h * dh + j, c);
                        sv += xn(t, c) * w_v(h * dh + j, c);
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
                for (double lv : logits) mx = std::max(mx, lv);
                double denom = 0;
                for (double lv : logits) denom += std::exp(lv - mx);
                for (std::size_t j = 0; j < dh; ++j) {
                    double acc = 0;
                    for (std::size_t u = 0; u < T; ++u)
                        acc += std::exp(logits[u] - mx) / denom * v(u, j);
                    concat(t, h * dh + j) = acc;
                }
            }
        }
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                double s = 0;
                for (std::size_t j = 0; j < d; ++j) s += concat(t, j) * w_o(c, j);
                x(t, c) += s + b_o(0, c);
            }

        const Matrix& w1 = ckpt.layer_tensor(l, "mlp.w1");
        const Matrix& b1 = ckpt.layer_tensor(l, "mlp.b1");
        const Matrix& w2 = ckpt.layer_tensor(l, "mlp.w2");
        const Matrix& b2 = ckpt.layer_tensor(l, "mlp.b2");
        const Matrix xm = norm_rows(x, ckpt.layer_tensor(l, "ln2.gamma"),
                                    ckpt.layer_tensor(l, "ln2.beta"));
        const std::size_t df = ckpt.config.d_ff;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> hidden(df);
            for (std::size_t i = 0; i < df; ++i) {
                double s = 0;
                for (std::size_t c = 0; c < d; ++c) s += xm(t, c) * w1(i, c);
                hidden[i] = apply_activation(ckpt.config.activation, s + b1(0, i));
            }
            for (std::size_t c = 0; c < d; ++c) {
                double s = 0;
                for (std::size_t i = 0; i < df; ++i) s += hidden[i] * w2(c, i);
                x(t, c) += s + b2(0, c);
            }
        }
    }
    return x;
}

inline double brute_force_assignment(const Matrix& cost) {
    std::vector<std::size_t> perm(cost.rows());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) total += cost(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// ---- criteria ----

inline CriterionResult criteria_1_2_preservation_and_recovery(std::uint64_t seed, bool recovery) {
    const auto start = std::chrono::steady_clock::now();
    double worst_dev = 0.0;
    double worst_rec = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
        const ModelConfig cfg = varied_config(i);
        const std::uint64_t base = seed + 9176ull * (i + 1);
        const Checkpoint pre = make_pretrained(cfg, base);
        const Checkpoint theta = make_finetune(pre, base + 1, 0.02);
        const Batch batch = make_batch(2, 2 + i % 7, cfg.d_model, base + 2);

        const ProtectResult ml = protect_mergelock(theta, sampling_with_seed(base + 3));
        const ProtectResult pr = protect_params(theta, pre, sampling_with_seed(base + 4));
        worst_dev = std::max(worst_dev, max_output_deviation(theta, ml.model, batch));
        worst_dev = std::max(worst_dev, max_output_deviation(theta, pr.model, batch));

        worst_rec =
            std::max(worst_rec, checkpoint_max_abs_diff(recover(ml.model, ml.key).model, theta));
        worst_rec =
            std::max(worst_rec, checkpoint_max_abs_diff(recover(pr.model, pr.key).model, theta));
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!recovery) {
        // wall-clock stays out of the detail string: the summary must be
        // byte-reproducible, only the under-cap verdict is recorded
        const bool in_time = elapsed < 60.0;
        CriterionResult r{1, "functional-preservation", worst_dev <= 1e-6 && in_time,
                          "max output deviation " + fmt(worst_dev) +
                              " (tol 1e-6), 100 models, both schemes, runtime under 60s: " +
                              (in_time ? "yes" : "no")};
        return r;
    }
    return {2, "key-recovery", worst_rec <= 1e-8,
            "max parameter deviation after recover " + fmt(worst_rec) +
                " (tol 1e-8), 100 models, both schemes"};
}

inline CriterionResult criterion_3_distance_amplification(std::uint64_t seed) {
    std::size_t ok_mergelock = 0;
    std::size_t ok_params = 0;
    const std::size_t trials = 100;
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 40000, t);
        const double qk_before = model_branch_distance(p.ft1, p.pre, "qk");
        const double vo_before = model_branch_distance(p.ft1, p.pre, "vo");

        const Checkpoint ml =
            protect_mergelock(p.ft1, sampling_with_seed(seed + 41000 + t)).model;
        if (model_branch_distance(ml, p.pre, "qk") >= 10.0 * qk_before &&
            model_branch_distance(ml, p.pre, "vo") >= 10.0 * vo_before)
            ++ok_mergelock;

        const Checkpoint pr =
            protect_params(p.ft1, p.pre, sampling_with_seed(seed + 42000 + t)).model;
        if (model_branch_distance(pr, p.pre, "qk") >= 10.0 * qk_before &&
            model_branch_distance(pr, p.pre, "vo") >= 10.0 * vo_before)
            ++ok_params;
    }
    return {3, "distance-amplification", ok_mergelock >= 95 && ok_params >= 95,
            "QK and VO distance to pretrained grew >= 10x on " + std::to_string(ok_mergelock) +
                "/100 seeds (mergelock) and " + std::to_string(ok_params) +
                "/100 (params); need >= 95"};
}

inline CriterionResult criterion_4_merge_degradation(std::uint64_t seed) {
    std::size_t ok_ta = 0;
    std::size_t ok_ties = 0;
    for (std::size_t t = 0; t < 100; ++t) {
        const PairedModels p = paired_models(seed + 50000, t);
        const Checkpoint prot =
            protect_mergelock(p.ft1, sampling_with_seed(seed + 51000 + t)).model;

        const double clean_ta = merge_score(task_arithmetic(p.pre, {p.ft1, p.ft2}, 0.3), p);
        const double prot_ta = merge_score(task_arithmetic(p.pre, {prot, p.ft2}, 0.3), p);
        if (prot_ta >= 10.0 * clean_ta) ++ok_ta;

        const double clean_ties = merge_score(ties_merge(p.pre, {p.ft1, p.ft2}, 0.2, 0.3), p);
        const double prot_ties = merge_score(ties_merge(p.pre, {prot, p.ft2}, 0.2, 0.3), p);
        if (prot_ties >= 10.0 * clean_ties) ++ok_ties;
    }
    return {4, "merge-degradation", ok_ta >= 95 && ok_ties >= 95,
            "protected merge diverged >= 10x clean on " + std::to_string(ok_ta) +
                "/100 seeds (task arithmetic) and " + std::to_string(ok_ties) +
                "/100 (ties); need >= 95"};
}

inline CriterionResult criterion_5_sweep_flatness(std::uint64_t seed) {
    std::size_t ok = 0;
    const std::size_t trials = 50;
    double worst_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 60000, t);
        const Checkpoint prot =
            protect_mergelock(p.ft1, sampling_with_seed(seed + 61000 + t)).model;

        double clean_max = 0.0;
        double prot_min = std::numeric_limits<double>::infinity();
        for (double lambda : default_sweep_grid()) {
            clean_max =
                std::max(clean_max, merge_score(task_arithmetic(p.pre, {p.ft1, p.ft2}, lambda), p));
            prot_min =
                std::min(prot_min, merge_score(task_arithmetic(p.pre, {prot, p.ft2}, lambda), p));
        }
        worst_ratio = std::min(worst_ratio, prot_min / clean_max);
        if (prot_min >= 5.0 * clean_max) ++ok;
    }
    return {5, "lambda-sweep-flatness", ok == trials,
            "min protected sweep divergence >= 5x max clean sweep divergence on " +
                std::to_string(ok) + "/50 seeds, worst ratio " + fmt(worst_ratio)};
}

inline CriterionResult criterion_6_kabsch_recovers_orthogonal(std::uint64_t seed) {
    std::size_t ok = 0;
    const std::size_t trials = 50;
    double worst_dist = 0.0;
    const TransformSampler orth = [](std::size_t d, Rng& r) {
        return sample_orthogonal_transform(d, r);
    };
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 70000, t);
        SamplingConfig cfg = sampling_with_seed(seed + 71000 + t);
        const Checkpoint prot = protect_mergelock(p.ft1, cfg, orth).model;

        // align against the clean counterpart: orthogonal-only protection
        // must be exactly undone
        const Checkpoint aligned = kabsch_align_model(prot, p.ft1).model;
        const double qk_dist = model_branch_distance(aligned, p.ft1, "qk");
        worst_dist = std::max(worst_dist, qk_dist);

        const double clean = merge_score(task_arithmetic(p.pre, {p.ft1, p.ft2}, 0.3), p);
        const double restored = merge_score(task_arithmetic(p.pre, {aligned, p.ft2}, 0.3), p);
        if (qk_dist <= 1e-6 && std::abs(restored - clean) <= 0.1 * clean) ++ok;
    }
    return {6, "kabsch-recovers-orthogonal", ok == trials,
            std::to_string(ok) + "/50 seeds: post-alignment QK distance <= 1e-6 (worst " +
                fmt(worst_dist) + ") and merged divergence within 10% of clean"};
}

inline CriterionResult criterion_7_kabsch_fails_on_rpd(std::uint64_t seed) {
    std::size_t ok = 0;
    const std::size_t trials = 50;
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 80000, t);
        const Checkpoint prot =
            protect_mergelock(p.ft1, sampling_with_seed(seed + 81000 + t)).model;

        const double before = model_branch_distance(prot, p.pre, "qk");
        const Checkpoint aligned = kabsch_align_model(prot, p.ft2).model;
        const double after = model_branch_distance(aligned, p.pre, "qk");

        const double clean = merge_score(task_arithmetic(p.pre, {p.ft1, p.ft2}, 0.3), p);
        const double attacked = merge_score(task_arithmetic(p.pre, {aligned, p.ft2}, 0.3), p);
        if (after >= 0.5 * before && attacked >= 5.0 * clean) ++ok;
    }
    return {7, "kabsch-fails-on-rpd", ok >= 45,
            std::to_string(ok) +
                "/50 seeds kept >= 0.5x QK distance and >= 5x clean divergence after "
                "alignment; need >= 45"};
}

inline CriterionResult criterion_8_params_reversibility(std::uint64_t seed) {
    std::size_t ok = 0;
    const std::size_t trials = 50;
    double worst_dist = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 90000, t);
        const Checkpoint prot =
            protect_params(p.ft1, p.pre, sampling_with_seed(seed + 91000 + t)).model;

        const Checkpoint aligned = params_align_model(prot, p.ft1).model;
        const double dist = checkpoint_distance(aligned, p.ft1);
        worst_dist = std::max(worst_dist, dist);

        const double clean = merge_score(task_arithmetic(p.pre, {p.ft1, p.ft2}, 0.3), p);
        const double restored = merge_score(task_arithmetic(p.pre, {aligned, p.ft2}, 0.3), p);
        if (dist <= 1e-8 && std::abs(restored - clean) <= 0.1 * clean) ++ok;
    }
    return {8, "params-reversibility", ok == trials,
            std::to_string(ok) + "/50 seeds: post-alignment parameter distance <= 1e-8 (worst " +
                fmt(worst_dist) + ") and merged divergence within 10% of clean"};
}

inline CriterionResult criterion_9_lmc_barrier(std::uint64_t seed) {
    std::size_t ok = 0;
    const std::size_t trials = 50;
    const std::vector<double> grid = uniform_grid(21);
    for (std::size_t t = 0; t < trials; ++t) {
        const PairedModels p = paired_models(seed + 100000, t);
        const Checkpoint prot =
            protect_mergelock(p.ft1, sampling_with_seed(seed + 101000 + t)).model;

        const LmcCurve clean = lmc_curve(p.pre, p.ft1, p.ft2, grid, p.batch);
        const LmcCurve barred = lmc_curve(p.pre, prot, p.ft2, grid, p.batch);
        const double clean_max = *std::max_element(clean.losses.begin(), clean.losses.end());
        const double prot_max = *std::max_element(barred.losses.begin(), barred.losses.end());
        if (prot_max >= 10.0 * clean_max) ++ok;
    }
    return {9, "lmc-barrier", ok == trials,
            std::to_string(ok) + "/50 paired seeds with protected max loss >= 10x clean max"};
}

inline CriterionResult criterion_10_oracle_equivalence(std::uint64_t seed) {
    Rng rng(seed + 110000);

    std::size_t hungarian_ok = 0;
    for (std::size_t t = 0; t < 100; ++t) {
        const std::size_t n = 1 + rng.index(8);
        Matrix cost(n, n);
        for (std::size_t k = 0; k < cost.size(); ++k) cost.storage()[k] = rng.uniform(-9.0, 9.0);
        if (std::abs(hungarian(cost).objective - brute_force_assignment(cost)) <= 1e-9)
            ++hungarian_ok;
    }

    std::size_t svd_ok = 0;
    for (std::size_t t = 0; t < 1000; ++t) {
        const std::size_t m = 1 + rng.index(64);
        const std::size_t n = 1 + rng.index(64);
        const Matrix a = sample_gaussian(m, n, 1.0, rng);
        const SvdResult f = svd(a);
        if (frobenius_distance(f.reconstruct(), a) <= 1e-8 * std::max(1.0, frobenius_norm(a)))
            ++svd_ok;
    }

    std::size_t forward_ok = 0;
    for (std::size_t t = 0; t < 100; ++t) {
        const ModelConfig cfg = varied_config(t);
        const Checkpoint model = make_pretrained(cfg, seed + 111000 + t);
        const Matrix x =
            make_batch(1, 2 + t % 7, cfg.d_model, seed + 112000 + t).inputs[0];
        if (max_abs_diff(model_forward(model, x), oracle_forward(model, x)) <= 1e-12)
            ++forward_ok;
    }

    const bool pass = hungarian_ok == 100 && svd_ok == 1000 && forward_ok == 100;
    return {10, "oracle-equivalence", pass,
            "hungarian vs brute force " + std::to_string(hungarian_ok) +
                "/100, svd reconstruction " + std::to_string(svd_ok) +
                "/1000, forward vs loop oracle " + std::to_string(forward_ok) + "/100"};
}

inline std::vector<CriterionResult> run_criteria_1_to_10(std::uint64_t seed) {
    std::vector<CriterionResult> results;
    results.push_back(criteria_1_2_preservation_and_recovery(seed, false));
    results.push_back(criteria_1_2_preservation_and_recovery(seed, true));
    results.push_back(criterion_3_distance_amplification(seed));
    results.push_back(criterion_4_merge_degradation(seed));
    results.push_back(criterion_5_sweep_flatness(seed));
    results.push_back(criterion_6_kabsch_recovers_orthogonal(seed));
    results.push_back(criterion_7_kabsch_fails_on_rpd(seed));
    results.push_back(criterion_8_params_reversibility(seed));
    results.push_back(criterion_9_lmc_barrier(seed));
    results.push_back(criterion_10_oracle_equivalence(seed));
    return results;
}

}  // namespace eval_detail

// Runs the full acceptance matrix. Criterion 11 re-runs the entire matrix
// with the same seed and demands byte-identical serialized results.
inline EvalSummary run_eval_suite(std::uint64_t seed) {
    EvalSummary summary;
    summary.seed = seed;
    summary.criteria = eval_detail::run_criteria_1_to_10(seed);

    EvalSummary second;
    second.seed = seed;
    second.criteria = eval_detail::run_criteria_1_to_10(seed);
    const bool identical = summary.to_json().dump() == second.to_json().dump();
    summary.criteria.push_back({11, "determinism", identical,
                                identical ? "two runs produced byte-identical summaries"
                                          : "summaries differ between runs"});
    return summary;
}

}  // namespace mergelock
