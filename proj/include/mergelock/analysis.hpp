#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mergelock/attack.hpp"
#include "mergelock/checkpoint.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/merge.hpp"
#include "mergelock/protect.hpp"
#include "mergelock/transformer.hpp"

namespace mergelock {

struct ReportRow {
    long layer = -1;           // -1 for model-level rows
    std::string branch;        // qk | vo | mlp | all
    std::string metric;
    bool has_lambda = false;
    double lambda = 0.0;
    double value = 0.0;
};

// Tabular output of every analysis. Serialization is canonical: JSON with
// sorted keys and no whitespace, CSV with one row per record. Metadata never
// includes wall-clock values, so reports are byte-reproducible from seeds.
struct AnalysisReport {
    std::vector<ReportRow> rows;
    std::map<std::string, std::string> metadata;

    nlohmann::json to_json() const {
        nlohmann::json jrows = nlohmann::json::array();
        for (const ReportRow& r : rows) {
            nlohmann::json jr = {{"branch", r.branch},
                                 {"layer", r.layer},
                                 {"metric", r.metric},
                                 {"value", r.value}};
            if (r.has_lambda)
                jr["lambda"] = r.lambda;
            else
                jr["lambda"] = nullptr;
            jrows.push_back(std::move(jr));
        }
        return {{"metadata", metadata}, {"rows", jrows}};
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "layer,branch,metric,lambda,value\n";
        for (const ReportRow& r : rows) {
            out << r.layer << ',' << r.branch << ',' << r.metric << ',';
            if (r.has_lambda) out << r.lambda;
            out << ',' << r.value << '\n';
        }
        return out.str();
    }
};

namespace detail {

inline const std::vector<std::string>& branch_tensors(const std::string& branch) {
    static const std::vector<std::string> qk = {"attn.w_q", "attn.w_k", "attn.b_q", "attn.b_k"};
    static const std::vector<std::string> vo = {"attn.w_v", "attn.w_o", "attn.b_v", "attn.b_o"};
    static const std::vector<std::string> mlp = {"mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"};
    if (branch == "qk") return qk;
    if (branch == "vo") return vo;
    return mlp;
}

}  // namespace detail

// Frobenius distance restricted to one branch of one layer (weights plus
// biases, square-rooted sum of squares).
inline double branch_distance(const Checkpoint& a, const Checkpoint& b, std::size_t layer,
                              const std::string& branch) {
    double total = 0.0;
    for (const std::string& t : detail::branch_tensors(branch)) {
        const double d = frobenius_distance(a.layer_tensor(layer, t), b.layer_tensor(layer, t));
        total += d * d;
    }
    return std::sqrt(total);
}

// Whole-model branch distance, aggregated over layers.
inline double model_branch_distance(const Checkpoint& a, const Checkpoint& b,
                                    const std::string& branch) {
    double total = 0.0;
    for (std::size_t l = 0; l < a.config.num_layers; ++l) {
        const double d = branch_distance(a, b, l, branch);
        total += d * d;
    }
    return std::sqrt(total);
}

inline double checkpoint_distance(const Checkpoint& a, const Checkpoint& b) {
    a.require_same_schema(b);
    double total = 0.0;
    for (const auto& [name, m] : a.tensors) {
        const double d = frobenius_distance(m, b.at(name));
        total += d * d;
    }
    return std::sqrt(total);
}

// Per-layer, per-branch Frobenius distances plus per-branch means and the
// whole-model total (all tensors, layer norms included).
inline AnalysisReport frobenius_report(const Checkpoint& model, const Checkpoint& reference) {
    model.require_same_schema(reference);
    AnalysisReport report;
    const std::vector<std::string> branches = {"qk", "vo", "mlp"};
    std::map<std::string, double> mean_acc;
    for (std::size_t l = 0; l < model.config.num_layers; ++l) {
        for (const std::string& branch : branches) {
            const double d = branch_distance(model, reference, l, branch);
            report.rows.push_back({static_cast<long>(l), branch, "frobenius", false, 0.0, d});
            mean_acc[branch] += d;
        }
    }
    for (const std::string& branch : branches)
        report.rows.push_back({-1, branch, "frobenius_mean", false, 0.0,
                               mean_acc[branch] / static_cast<double>(model.config.num_layers)});
    report.rows.push_back({-1, "all", "frobenius_total", false, 0.0,
                           checkpoint_distance(model, reference)});
    return report;
}

struct LmcCurve {
    std::vector<double> grid;
    std::vector<double> losses;
};

inline std::vector<double> uniform_grid(std::size_t points) {
    if (points < 2) throw ParameterError("grid needs at least the two endpoints");
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i)
        grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    grid.front() = 0.0;
    grid.back() = 1.0;
    return grid;
}

// Interpolated model theta_pre + t(m1 - pre) + (1-t)(m2 - pre); the pre
// terms cancel algebraically, so this is t*m1 + (1-t)*m2 with exact copies
// at the endpoints.
inline Checkpoint interpolate_models(const Checkpoint& m1, const Checkpoint& m2, double t) {
    m1.require_same_schema(m2);
    if (t == 1.0) return m1;
    if (t == 0.0) return m2;
    Checkpoint out = m1;
    for (auto& [name, m] : out.tensors) {
        const Matrix& other = m2.at(name);
        for (std::size_t k = 0; k < m.size(); ++k)
            m.storage()[k] = t * m.storage()[k] + (1.0 - t) * other.storage()[k];
    }
    return out;
}

// Loss proxy along the interpolation path: mean functional divergence
// against the two endpoints (no datasets exist at this scale; recorded in
// the report metadata wherever curves are serialized).
inline LmcCurve lmc_curve(const Checkpoint& pre, const Checkpoint& m1, const Checkpoint& m2,
                          const std::vector<double>& grid, const Batch& batch) {
    pre.require_same_schema(m1);
    pre.require_same_schema(m2);
    if (grid.size() < 2 || grid.front() != 0.0 || grid.back() != 1.0)
        throw ParameterError("lmc grid must include 0 and 1");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw ParameterError("lmc grid must be strictly increasing");

    LmcCurve curve;
    curve.grid = grid;
    curve.losses.reserve(grid.size());
    for (double t : grid) {
        const Checkpoint interp = interpolate_models(m1, m2, t);
        curve.losses.push_back(0.5 * (functional_divergence(interp, m1, batch) +
                                      functional_divergence(interp, m2, batch)));
    }
    return curve;
}

inline std::vector<double> default_sweep_grid() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

// Task-arithmetic merge at every grid coefficient, scored by divergence
// against each endpoint.
inline AnalysisReport lambda_sweep(const Checkpoint& pre, const Checkpoint& m1,
                                   const Checkpoint& m2, const Batch& batch,
                                   const std::vector<double>& grid) {
    AnalysisReport report;
    for (double lambda : grid) {
        const Checkpoint merged = task_arithmetic(pre, {m1, m2}, lambda);
        report.rows.push_back({-1, "all", "divergence_vs_m1", true, lambda,
                               functional_divergence(merged, m1, batch)});
        report.rows.push_back({-1, "all", "divergence_vs_m2", true, lambda,
                               functional_divergence(merged, m2, batch)});
    }
    return report;
}

enum class Scenario { clean, mergelock, params, mergelock_align, params_align };

inline std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::clean: return "clean";
        case Scenario::mergelock: return "mergelock";
        case Scenario::params: return "params";
        case Scenario::mergelock_align: return "mergelock+align";
        case Scenario::params_align: return "params+align";
    }
    return "clean";
}

inline Scenario scenario_from_string(const std::string& s) {
    if (s == "clean") return Scenario::clean;
    if (s == "mergelock") return Scenario::mergelock;
    if (s == "params") return Scenario::params;
    if (s == "mergelock+align") return Scenario::mergelock_align;
    if (s == "params+align") return Scenario::params_align;
    throw ParameterError("unknown scenario: " + s);
}

enum class MergeMethod { average, task_arithmetic, ties };

inline std::string to_string(MergeMethod m) {
    switch (m) {
        case MergeMethod::average: return "avg";
        case MergeMethod::task_arithmetic: return "ta";
        case MergeMethod::ties: return "ties";
    }
    return "ta";
}

inline MergeMethod merge_method_from_string(const std::string& s) {
    if (s == "avg") return MergeMethod::average;
    if (s == "ta") return MergeMethod::task_arithmetic;
    if (s == "ties") return MergeMethod::ties;
    throw ParameterError("unknown merge method: " + s);
}

struct MergeEvalOptions {
    double lambda = 0.3;
    double trim_fraction = 0.2;
    SamplingConfig sampling;  // protection seed and ranges
};

inline Checkpoint merge_with(MergeMethod method, const Checkpoint& pre,
                             const std::vector<Checkpoint>& models,
                             const MergeEvalOptions& opts) {
    switch (method) {
        case MergeMethod::average: return weight_average(models);
        case MergeMethod::task_arithmetic: return task_arithmetic(pre, models, opts.lambda);
        case MergeMethod::ties: return ties_merge(pre, models, opts.trim_fraction, opts.lambda);
    }
    throw ParameterError("unknown merge method");
}

// Full pipeline: protect m1 per scenario, optionally align it toward m2,
// merge, then score the merged model against the clean endpoints.
inline AnalysisReport merge_eval(const Checkpoint& pre, const Checkpoint& m1, const Checkpoint& m2,
                                 const Batch& batch, Scenario scenario, MergeMethod method,
                                 const MergeEvalOptions& opts) {
    Checkpoint m1_prepared = m1;
    switch (scenario) {
        case Scenario::clean:
            break;
        case Scenario::mergelock:
            m1_prepared = protect_mergelock(m1, opts.sampling).model;
            break;
        case Scenario::params:
            m1_prepared = protect_params(m1, pre, opts.sampling).model;
            break;
        case Scenario::mergelock_align:
            m1_prepared = protect_mergelock(m1, opts.sampling).model;
            m1_prepared = kabsch_align_model(m1_prepared, m2).model;
            break;
        case Scenario::params_align:
            m1_prepared = protect_params(m1, pre, opts.sampling).model;
            m1_prepared = params_align_model(m1_prepared, m2).model;
            break;
    }
    const Checkpoint merged = merge_with(method, pre, {m1_prepared, m2}, opts);

    AnalysisReport report;
    report.metadata["scenario"] = to_string(scenario);
    report.metadata["method"] = to_string(method);
    report.metadata["lambda"] = std::to_string(opts.lambda);
    report.metadata["seed"] = std::to_string(opts.sampling.seed);
    report.rows.push_back(
        {-1, "all", "divergence_vs_m1", false, 0.0, functional_divergence(merged, m1, batch)});
    report.rows.push_back(
        {-1, "all", "divergence_vs_m2", false, 0.0, functional_divergence(merged, m2, batch)});
    return report;
}

}  // namespace mergelock
