// mergelock: make transformer checkpoints unmergeable, and everything an
// adversary or auditor would run around that: merging, alignment attacks,
// authorized recovery, and quantitative reports. All commands are
// deterministic given their flags; seeds are explicit.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mergelock/eval_suite.hpp"
#include "mergelock/mergelock.hpp"

namespace {

using namespace mergelock;

// 0 success, 1 usage, 2 io/format, 3 assertion/equivalence, 4 numeric
int exit_code_for(errc code) {
    switch (code) {
        case errc::usage:
        case errc::parameter:
        case errc::shape: return 1;
        case errc::schema:
        case errc::parse:
        case errc::io:
        case errc::key: return 2;
        case errc::numeric:
        case errc::singular:
        case errc::sampling: return 4;
    }
    return 1;
}

void print_error(int code, const std::string& message, const std::string& context) {
    const nlohmann::json j = {{"code", code}, {"context", context}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path, path);
    out << content;
    if (!out) throw IoError("write failed: " + path, path);
}

void write_report(const std::string& path, const AnalysisReport& report) {
    if (path.ends_with(".json"))
        write_text(path, report.to_json().dump() + "\n");
    else
        write_text(path, report.to_csv());
}

nlohmann::json align_report_json(const std::string& strategy,
                                 const std::vector<AlignEntry>& entries) {
    nlohmann::json rows = nlohmann::json::array();
    for (const AlignEntry& e : entries)
        rows.push_back({{"branch", e.branch},
                        {"head", e.head},
                        {"layer", e.layer},
                        {"residual_after", e.residual_after},
                        {"residual_before", e.residual_before}});
    return {{"entries", rows}, {"strategy", strategy}};
}

struct GenArgs {
    std::uint64_t seed = 0;
    std::size_t layers = 2, heads = 2, d_model = 16, d_ff = 32, tasks = 2;
    std::size_t batch_count = 4, seq_len = 4;
    double perturb_scale = 0.02;
    std::string activation = "gelu";
    bool no_bias = false;
    std::string out;
};

int run_gen(const GenArgs& a) {
    ModelConfig config;
    config.num_layers = a.layers;
    config.num_heads = a.heads;
    config.d_model = a.d_model;
    config.d_ff = a.d_ff;
    config.activation = activation_from_string(a.activation);
    config.includes_bias = !a.no_bias;
    config.validate();

    std::filesystem::create_directories(a.out);
    const std::filesystem::path dir(a.out);
    const Checkpoint pre = make_pretrained(config, a.seed);
    write_checkpoint((dir / "pretrained.mlck").string(), pre);
    for (std::size_t i = 1; i <= a.tasks; ++i) {
        const Checkpoint ft = make_finetune(pre, a.seed + i, a.perturb_scale);
        write_checkpoint((dir / ("ft" + std::to_string(i) + ".mlck")).string(), ft);
    }
    write_batch((dir / "batch.mlck").string(),
                make_batch(a.batch_count, a.seq_len, config.d_model, a.seed + a.tasks + 1),
                config);
    return 0;
}

struct ProtectArgs {
    std::string scheme = "mergelock";
    std::string model, pretrained, out, key;
    std::uint64_t seed = 0;
    double diag_lo = 0.5, diag_hi = 2.0, cond_cap = 1e3, gaussian_std = 0.0;
};

int run_protect(const ProtectArgs& a) {
    SamplingConfig cfg;
    cfg.seed = a.seed;
    cfg.diag_lo = a.diag_lo;
    cfg.diag_hi = a.diag_hi;
    cfg.cond_cap = a.cond_cap;
    cfg.gaussian_std = a.gaussian_std;

    const Checkpoint model = read_checkpoint(a.model);
    ProtectResult result;
    if (scheme_from_string(a.scheme) == Scheme::mergelock) {
        result = protect_mergelock(model, cfg);
    } else {
        if (a.pretrained.empty())
            throw ParameterError("--scheme params requires --pretrained for the matching cost");
        result = protect_params(model, read_checkpoint(a.pretrained), cfg);
    }
    write_checkpoint(a.out, result.model);
    write_key(a.key, result.key);
    return 0;
}

int run_recover(const std::string& model_path, const std::string& key_path,
                const std::string& out_path) {
    const RecoverResult result = recover(read_checkpoint(model_path), read_key(key_path));
    for (const std::string& w : result.warnings)
        print_error(0, w, "warning");
    write_checkpoint(out_path, result.model);
    return 0;
}

struct MergeArgs {
    std::string method = "ta";
    std::string pretrained, out;
    std::vector<std::string> models;
    double lambda = 0.3;
    double trim = 0.2;
};

int run_merge(const MergeArgs& a) {
    std::vector<Checkpoint> models;
    models.reserve(a.models.size());
    for (const std::string& p : a.models) models.push_back(read_checkpoint(p));
    const Checkpoint pre = read_checkpoint(a.pretrained);

    Checkpoint merged;
    switch (merge_method_from_string(a.method)) {
        case MergeMethod::average: merged = weight_average(models); break;
        case MergeMethod::task_arithmetic: merged = task_arithmetic(pre, models, a.lambda); break;
        case MergeMethod::ties: merged = ties_merge(pre, models, a.trim, a.lambda); break;
    }
    write_checkpoint(a.out, merged);
    return 0;
}

struct AlignArgs {
    std::string strategy = "kabsch";
    std::string model, target, out, report;
};

int run_align(const AlignArgs& a) {
    const Checkpoint model = read_checkpoint(a.model);
    const Checkpoint target = read_checkpoint(a.target);

    Checkpoint aligned;
    std::vector<AlignEntry> entries;
    if (a.strategy == "kabsch") {
        AlignOutcome out = kabsch_align_model(model, target);
        aligned = std::move(out.model);
        entries = std::move(out.report);
    } else if (a.strategy == "hungarian") {
        MlpAlignOutcome out = hungarian_align_mlp(model, target);
        aligned = std::move(out.model);
        entries = std::move(out.report);
    } else if (a.strategy == "diag") {
        DiagonalAlignOutcome qk = diagonal_align_qk(model, target);
        DiagonalAlignOutcome vo = diagonal_align_vo(qk.model, target);
        aligned = std::move(vo.model);
        entries = std::move(qk.report);
        entries.insert(entries.end(), vo.report.begin(), vo.report.end());
    } else {
        throw ParameterError("unknown alignment strategy: " + a.strategy);
    }
    write_checkpoint(a.out, aligned);
    if (!a.report.empty())
        write_text(a.report, align_report_json(a.strategy, entries).dump() + "\n");
    return 0;
}

int run_distance(const std::string& model_path, const std::string& reference_path,
                 const std::string& out_path) {
    AnalysisReport report =
        frobenius_report(read_checkpoint(model_path), read_checkpoint(reference_path));
    report.metadata["model"] = std::filesystem::path(model_path).filename().string();
    report.metadata["reference"] = std::filesystem::path(reference_path).filename().string();
    write_report(out_path, report);
    return 0;
}

struct LmcArgs {
    std::string pretrained, m1, m2, batch, out;
    std::size_t grid = 21;
};

int run_lmc(const LmcArgs& a) {
    const Checkpoint pre = read_checkpoint(a.pretrained);
    const LmcCurve curve = lmc_curve(pre, read_checkpoint(a.m1), read_checkpoint(a.m2),
                                     uniform_grid(a.grid), read_batch(a.batch));
    AnalysisReport report;
    report.metadata["loss"] = "functional divergence against both endpoints (no datasets)";
    for (std::size_t i = 0; i < curve.grid.size(); ++i)
        report.rows.push_back({-1, "all", "lmc_loss", true, curve.grid[i], curve.losses[i]});
    write_report(a.out, report);
    return 0;
}

struct EquivArgs {
    std::string a, b, batch;
    double tol = 1e-6;
};

int run_equiv(const EquivArgs& args) {
    const double dev =
        max_output_deviation(read_checkpoint(args.a), read_checkpoint(args.b),
                             read_batch(args.batch));
    const nlohmann::json j = {{"deviation", dev}, {"equivalent", dev <= args.tol},
                              {"tol", args.tol}};
    std::cout << j.dump() << "\n";
    if (dev <= args.tol) return 0;
    print_error(3, "models are not functionally equivalent on this batch",
                "deviation " + std::to_string(dev));
    return 3;
}

int run_eval_suite_cmd(std::uint64_t seed, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const EvalSummary summary = run_eval_suite(seed);
    write_text((std::filesystem::path(out_dir) / "summary.json").string(),
               summary.to_json().dump() + "\n");
    for (const CriterionResult& c : summary.criteria)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.id << " " << c.name << ": " << c.detail
                  << "\n";
    return summary.all_pass() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer checkpoint protection, merging, alignment and analysis"};
    app.require_subcommand(1);
    int result = 0;

    GenArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen", "generate a synthetic model family");
    cmd_gen->add_option("--seed", gen.seed, "rng seed")->required();
    cmd_gen->add_option("--layers", gen.layers);
    cmd_gen->add_option("--heads", gen.heads);
    cmd_gen->add_option("--d-model", gen.d_model);
    cmd_gen->add_option("--d-ff", gen.d_ff);
    cmd_gen->add_option("--tasks", gen.tasks, "number of synthetic fine-tunes");
    cmd_gen->add_option("--perturb-scale", gen.perturb_scale);
    cmd_gen->add_option("--batch-count", gen.batch_count);
    cmd_gen->add_option("--seq-len", gen.seq_len);
    cmd_gen->add_option("--activation", gen.activation)
        ->check(CLI::IsMember({"relu", "gelu", "tanh"}));
    cmd_gen->add_flag("--no-bias", gen.no_bias);
    cmd_gen->add_option("--out", gen.out, "output directory")->required();
    cmd_gen->callback([&] { result = run_gen(gen); });

    ProtectArgs protect_args;
    CLI::App* cmd_protect = app.add_subcommand("protect", "apply a protection scheme");
    cmd_protect->add_option("--scheme", protect_args.scheme)
        ->check(CLI::IsMember({"mergelock", "params"}));
    cmd_protect->add_option("--model", protect_args.model)->required();
    cmd_protect->add_option("--pretrained", protect_args.pretrained,
                            "required for --scheme params, ignored otherwise");
    cmd_protect->add_option("--seed", protect_args.seed)->required();
    cmd_protect->add_option("--out", protect_args.out)->required();
    cmd_protect->add_option("--key", protect_args.key)->required();
    cmd_protect->add_option("--diag-lo", protect_args.diag_lo);
    cmd_protect->add_option("--diag-hi", protect_args.diag_hi);
    cmd_protect->add_option("--cond-cap", protect_args.cond_cap);
    cmd_protect->add_option("--gaussian-std", protect_args.gaussian_std,
                            "0 = default 1/sqrt(d_head)");
    cmd_protect->callback([&] { result = run_protect(protect_args); });

    std::string rec_model, rec_key, rec_out;
    CLI::App* cmd_recover = app.add_subcommand("recover", "restore a protected checkpoint");
    cmd_recover->add_option("--model", rec_model)->required();
    cmd_recover->add_option("--key", rec_key)->required();
    cmd_recover->add_option("--out", rec_out)->required();
    cmd_recover->callback([&] { result = run_recover(rec_model, rec_key, rec_out); });

    MergeArgs merge_args;
    CLI::App* cmd_merge = app.add_subcommand("merge", "merge checkpoints");
    cmd_merge->add_option("--method", merge_args.method)
        ->check(CLI::IsMember({"avg", "ta", "ties"}));
    cmd_merge->add_option("--pretrained", merge_args.pretrained)->required();
    cmd_merge->add_option("--models", merge_args.models)->required()->expected(-1);
    cmd_merge->add_option("--lambda", merge_args.lambda);
    cmd_merge->add_option("--trim", merge_args.trim);
    cmd_merge->add_option("--out", merge_args.out)->required();
    cmd_merge->callback([&] { result = run_merge(merge_args); });

    AlignArgs align_args;
    CLI::App* cmd_align = app.add_subcommand("align", "align a model toward a target");
    cmd_align->add_option("--strategy", align_args.strategy)
        ->check(CLI::IsMember({"kabsch", "hungarian", "diag"}));
    cmd_align->add_option("--model", align_args.model)->required();
    cmd_align->add_option("--target", align_args.target)->required();
    cmd_align->add_option("--out", align_args.out)->required();
    cmd_align->add_option("--report", align_args.report, "alignment residual report (json)");
    cmd_align->callback([&] { result = run_align(align_args); });

    std::string dist_model, dist_reference, dist_out;
    CLI::App* cmd_distance = app.add_subcommand("distance", "per-branch frobenius distances");
    cmd_distance->add_option("--model", dist_model)->required();
    cmd_distance->add_option("--reference", dist_reference)->required();
    cmd_distance->add_option("--out", dist_out, ".csv or .json")->required();
    cmd_distance->callback([&] { result = run_distance(dist_model, dist_reference, dist_out); });

    LmcArgs lmc_args;
    CLI::App* cmd_lmc = app.add_subcommand("lmc", "linear mode connectivity curve");
    cmd_lmc->add_option("--pretrained", lmc_args.pretrained)->required();
    cmd_lmc->add_option("--m1", lmc_args.m1)->required();
    cmd_lmc->add_option("--m2", lmc_args.m2)->required();
    cmd_lmc->add_option("--batch", lmc_args.batch)->required();
    cmd_lmc->add_option("--grid", lmc_args.grid, "number of interpolation points");
    cmd_lmc->add_option("--out", lmc_args.out)->required();
    cmd_lmc->callback([&] { result = run_lmc(lmc_args); });

    EquivArgs equiv_args;
    CLI::App* cmd_equiv = app.add_subcommand("equiv", "check functional equivalence");
    cmd_equiv->add_option("--a", equiv_args.a)->required();
    cmd_equiv->add_option("--b", equiv_args.b)->required();
    cmd_equiv->add_option("--batch", equiv_args.batch)->required();
    cmd_equiv->add_option("--tol", equiv_args.tol);
    cmd_equiv->callback([&] { result = run_equiv(equiv_args); });

    std::uint64_t eval_seed = 0;
    std::string eval_out;
    CLI::App* cmd_eval = app.add_subcommand("eval-suite", "run the full acceptance matrix");
    cmd_eval->add_option("--seed", eval_seed)->required();
    cmd_eval->add_option("--out", eval_out, "output directory for summary.json")->required();
    cmd_eval->callback([&] { result = run_eval_suite_cmd(eval_seed, eval_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error(1, e.what(), "usage");
        return 1;
    } catch (const Error& e) {
        const int code = exit_code_for(e.code());
        print_error(code, e.what(), e.context());
        return code;
    } catch (const std::exception& e) {
        print_error(4, e.what(), "unexpected");
        return 4;
    }
    return result;
}
