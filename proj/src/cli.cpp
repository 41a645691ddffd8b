#include "moepath/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "moepath/calibration.hpp"
#include "moepath/error.hpp"
#include "moepath/graph_io.hpp"
#include "moepath/harness.hpp"
#include "moepath/model_io.hpp"
#include "moepath/planner.hpp"
#include "moepath/pruner.hpp"

namespace moepath {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineManifest::check_inputs_exist() const {
    for (const auto& [name, path] : inputs) {
        if (!fs::exists(path)) {
            throw FormatError("manifest input \"" + name + "\" does not exist: " + path);
        }
    }
}

json PipelineManifest::to_json() const {
    return {{"stage", stage},
            {"inputs", inputs},
            {"outputs", outputs},
            {"seeds", seeds},
            {"tool_version", tool_version}};
}

PipelineManifest PipelineManifest::from_json(const json& j) {
    try {
        PipelineManifest m;
        m.stage = j.at("stage").get<std::string>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        m.tool_version = j.at("tool_version").get<std::string>();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("pipeline manifest: ") + e.what());
    }
}

std::size_t resolve_jobs(int flag_value) {
    if (flag_value > 0) return static_cast<std::size_t>(flag_value);
    if (const char* env = std::getenv("MOE_PATHFINDER_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::vector<std::size_t> parse_index_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw UsageError("bad integer \"" + item + "\" in list \"" + s + "\"");
        }
    }
    return out;
}

std::set<ExpertId> parse_outliers(const std::string& s) {
    std::set<ExpertId> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw UsageError("outlier \"" + item + "\" must be layer:expert");
        }
        try {
            out.emplace(std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1)));
        } catch (const std::exception&) {
            throw UsageError("outlier \"" + item + "\" must be layer:expert");
        }
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw FormatError("write failed: " + path.string());
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_manifest(const fs::path& dir, const PipelineManifest& m) {
    write_json_file(dir / "manifest.json", m.to_json());
}

std::vector<SampleBatch> select_samples(const std::vector<SampleBatch>& all,
                                        const std::vector<std::size_t>& ids) {
    std::vector<SampleBatch> out;
    for (auto id : ids) {
        if (id >= all.size()) {
            throw FormatError("sample id " + std::to_string(id) + " out of range (" +
                              std::to_string(all.size()) + " samples)");
        }
        out.push_back(all[id]);
    }
    return out;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

struct Options {
    // shared
    std::string out, model, data, graphs, paths, calibration, mask, config;
    std::uint64_t seed = 0;
    int jobs = 0;
    // gen-model / gen-data
    std::size_t layers = 0, experts = 0, dim = 0, topk = 0, samples = 0, tokens = 0;
    std::string nonlinearity = "tanh";
    // calibrate
    std::size_t k = 0, max_iters = 100;
    // plan / prune
    std::size_t m = 0, m_max = kDefaultMaxM;
    double target_retention = 0.0;
    bool bruteforce = false, no_importance = false, no_transition = false;
    // heatmap
    std::string outliers;
    // compare
    std::string model_seeds, k_sweep;
    std::size_t trials = 0;
    bool planted = false;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"moe-pathfinder: trajectory-based expert pruning for toy MoE models", "moe-pathfinder"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Options o;

    auto* gen_model_cmd = app.add_subcommand("gen-model", "Generate a random MoE model");
    gen_model_cmd->add_option("--layers", o.layers, "Number of MoE layers (>= 2)")->required();
    gen_model_cmd->add_option("--experts", o.experts, "Experts per layer")->required();
    gen_model_cmd->add_option("--dim", o.dim, "Hidden dimension")->required();
    gen_model_cmd->add_option("--topk", o.topk, "Experts activated per token")->required();
    gen_model_cmd->add_option("--nonlinearity", o.nonlinearity, "none|tanh")
        ->check(CLI::IsMember({"none", "tanh"}));
    gen_model_cmd->add_option("--seed", o.seed, "PRNG seed")->required();
    gen_model_cmd->add_option("-o,--out", o.out, "Output model directory")->required();

    auto* gen_data_cmd = app.add_subcommand("gen-data", "Generate random token samples");
    gen_data_cmd->add_option("--dim", o.dim, "Token width")->required();
    gen_data_cmd->add_option("--samples", o.samples, "Number of samples")->required();
    gen_data_cmd->add_option("--tokens", o.tokens, "Tokens per sample")->required();
    gen_data_cmd->add_option("--seed", o.seed, "PRNG seed")->required();
    gen_data_cmd->add_option("-o,--out", o.out, "Output data directory")->required();

    auto* calibrate_cmd = app.add_subcommand("calibrate", "Pick K representative samples by k-means");
    calibrate_cmd->add_option("--data", o.data, "Data directory")->required();
    calibrate_cmd->add_option("--k", o.k, "Number of clusters")->required();
    calibrate_cmd->add_option("--seed", o.seed, "PRNG seed")->required();
    calibrate_cmd->add_option("--max-iters", o.max_iters, "Lloyd iteration cap");
    calibrate_cmd->add_option("-o,--out", o.out, "Output calibration JSON")->required();

    auto* score_cmd = app.add_subcommand("score", "Score experts and transitions per sample");
    score_cmd->add_option("--model", o.model, "Model directory")->required();
    score_cmd->add_option("--data", o.data, "Data directory")->required();
    score_cmd->add_option("--calibration", o.calibration, "Calibration JSON (default: all samples)");
    score_cmd->add_option("--jobs", o.jobs, "Parallel samples");
    score_cmd->add_option("-o,--out", o.out, "Output graph directory")->required();

    auto* plan_cmd = app.add_subcommand("plan", "Top-m expert paths per sample graph");
    plan_cmd->add_option("--graphs", o.graphs, "Graph directory")->required();
    plan_cmd->add_option("--m", o.m, "Paths per sample")->required();
    plan_cmd->add_flag("--bruteforce", o.bruteforce, "Use exhaustive enumeration instead of the DP");
    plan_cmd->add_flag("--no-importance", o.no_importance, "Ablate expert importance");
    plan_cmd->add_flag("--no-transition", o.no_transition, "Ablate transition intensity");
    plan_cmd->add_option("--jobs", o.jobs, "Parallel samples");
    plan_cmd->add_option("-o,--out", o.out, "Output pathset directory")->required();

    auto* prune_cmd = app.add_subcommand("prune", "Build the retention mask and pruned model");
    prune_cmd->add_option("--model", o.model, "Model directory (materializes the pruned model)");
    auto* graphs_opt = prune_cmd->add_option("--graphs", o.graphs, "Graph directory");
    auto* paths_opt = prune_cmd->add_option("--paths", o.paths, "Pathset directory from `plan`");
    auto* m_opt = prune_cmd->add_option("--m", o.m, "Fixed paths per sample");
    auto* target_opt = prune_cmd->add_option("--target-retention", o.target_retention,
                                             "Fraction of experts to keep, in (0, 1]");
    prune_cmd->add_option("--m-max", o.m_max, "Largest m tried by the target search");
    prune_cmd->add_option("--jobs", o.jobs, "Parallel samples");
    prune_cmd->add_option("-o,--out", o.out, "Output directory")->required();
    m_opt->excludes(target_opt);
    target_opt->excludes(m_opt);
    graphs_opt->excludes(paths_opt);
    paths_opt->excludes(graphs_opt);

    auto* eval_cmd = app.add_subcommand("eval", "Final-layer reconstruction error of a mask");
    eval_cmd->add_option("--model", o.model, "Model directory")->required();
    eval_cmd->add_option("--mask", o.mask, "Mask JSON")->required();
    eval_cmd->add_option("--data", o.data, "Evaluation data directory")->required();
    eval_cmd->add_option("--jobs", o.jobs, "Parallel samples");
    eval_cmd->add_option("-o,--out", o.out, "Output JSON")->required();

    auto* heatmap_cmd = app.add_subcommand("heatmap", "Expert selection-frequency CSV");
    heatmap_cmd->add_option("--paths", o.paths, "Pathset directory")->required();
    heatmap_cmd->add_option("--experts", o.experts, "Experts per layer")->required();
    heatmap_cmd->add_option("--outliers", o.outliers, "layer:expert,... set to the maximum count");
    heatmap_cmd->add_option("-o,--out", o.out, "Output CSV")->required();

    auto* compare_cmd = app.add_subcommand("compare", "Pathfinder vs. random masks over model seeds");
    compare_cmd->add_option("--config", o.config, "Experiment config JSON (defaults otherwise)");
    compare_cmd->add_option("--model-seeds", o.model_seeds, "Comma-separated model seeds");
    auto* cmp_m = compare_cmd->add_option("--m", o.m, "Fixed paths per sample");
    auto* cmp_target = compare_cmd->add_option("--target-retention", o.target_retention, "Retention target");
    compare_cmd->add_option("--k", o.k, "Calibration clusters");
    compare_cmd->add_option("--trials", o.trials, "Random masks per seed");
    compare_cmd->add_flag("--planted", o.planted, "Use planted-expert models");
    compare_cmd->add_flag("--no-importance", o.no_importance, "Ablate expert importance");
    compare_cmd->add_flag("--no-transition", o.no_transition, "Ablate transition intensity");
    compare_cmd->add_option("--k-sweep", o.k_sweep, "Comma-separated K values to sweep");
    compare_cmd->add_option("--jobs", o.jobs, "Parallel samples");
    compare_cmd->add_option("-o,--out", o.out, "Output directory")->required();
    cmp_m->excludes(cmp_target);
    cmp_target->excludes(cmp_m);

    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "DP vs. brute-force oracle suite");
    o.trials = 100;
    selfcheck_cmd->add_option("--trials", o.trials, "Random graphs to check");
    selfcheck_cmd->add_option("--seed", o.seed, "PRNG seed")->required();

    std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(reversed.begin(), reversed.end());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::size_t jobs = resolve_jobs(o.jobs);

        if (gen_model_cmd->parsed()) {
            MoEConfig cfg{o.layers, o.experts, o.dim, o.topk, parse_nonlinearity(o.nonlinearity), {}};
            try {
                cfg.validate();
            } catch (const ArgumentError& e) {
                throw UsageError(e.what());
            }
            save_model(o.out, gen_model(cfg, o.seed));
            PipelineManifest m{"gen-model", {}, {{"model", o.out}}, {{"seed", o.seed}}};
            write_manifest(o.out, m);
            out << "wrote model to " << o.out << '\n';
        } else if (gen_data_cmd->parsed()) {
            if (o.dim == 0 || o.tokens == 0) throw UsageError("--dim and --tokens must be >= 1");
            save_samples(o.out, gen_data(o.dim, o.samples, o.tokens, o.seed));
            PipelineManifest m{"gen-data", {}, {{"data", o.out}}, {{"seed", o.seed}}};
            write_manifest(o.out, m);
            out << "wrote " << o.samples << " samples to " << o.out << '\n';
        } else if (calibrate_cmd->parsed()) {
            const auto samples = load_samples(o.data);
            const auto calib = calibrate(samples, o.k, o.seed, o.max_iters);
            ensure_parent(o.out);
            write_json_file(o.out, to_json(calib));
            out << "selected " << calib.sample_ids.size() << " calibration samples\n";
        } else if (score_cmd->parsed()) {
            const auto model = load_model(o.model);
            const auto samples = load_samples(o.data);
            std::vector<std::size_t> ids = iota_ids(samples.size());
            PipelineManifest m{"score", {{"model", o.model}, {"data", o.data}}, {{"graphs", o.out}}, {}};
            if (!o.calibration.empty()) {
                const auto calib = calibration_from_json(read_json_file(o.calibration));
                ids = calib.sample_ids;
                m.inputs["calibration"] = o.calibration;
                m.seeds["calibration"] = calib.seed;
            }
            const auto graphs = score_all(model, select_samples(samples, ids), jobs);
            save_graph_set(o.out, graphs, ids);
            write_manifest(o.out, m);
            out << "scored " << graphs.size() << " samples\n";
        } else if (plan_cmd->parsed()) {
            if (o.m < 1) throw UsageError("--m must be >= 1");
            if (o.no_importance && o.no_transition) {
                throw UsageError("--no-importance and --no-transition cannot both be set");
            }
            auto set = load_graph_set(o.graphs);
            for (auto& g : set.graphs) {
                g = ablate_graph(g, {!o.no_importance, !o.no_transition});
            }
            std::vector<PathSet> pathsets;
            if (o.bruteforce) {
                for (const auto& g : set.graphs) pathsets.push_back(top_m_paths_bruteforce(g, o.m));
            } else {
                pathsets = plan_all(set.graphs, o.m, jobs);
            }
            save_pathsets(o.out, pathsets);
            write_manifest(o.out, PipelineManifest{"plan", {{"graphs", o.graphs}}, {{"pathsets", o.out}}, {}});
            out << "planned " << pathsets.size() << " samples; first pathset has "
                << pathsets.front().paths.size() << " paths\n";
        } else if (prune_cmd->parsed()) {
            const bool have_m = m_opt->count() > 0;
            const bool have_target = target_opt->count() > 0;
            PruneResult result;
            PipelineManifest manifest{"prune", {}, {}, {}};
            if (!o.paths.empty()) {
                if (have_m || have_target) {
                    throw UsageError("--paths already fixes m; --m/--target-retention need --graphs");
                }
                const auto pathsets = load_pathsets(o.paths);
                std::size_t ne = 0;
                if (!o.model.empty()) {
                    ne = load_model(o.model).config.experts_per_layer;
                } else if (!o.graphs.empty()) {
                    ne = load_graph_set(o.graphs).graphs.front().num_experts;
                } else {
                    throw UsageError("--paths needs --model to know the expert count");
                }
                std::vector<ExpertSets> sets;
                for (const auto& ps : pathsets) sets.push_back(experts_from_paths(ps));
                result.mask = union_masks(sets, ne);
                result.report = make_report(result.mask, pathsets.front().m, pathsets.size());
                manifest.inputs["pathsets"] = o.paths;
            } else if (!o.graphs.empty()) {
                if (have_m == have_target) {
                    throw UsageError("--graphs needs exactly one of --m or --target-retention");
                }
                const auto set = load_graph_set(o.graphs);
                if (have_m) {
                    if (o.m < 1) throw UsageError("--m must be >= 1");
                    result = prune_with_m(set.graphs, o.m, jobs);
                } else {
                    if (!(o.target_retention > 0.0 && o.target_retention <= 1.0)) {
                        throw UsageError("--target-retention must be in (0, 1]");
                    }
                    result = target_sparsity_search(set.graphs, o.target_retention, o.m_max, jobs);
                }
                manifest.inputs["graphs"] = o.graphs;
            } else {
                throw UsageError("prune needs --graphs or --paths");
            }
            fs::create_directories(o.out);
            const fs::path out_dir(o.out);
            write_json_file(out_dir / "mask.json", to_json(result.mask));
            write_json_file(out_dir / "report.json", to_json(result.report));
            manifest.outputs["mask"] = (out_dir / "mask.json").string();
            manifest.outputs["report"] = (out_dir / "report.json").string();
            if (!o.model.empty()) {
                const auto pruned = apply_mask(load_model(o.model), result.mask);
                save_model(out_dir / "pruned", pruned.model);
                write_json_file(out_dir / "pruned" / "remap.json", to_json(pruned.remap));
                manifest.inputs["model"] = o.model;
                manifest.outputs["pruned_model"] = (out_dir / "pruned").string();
            }
            write_manifest(out_dir, manifest);
            out << "retained " << result.report.retained_total << " experts (fraction "
                << format_double(result.report.retention_fraction) << ", m=" << result.report.m_used
                << ")\n";
        } else if (eval_cmd->parsed()) {
            const auto model = load_model(o.model);
            const auto mask = mask_from_json(read_json_file(o.mask));
            const auto samples = load_samples(o.data);
            const auto r = evaluate_mask(model, mask, samples, jobs);
            ensure_parent(o.out);
            write_json_file(o.out, json{{"final_error", r.final_error},
                                        {"layer_errors", r.layer_errors},
                                        {"retention_fraction", r.retention_fraction},
                                        {"samples", samples.size()}});
            out << "final-layer error " << format_double(r.final_error) << '\n';
        } else if (heatmap_cmd->parsed()) {
            const auto pathsets = load_pathsets(o.paths);
            const auto outliers = parse_outliers(o.outliers);
            const auto counts = selection_frequency(pathsets, o.experts, &outliers);
            ensure_parent(o.out);
            export_heatmap(counts, o.out);
            out << "wrote heatmap " << o.out << '\n';
        } else if (compare_cmd->parsed()) {
            ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{}
                                                    : experiment_from_json(read_json_file(o.config));
            if (!o.model_seeds.empty()) {
                cfg.model_seeds.clear();
                for (auto s : parse_index_list(o.model_seeds)) cfg.model_seeds.push_back(s);
            }
            if (cmp_m->count() > 0) cfg.m = o.m;
            if (cmp_target->count() > 0) {
                cfg.m.reset();
                cfg.target_retention = o.target_retention;
            }
            if (o.k > 0) cfg.k = o.k;
            if (o.trials > 0 && compare_cmd->get_option("--trials")->count() > 0) cfg.random_trials = o.trials;
            if (o.planted) cfg.planted = true;
            if (o.no_importance) cfg.ablation.use_importance = false;
            if (o.no_transition) cfg.ablation.use_transition = false;
            cfg.jobs = jobs;
            try {
                cfg.validate();
            } catch (const ArgumentError& e) {
                throw UsageError(e.what());
            }
            const auto report = run_comparison(cfg);
            const fs::path out_dir(o.out);
            fs::create_directories(out_dir);
            write_text(out_dir / "comparison.csv", comparison_csv(report));
            write_json_file(out_dir / "comparison.json", to_json(report));
            PipelineManifest manifest{"compare", {}, {{"comparison_csv", (out_dir / "comparison.csv").string()},
                                                      {"comparison_json", (out_dir / "comparison.json").string()}},
                                      {{"data_seed", cfg.data_seed}, {"random_seed", cfg.random_seed}}};
            for (std::size_t i = 0; i < cfg.model_seeds.size(); ++i) {
                manifest.seeds["model_seed_" + std::to_string(i)] = cfg.model_seeds[i];
            }
            if (!o.config.empty()) manifest.inputs["config"] = o.config;
            if (!o.k_sweep.empty()) {
                const auto points = run_k_sweep(cfg, parse_index_list(o.k_sweep));
                std::ostringstream csv;
                csv << "K,mean_pathfinder_error,mean_retention,wins\n";
                for (const auto& p : points) {
                    csv << p.k << ',' << format_double(p.mean_pathfinder_error) << ','
                        << format_double(p.mean_retention) << ',' << p.wins << '\n';
                }
                write_text(out_dir / "ksweep.csv", csv.str());
                manifest.outputs["ksweep_csv"] = (out_dir / "ksweep.csv").string();
            }
            json run = manifest.to_json();
            run["experiment"] = to_json(cfg);
            write_json_file(out_dir / "manifest.json", run);
            out << "pathfinder wins " << report.wins << "/" << report.seeds.size() << '\n';
        } else if (selfcheck_cmd->parsed()) {
            const auto summary = run_oracle_suite(o.trials, o.seed);
            out << "oracle: " << summary.passed << "/" << summary.trials << '\n';
            if (summary.passed != summary.trials) {
                err << "first mismatch: " << summary.first_failure << '\n';
                return kExitInvariant;
            }
        }
        return kExitOk;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvariantError& e) {
        err << "invariant violation: " << e.what() << '\n';
        return kExitInvariant;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

}  // namespace moepath
