#include "moepath/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "moepath/calibration.hpp"
#include "moepath/error.hpp"
#include "moepath/model_io.hpp"
#include "moepath/parallel.hpp"
#include "moepath/rng.hpp"

namespace moepath {

SampleGraph ablate_graph(const SampleGraph& graph, AblationFlags flags) {
    if (!flags.use_importance && !flags.use_transition) {
        throw ArgumentError("ablation must keep at least one signal");
    }
    SampleGraph out = graph;
    if (!flags.use_importance) {
        for (auto& row : out.log_node) std::fill(row.begin(), row.end(), 0.0);
    }
    if (!flags.use_transition) {
        for (auto& m : out.log_edge) std::fill(m.data().begin(), m.data().end(), 0.0);
    }
    return out;
}

PruneMask random_mask(const MoEConfig& config, double retention_fraction, std::uint64_t seed) {
    if (!(retention_fraction > 0.0 && retention_fraction <= 1.0)) {
        throw ArgumentError("retention fraction must be in (0, 1]");
    }
    const std::size_t ne = config.experts_per_layer;
    auto per_layer = static_cast<std::size_t>(std::ceil(retention_fraction * static_cast<double>(ne) - 1e-9));
    per_layer = std::clamp<std::size_t>(per_layer, 1, ne);

    Rng rng(seed);
    auto mask = PruneMask::all(config.num_layers, ne, false);
    std::vector<std::size_t> idx(ne);
    for (auto& row : mask.keep) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t s = 0; s < per_layer; ++s) {
            const auto pick = s + static_cast<std::size_t>(rng.below(ne - s));
            std::swap(idx[s], idx[pick]);
            row[idx[s]] = true;
        }
    }
    return mask;
}

EvalResult evaluate_mask(const MoEModel& model, const PruneMask& mask,
                         const std::vector<SampleBatch>& samples, std::size_t jobs) {
    if (samples.empty()) {
        throw ArgumentError("evaluate_mask: no samples");
    }
    const std::size_t L = model.config.num_layers;
    std::vector<std::vector<double>> per_sample(samples.size(), std::vector<double>(L, 0.0));
    parallel_for(samples.size(), jobs, [&](std::size_t n) {
        const auto full = model_forward(model, samples[n]);
        const auto pruned = model_forward(model, samples[n], &mask);
        const double tokens = static_cast<double>(samples[n].tokens.rows());
        for (std::size_t l = 0; l < L; ++l) {
            const auto& a = full.hidden_states[l + 1];
            const auto& b = pruned.hidden_states[l + 1];
            double acc = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) acc += squared_distance(a.row(k), b.row(k));
            per_sample[n][l] = acc / tokens;
        }
    });
    EvalResult r;
    r.layer_errors.assign(L, 0.0);
    for (const auto& s : per_sample) {
        for (std::size_t l = 0; l < L; ++l) r.layer_errors[l] += s[l];
    }
    for (double& e : r.layer_errors) e /= static_cast<double>(samples.size());
    r.final_error = r.layer_errors.back();
    r.retention_fraction = static_cast<double>(mask.retained_total()) /
                           static_cast<double>(mask.num_layers() * mask.num_experts());
    return r;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    Rng r(base);
    const std::uint64_t x = r.next() ^ (a * 0xbf58476d1ce4e5b9ULL);
    Rng r2(x);
    const std::uint64_t y = r2.next() ^ (b * 0x94d049bb133111ebULL);
    return Rng(y).next();
}

std::vector<std::size_t> plant_experts(MoEModel& model, std::uint64_t seed) {
    const auto& cfg = model.config;
    if (cfg.hidden_dim < 2) {
        throw ArgumentError("planted models need hidden_dim >= 2");
    }
    Rng rng(seed);
    std::vector<std::size_t> planted;
    double carry = 1.0;
    for (auto& layer : model.layers) {
        const std::size_t p = static_cast<std::size_t>(rng.below(layer.experts.size()));
        planted.push_back(p);
        for (std::size_t i = 0; i < layer.experts.size(); ++i) {
            auto& w = layer.experts[i];
            auto row0 = w.row(0);
            std::fill(row0.begin(), row0.end(), 0.0);
            row0[0] = 1.0;
            for (std::size_t r = 1; r < w.rows(); ++r) {
                w(r, 0) = 0.0;
                if (i == p) {
                    for (double& v : w.row(r)) v *= 10.0;
                }
            }
            layer.router(i, 0) = i == p ? 10.0 / carry : 0.0;
        }
        if (cfg.nonlinearity == Nonlinearity::tanh) carry = std::tanh(carry);
    }
    return planted;
}

void add_bias_coordinate(std::vector<SampleBatch>& samples) {
    for (auto& s : samples) {
        for (std::size_t k = 0; k < s.tokens.rows(); ++k) s.tokens(k, 0) = 1.0;
    }
}

void ExperimentConfig::validate() const {
    model.validate();
    if (!model.layer_experts.empty()) throw ArgumentError("experiment model must be unpruned");
    if (model_seeds.empty()) throw ArgumentError("no model seeds");
    if (k < 1 || k > pool_samples) throw ArgumentError("K must be in [1, pool_samples]");
    if (eval_samples < 1 || tokens_per_sample < 1) throw ArgumentError("need eval samples and tokens");
    if (m && *m < 1) throw ArgumentError("m must be >= 1");
    if (!m && !(target_retention > 0.0 && target_retention <= 1.0)) {
        throw ArgumentError("target retention must be in (0, 1]");
    }
    if (!ablation.use_importance && !ablation.use_transition) {
        throw ArgumentError("ablation must keep at least one signal");
    }
    if (random_trials < 1) throw ArgumentError("random_trials must be >= 1");
    if (planted && model.hidden_dim < 2) throw ArgumentError("planted models need hidden_dim >= 2");
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"model", config_to_json(c.model)},
            {"model_seeds", c.model_seeds},
            {"data_seed", c.data_seed},
            {"pool_samples", c.pool_samples},
            {"tokens_per_sample", c.tokens_per_sample},
            {"eval_samples", c.eval_samples},
            {"K", c.k},
            {"kmeans_iters", c.kmeans_iters},
            {"m", c.m ? nlohmann::json(*c.m) : nlohmann::json()},
            {"target_retention", c.target_retention},
            {"m_max", c.m_max},
            {"use_importance", c.ablation.use_importance},
            {"use_transition", c.ablation.use_transition},
            {"random_trials", c.random_trials},
            {"random_seed", c.random_seed},
            {"planted", c.planted}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("model")) c.model = config_from_json(j.at("model"));
        c.model_seeds = j.value("model_seeds", c.model_seeds);
        c.data_seed = j.value("data_seed", c.data_seed);
        c.pool_samples = j.value("pool_samples", c.pool_samples);
        c.tokens_per_sample = j.value("tokens_per_sample", c.tokens_per_sample);
        c.eval_samples = j.value("eval_samples", c.eval_samples);
        c.k = j.value("K", c.k);
        c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
        if (j.contains("m") && !j.at("m").is_null()) c.m = j.at("m").get<std::size_t>();
        c.target_retention = j.value("target_retention", c.target_retention);
        c.m_max = j.value("m_max", c.m_max);
        c.ablation.use_importance = j.value("use_importance", true);
        c.ablation.use_transition = j.value("use_transition", true);
        c.random_trials = j.value("random_trials", c.random_trials);
        c.random_seed = j.value("random_seed", c.random_seed);
        c.planted = j.value("planted", false);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    return c;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ArgumentError("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

bool contains_all(const PruneMask& mask, const std::vector<std::size_t>& planted) {
    for (std::size_t l = 0; l < planted.size(); ++l) {
        if (!mask.keep[l][planted[l]]) return false;
    }
    return true;
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedResult out;
    out.model_seed = seed;

    MoEModel model = gen_model(cfg.model, seed);
    auto pool = gen_data(cfg.model.hidden_dim, cfg.pool_samples, cfg.tokens_per_sample,
                         derive_seed(cfg.data_seed, seed, 0));
    auto eval = gen_data(cfg.model.hidden_dim, cfg.eval_samples, cfg.tokens_per_sample,
                         derive_seed(cfg.data_seed, seed, 1));
    if (cfg.planted) {
        out.planted = plant_experts(model, derive_seed(seed, 0x706c616e74ULL));
        add_bias_coordinate(pool);
        add_bias_coordinate(eval);
    }

    const auto calib = calibrate(pool, cfg.k, derive_seed(cfg.data_seed, seed, 2), cfg.kmeans_iters);
    out.calibration_ids = calib.sample_ids;
    std::vector<SampleBatch> chosen;
    for (auto id : calib.sample_ids) chosen.push_back(pool[id]);

    auto graphs = score_all(model, chosen, cfg.jobs);
    if (!cfg.ablation.use_importance || !cfg.ablation.use_transition) {
        for (auto& g : graphs) g = ablate_graph(g, cfg.ablation);
    }

    PruneResult pruned = cfg.m ? prune_with_m(graphs, *cfg.m, cfg.jobs)
                               : target_sparsity_search(graphs, cfg.target_retention, cfg.m_max, cfg.jobs);
    out.mask = pruned.mask;
    out.m_used = pruned.report.m_used;
    out.pathfinder = evaluate_mask(model, pruned.mask, eval, cfg.jobs);

    // Random masks match the pathfinder's retention.
    const double fraction = out.pathfinder.retention_fraction;
    for (std::size_t t = 0; t < cfg.random_trials; ++t) {
        const auto rm = random_mask(cfg.model, fraction, derive_seed(cfg.random_seed, seed, t));
        out.random_errors.push_back(evaluate_mask(model, rm, eval, cfg.jobs).final_error);
        if (cfg.planted && contains_all(rm, out.planted)) ++out.random_recovered;
    }
    out.random_median = median(out.random_errors);
    out.win = out.pathfinder.final_error <= out.random_median;
    if (cfg.planted) out.pathfinder_recovered = contains_all(out.mask, out.planted);
    return out;
}

}  // namespace

ComparisonReport run_comparison(const ExperimentConfig& config) {
    config.validate();
    ComparisonReport report;
    report.config = config;
    for (auto seed : config.model_seeds) {
        report.seeds.push_back(run_seed(config, seed));
        if (report.seeds.back().win) ++report.wins;
    }
    return report;
}

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string comparison_csv(const ComparisonReport& report) {
    std::ostringstream os;
    os << "model_seed,pathfinder_error,random_median,random_min,random_max,retention,m_used,win\n";
    for (const auto& s : report.seeds) {
        const auto [mn, mx] = std::minmax_element(s.random_errors.begin(), s.random_errors.end());
        os << s.model_seed << ',' << format_double(s.pathfinder.final_error) << ','
           << format_double(s.random_median) << ',' << format_double(*mn) << ','
           << format_double(*mx) << ',' << format_double(s.pathfinder.retention_fraction) << ','
           << s.m_used << ',' << (s.win ? 1 : 0) << '\n';
    }
    return os.str();
}

nlohmann::json to_json(const ComparisonReport& report) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : report.seeds) {
        nlohmann::json j = {{"model_seed", s.model_seed},
                            {"pathfinder_error", s.pathfinder.final_error},
                            {"pathfinder_layer_errors", s.pathfinder.layer_errors},
                            {"retention", s.pathfinder.retention_fraction},
                            {"m_used", s.m_used},
                            {"calibration_ids", s.calibration_ids},
                            {"random_errors", s.random_errors},
                            {"random_median", s.random_median},
                            {"win", s.win},
                            {"mask", to_json(s.mask)}};
        if (report.config.planted) {
            j["planted"] = s.planted;
            j["pathfinder_recovered"] = s.pathfinder_recovered;
            j["random_recovered"] = s.random_recovered;
        }
        seeds.push_back(std::move(j));
    }
    return {{"config", to_json(report.config)}, {"seeds", seeds}, {"wins", report.wins}};
}

std::vector<KSweepPoint> run_k_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& ks) {
    std::vector<KSweepPoint> out;
    for (auto k : ks) {
        ExperimentConfig c = config;
        c.k = k;
        const auto report = run_comparison(c);
        KSweepPoint p;
        p.k = k;
        p.wins = report.wins;
        for (const auto& s : report.seeds) {
            p.mean_pathfinder_error += s.pathfinder.final_error;
            p.mean_retention += s.pathfinder.retention_fraction;
        }
        p.mean_pathfinder_error /= static_cast<double>(report.seeds.size());
        p.mean_retention /= static_cast<double>(report.seeds.size());
        out.push_back(p);
    }
    return out;
}

std::string heatmap_csv(const CountMatrix& counts) {
    std::ostringstream os;
    os << "layer,expert,count\n";
    for (std::size_t l = 0; l < counts.size(); ++l) {
        for (std::size_t i = 0; i < counts[l].size(); ++i) {
            os << l << ',' << i << ',' << counts[l][i] << '\n';
        }
    }
    return os.str();
}

void export_heatmap(const CountMatrix& counts, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << heatmap_csv(counts);
    if (!out) throw FormatError("write failed: " + path.string());
}

CountMatrix read_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "layer,expert,count") {
        throw FormatError(path.string() + ": missing heatmap header");
    }
    CountMatrix counts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t l = 0, i = 0, c = 0;
        char comma1 = 0, comma2 = 0;
        std::istringstream ls(line);
        if (!(ls >> l >> comma1 >> i >> comma2 >> c) || comma1 != ',' || comma2 != ',') {
            throw FormatError(path.string() + ": bad heatmap row \"" + line + "\"");
        }
        if (counts.size() <= l) counts.resize(l + 1);
        if (counts[l].size() <= i) counts[l].resize(i + 1, 0);
        counts[l][i] = c;
    }
    return counts;
}

}  // namespace moepath
