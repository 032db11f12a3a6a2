#pragma once

// Experiment drivers above the harness: the ablation grid, the sample-size
// scaling sweep, and the JSON/CSV report writers the CLI emits.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dastgcn/classifiers.hpp"
#include "dastgcn/io.hpp"
#include "dastgcn/model.hpp"
#include "dastgcn/training.hpp"

namespace dastgcn {

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

// The full model and its four ablations, derived from one base config.
inline std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base) {
    std::vector<std::pair<std::string, ModelConfig>> out;
    out.emplace_back("dastgcn", base);
    ModelConfig no_tlc = base;
    no_tlc.use_tlc = false;
    out.emplace_back("no_tlc", no_tlc);
    ModelConfig m1 = base;
    m1.graph_count = 1;
    out.emplace_back("m1", m1);
    ModelConfig undirected = base;
    undirected.adjacency = AdjacencyMode::adaptive_undirected;
    out.emplace_back("undirected", undirected);
    ModelConfig corr = base;
    corr.adjacency = AdjacencyMode::fixed_correlation;
    corr.graph_count = 1;
    out.emplace_back("corr", corr);
    return out;
}

inline ModelConfig variant_config(const ModelConfig& base, const std::string& name) {
    for (auto& [n, cfg] : ablation_variants(base))
        if (n == name) return cfg;
    throw ConfigError("unknown model variant '" + name + "'");
}

// ---------------------------------------------------------------------------
// scaling sweep
// ---------------------------------------------------------------------------

struct ScaleRow {
    int size = 0;  // samples per class
    std::string model;
    double acc_mean = 0.0;
    double acc_sd = 0.0;
};

// Stratified subsample of `per_class` samples per class, seeded per size.
inline Dataset subsample_dataset(const Dataset& ds, int per_class, std::uint64_t seed) {
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        by_class[ds.samples[i].label].push_back(static_cast<int>(i));
    for (const auto& [cls, idx] : by_class)
        if (static_cast<int>(idx.size()) < per_class)
            throw ContractError("subsample: need " + std::to_string(per_class) + " of class " +
                                std::to_string(cls) + " but only " + std::to_string(idx.size()) +
                                " exist (short by " +
                                std::to_string(per_class - static_cast<int>(idx.size())) + ")");
    std::vector<int> picked;
    for (auto& [cls, idx] : by_class) {
        RngStream rng(seed, "subsample.class" + std::to_string(cls));
        rng.shuffle(idx);
        picked.insert(picked.end(), idx.begin(), idx.begin() + per_class);
    }
    std::sort(picked.begin(), picked.end());
    Dataset sub;
    sub.manifest = ds.manifest;
    sub.manifest.samples.clear();
    for (int i : picked) {
        sub.manifest.samples.push_back(ds.manifest.samples[static_cast<std::size_t>(i)]);
        sub.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
    }
    return sub;
}

// Runs full cross-validation per (size, model) cell. Model names are the
// ablation variant names plus "linear" for the correlation baseline.
inline std::vector<ScaleRow> scaling_experiment(const Dataset& ds,
                                                const std::vector<std::string>& models,
                                                const ModelConfig& base, const std::vector<int>& sizes,
                                                const TrainConfig& tc, int workers = 1) {
    std::vector<ScaleRow> rows;
    for (int size : sizes) {
        const Dataset sub = subsample_dataset(ds, size, tc.seed + static_cast<std::uint64_t>(size));
        for (const std::string& model : models) {
            TrainReport report;
            if (model == "linear")
                report = train_linear_baseline(sub, tc, workers);
            else
                report = train_model(sub, variant_config(base, model), tc, workers);
            const auto [mean, sd] = mean_sd(report.fold_accuracies());
            rows.push_back({size, model, mean, sd});
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// report writers
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::string opt_csv(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }
}  // namespace detail

inline nlohmann::json metrics_json(const Metrics& m) {
    nlohmann::json j;
    j["tp"] = m.tp;
    j["tn"] = m.tn;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["accuracy"] = detail::opt_json(m.accuracy());
    j["sensitivity"] = detail::opt_json(m.sensitivity());
    j["specificity"] = detail::opt_json(m.specificity());
    return j;
}

inline nlohmann::json train_report_json(const TrainReport& report) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : report.folds) {
        nlohmann::json jf;
        jf["fold"] = f.fold;
        jf["failed"] = f.failed;
        if (f.failed) jf["diagnostic"] = f.diagnostic;
        jf["metrics"] = metrics_json(f.metrics);
        jf["loss_curve"] = f.loss_curve;
        jf["lr_curve"] = f.lr_curve;
        folds.push_back(std::move(jf));
    }
    std::vector<double> acc, sens, spec;
    int failed = 0;
    for (const auto& f : report.folds) {
        if (f.failed) {
            ++failed;
            continue;
        }
        if (auto v = f.metrics.accuracy()) acc.push_back(*v);
        if (auto v = f.metrics.sensitivity()) sens.push_back(*v);
        if (auto v = f.metrics.specificity()) spec.push_back(*v);
    }
    const auto [am, as] = mean_sd(acc);
    const auto [sm, ss] = mean_sd(sens);
    const auto [pm, ps] = mean_sd(spec);
    nlohmann::json j;
    j["folds"] = std::move(folds);
    j["summary"] = {{"accuracy_mean", am},    {"accuracy_sd", as},    {"sensitivity_mean", sm},
                    {"sensitivity_sd", ss},   {"specificity_mean", pm}, {"specificity_sd", ps},
                    {"folds_failed", failed}};
    return j;
}

inline void write_metrics_csv(const std::filesystem::path& path, const TrainReport& report) {
    std::string out = "fold,accuracy,sensitivity,specificity,tp,tn,fp,fn\n";
    std::vector<double> acc, sens, spec;
    for (const auto& f : report.folds) {
        out += std::to_string(f.fold) + ",";
        if (f.failed) {
            out += "FAILED,FAILED,FAILED,0,0,0,0\n";
            continue;
        }
        const Metrics& m = f.metrics;
        out += detail::opt_csv(m.accuracy()) + "," + detail::opt_csv(m.sensitivity()) + "," +
               detail::opt_csv(m.specificity()) + "," + std::to_string(m.tp) + "," +
               std::to_string(m.tn) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn) + "\n";
        if (auto v = m.accuracy()) acc.push_back(*v);
        if (auto v = m.sensitivity()) sens.push_back(*v);
        if (auto v = m.specificity()) spec.push_back(*v);
    }
    const auto [am, as] = mean_sd(acc);
    const auto [sm, ss] = mean_sd(sens);
    const auto [pm, ps] = mean_sd(spec);
    out += "mean," + format_double(am) + "," + format_double(sm) + "," + format_double(pm) + ",,,,\n";
    out += "sd," + format_double(as) + "," + format_double(ss) + "," + format_double(ps) + ",,,,\n";
    write_text_file(path, out);
}

inline void write_loss_curve(const std::filesystem::path& path, const FoldResult& fold) {
    std::string out = "epoch,loss,lr\n";
    for (std::size_t e = 0; e < fold.loss_curve.size(); ++e)
        out += std::to_string(e) + "," + format_double(fold.loss_curve[e]) + "," +
               format_double(fold.lr_curve[e]) + "\n";
    write_text_file(path, out);
}

inline void write_fold_artifacts(const std::filesystem::path& dir, const TrainReport& report) {
    for (const auto& f : report.folds) {
        write_loss_curve(dir / ("losscurve_fold" + std::to_string(f.fold) + ".csv"), f);
        for (std::size_t g = 0; g < f.adjacency_snapshots.size(); ++g)
            write_matrix_csv(dir / ("adjacency_fold" + std::to_string(f.fold) + "_graph" +
                                    std::to_string(g) + ".csv"),
                             f.adjacency_snapshots[g]);
    }
}

inline void write_scale_csv(const std::filesystem::path& path, const std::vector<ScaleRow>& rows) {
    std::string out = "size,model,acc_mean,acc_sd\n";
    for (const auto& r : rows)
        out += std::to_string(r.size) + "," + r.model + "," + format_double(r.acc_mean) + "," +
               format_double(r.acc_sd) + "\n";
    write_text_file(path, out);
}

}  // namespace dastgcn
