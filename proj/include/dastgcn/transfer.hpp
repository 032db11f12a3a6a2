#pragma once

// Graph-structure transfer: export the trained adjacency dictionaries as a
// GraphBundle, seed a fresh model on another dataset from them (optionally
// frozen), and run the paired pretrained-vs-scratch comparison on identical
// folds. With per-tensor init streams, the two arms share every non-factor
// weight bit for bit, so the adjacency initialization is the only contrast.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dastgcn/checkpoint.hpp"
#include "dastgcn/classifiers.hpp"
#include "dastgcn/errors.hpp"
#include "dastgcn/io.hpp"
#include "dastgcn/model.hpp"
#include "dastgcn/training.hpp"

namespace dastgcn {

enum class TransferMode { frozen, finetune };

inline std::string to_string(TransferMode m) { return m == TransferMode::frozen ? "frozen" : "finetune"; }

inline TransferMode transfer_mode_from(const std::string& s) {
    if (s == "frozen") return TransferMode::frozen;
    if (s == "finetune") return TransferMode::finetune;
    throw ConfigError("unknown transfer mode '" + s + "'");
}

struct GraphProvenance {
    std::string source_dataset;
    std::string task_tag;
    std::uint64_t seed = 0;
    std::string config_hash;
};

struct GraphBundle {
    int nodes = 0;
    int embed_dim = 0;
    int graph_count = 0;
    bool tied = false;  // undirected factors store the source dictionary only
    std::vector<AdjacencyFactors> factors;
    GraphProvenance provenance;
};

inline std::string config_hash_hex(const std::string& canonical) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return buf;
}

inline GraphBundle make_graph_bundle(const ModelConfig& cfg, const ModelParams& params,
                                     GraphProvenance provenance) {
    if (cfg.adjacency == AdjacencyMode::fixed_correlation)
        throw ContractError("export_graph: a fixed-correlation model has no trained factors");
    GraphBundle b;
    b.nodes = cfg.nodes;
    b.embed_dim = cfg.embed_dim;
    b.graph_count = cfg.graph_count;
    b.tied = cfg.adjacency == AdjacencyMode::adaptive_undirected;
    for (const auto& g : params.graphs) {
        AdjacencyFactors f;
        f.source = g.source.clone();
        if (!g.tied()) f.target = g.target.clone();
        b.factors.push_back(std::move(f));
    }
    b.provenance = std::move(provenance);
    return b;
}

// ---------------------------------------------------------------------------
// bundle file (DGCP container, kind "graph_bundle")
// ---------------------------------------------------------------------------

inline void save_graph_bundle(const std::filesystem::path& path, const GraphBundle& b) {
    nlohmann::json cfg;
    cfg["nodes"] = b.nodes;
    cfg["embed_dim"] = b.embed_dim;
    cfg["graph_count"] = b.graph_count;
    cfg["tied"] = b.tied;
    cfg["provenance"] = {{"source_dataset", b.provenance.source_dataset},
                         {"task_tag", b.provenance.task_tag},
                         {"seed", b.provenance.seed},
                         {"config_hash", b.provenance.config_hash}};
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (std::size_t m = 0; m < b.factors.size(); ++m) {
        const std::string prefix = "graph" + std::to_string(m) + ".";
        tensors.emplace_back(prefix + "source", b.factors[m].source);
        if (!b.factors[m].tied()) tensors.emplace_back(prefix + "target", b.factors[m].target);
    }
    write_dgcp(path, "graph_bundle", cfg, tensors);
}

inline GraphBundle load_graph_bundle(const std::filesystem::path& path) {
    const DgcpFile file = read_dgcp(path);
    if (file.kind != "graph_bundle")
        throw DataError("file " + path.string() + " holds a '" + file.kind + "', not a graph bundle");
    GraphBundle b;
    b.nodes = file.config.at("nodes").get<int>();
    b.embed_dim = file.config.at("embed_dim").get<int>();
    b.graph_count = file.config.at("graph_count").get<int>();
    b.tied = file.config.at("tied").get<bool>();
    const auto& prov = file.config.at("provenance");
    b.provenance.source_dataset = prov.at("source_dataset").get<std::string>();
    b.provenance.task_tag = prov.at("task_tag").get<std::string>();
    b.provenance.seed = prov.at("seed").get<std::uint64_t>();
    b.provenance.config_hash = prov.at("config_hash").get<std::string>();
    for (int m = 0; m < b.graph_count; ++m) {
        const std::string prefix = "graph" + std::to_string(m) + ".";
        AdjacencyFactors f;
        f.source = file.tensor(prefix + "source").clone();
        if (!b.tied) f.target = file.tensor(prefix + "target").clone();
        b.factors.push_back(std::move(f));
    }
    return b;
}

// Writes bundle.dgcp plus one CSV per realized adjacency for inspection.
inline void export_graph(const ModelConfig& cfg, const ModelParams& params,
                         const GraphProvenance& provenance, const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    const GraphBundle bundle = make_graph_bundle(cfg, params, provenance);
    save_graph_bundle(out_dir / "bundle.dgcp", bundle);
    Tape quiet;
    quiet.set_recording(false);
    for (std::size_t m = 0; m < bundle.factors.size(); ++m)
        write_matrix_csv(out_dir / ("adjacency_graph" + std::to_string(m) + ".csv"),
                         adaptive_adjacency(quiet, bundle.factors[m]));
}

// ---------------------------------------------------------------------------
// pretrained initialization
// ---------------------------------------------------------------------------

// Fresh parameters for `cfg` with the adjacency factors copied from the
// bundle. A layer-wise bundle collapses onto a shared-graph config by taking
// its first factors; a shared bundle broadcasts into a layer-wise config.
// Frozen factors are marked non-trainable and the optimizer skips them.
inline ModelParams init_with_pretrained(const GraphBundle& bundle, const ModelConfig& cfg,
                                        TransferMode mode, std::uint64_t seed) {
    cfg.validate();
    if (cfg.adjacency == AdjacencyMode::fixed_correlation)
        throw ContractError("init_with_pretrained: fixed-correlation models take no factors");
    if (bundle.nodes != cfg.nodes)
        throw TransferError("graph bundle was trained for N=" + std::to_string(bundle.nodes) +
                            ", model is configured for N=" + std::to_string(cfg.nodes));
    if (bundle.embed_dim != cfg.embed_dim)
        throw TransferError("graph bundle has embedding dimension d=" + std::to_string(bundle.embed_dim) +
                            ", model expects d=" + std::to_string(cfg.embed_dim));
    if (bundle.graph_count != cfg.graph_count && bundle.graph_count != 1 && cfg.graph_count != 1)
        throw TransferError("cannot map a bundle of " + std::to_string(bundle.graph_count) +
                            " graphs onto a model with " + std::to_string(cfg.graph_count));
    const bool want_tied = cfg.adjacency == AdjacencyMode::adaptive_undirected;
    if (want_tied && !bundle.tied)
        throw TransferError("directed graph bundle cannot initialize an undirected model");

    ModelParams params = init_model_params(cfg, seed);
    const bool trainable = mode == TransferMode::finetune;
    for (int m = 0; m < cfg.graph_count; ++m) {
        const auto& src = bundle.factors[static_cast<std::size_t>(
            bundle.graph_count == 1 ? 0 : (cfg.graph_count == 1 ? 0 : m))];
        AdjacencyFactors f;
        f.source = src.source.clone();
        f.source.set_requires_grad(trainable);
        if (!want_tied) {
            Tape quiet;
            quiet.set_recording(false);
            f.target = src.tied() ? transpose(quiet, src.source) : src.target.clone();
            f.target.set_requires_grad(trainable);
        }
        params.graphs[static_cast<std::size_t>(m)] = std::move(f);
    }
    return params;
}

struct PretrainedDastFactory {
    ModelConfig config;
    GraphBundle bundle;
    TransferMode mode = TransferMode::frozen;

    std::pair<DastGcnClassifier, std::vector<Tensor>> operator()(const Dataset& ds,
                                                                 const std::vector<int>& /*train_idx*/,
                                                                 std::uint64_t seed) const {
        ModelConfig cfg = config;
        cfg.nodes = ds.nodes();
        cfg.input_channels = ds.manifest.channels;
        ModelParams params = init_with_pretrained(bundle, cfg, mode, seed);
        std::vector<Tensor> inputs;
        inputs.reserve(ds.samples.size());
        for (const auto& s : ds.samples) inputs.push_back(zscore(s.signal));
        return {DastGcnClassifier(std::move(cfg), std::move(params)), std::move(inputs)};
    }
};

// ---------------------------------------------------------------------------
// paired transfer experiment
// ---------------------------------------------------------------------------

struct TransferReport {
    GraphBundle bundle;
    TrainReport pretrained;
    TrainReport scratch;
    std::vector<double> paired_accuracy_diff;  // pretrained - scratch, per fold
    double diff_mean = 0.0;
    double diff_sd = 0.0;
};

// Trains a shared-graph model on the source dataset, then runs target
// cross-validation twice on identical folds and seeds: factors from the
// bundle (frozen by default) versus factors from scratch.
inline TransferReport transfer_experiment(const Dataset& source, const Dataset& target,
                                          ModelConfig model_cfg, const TrainConfig& source_tc,
                                          const TrainConfig& target_tc,
                                          TransferMode mode = TransferMode::frozen, int workers = 1) {
    if (source.nodes() != target.nodes())
        throw TransferError("source has N=" + std::to_string(source.nodes()) + " nodes, target has N=" +
                            std::to_string(target.nodes()));
    model_cfg.graph_count = 1;  // shared graph transfers across temporal resolutions

    auto [source_model, fit_record] = train_full(source, DastModelFactory{model_cfg}, source_tc);
    GraphProvenance prov;
    prov.source_dataset = source.manifest.name;
    prov.task_tag = "binary-label";
    prov.seed = source_tc.seed;
    prov.config_hash = config_hash_hex(model_config_json(source_model.config()).dump() + "|" +
                                       std::to_string(source_tc.seed) + "|" +
                                       std::to_string(source_tc.epochs) + "|" +
                                       format_double(source_tc.lr_max));
    TransferReport report;
    report.bundle = make_graph_bundle(source_model.config(), source_model.params(), prov);
    report.pretrained =
        cross_validate(target, PretrainedDastFactory{model_cfg, report.bundle, mode}, target_tc, workers);
    report.scratch = cross_validate(target, DastModelFactory{model_cfg}, target_tc, workers);

    for (std::size_t f = 0; f < report.pretrained.folds.size(); ++f) {
        const auto& a = report.pretrained.folds[f];
        const auto& b = report.scratch.folds[f];
        if (a.failed || b.failed) continue;
        const auto pa = a.metrics.accuracy(), pb = b.metrics.accuracy();
        if (pa && pb) report.paired_accuracy_diff.push_back(*pa - *pb);
    }
    const auto [mean, sd] = mean_sd(report.paired_accuracy_diff);
    report.diff_mean = mean;
    report.diff_sd = sd;
    return report;
}

}  // namespace dastgcn
