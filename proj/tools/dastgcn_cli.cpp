// Command-line front end for the DAST-GCN pipeline: dataset synthesis,
// training, cross-validation, the ablation grid, sample-size scaling curves,
// graph export and graph-transfer experiments, plus the finite-difference
// gradient gate.
//
// Configuration is a flat key=value map with dotted namespaces (model.K=3,
// train.lr_max=0.001); values come from defaults, then an optional --config
// file, then --set overrides, then dedicated flags. Every run writes the
// fully resolved state to <out>/run.json, and --replay <run.json> reproduces
// the run byte for byte.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dastgcn/checkpoint.hpp"
#include "dastgcn/classifiers.hpp"
#include "dastgcn/experiments.hpp"
#include "dastgcn/gradsuite.hpp"
#include "dastgcn/synth.hpp"
#include "dastgcn/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dastgcn;

namespace {

// Usage-class failures (unknown keys, malformed values) exit with code 2,
// like CLI11 parse errors; contract failures from the library exit with 1.
struct UsageError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// configuration map
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

ConfigMap default_config() {
    return {
        {"seed", "1"},
        {"threads", ""},  // empty: use DASTGC_THREADS or 1
        {"model.K", "3"},
        {"model.f", "10"},
        {"model.ks", "3"},
        {"model.d", "10"},
        {"model.M", "K"},
        {"model.dilations", ""},  // empty: doubling schedule 1,2,4,...
        {"model.dropout", "0.3"},
        {"model.tlc", "true"},
        {"model.adjacency", "adaptive_directed"},
        {"model.num_classes", "2"},
        {"model.variant", "dastgcn"},
        {"train.epochs", "200"},
        {"train.batch_size", "32"},
        {"train.lr_max", "0.001"},
        {"train.warmup_epochs", "10"},
        {"train.folds", "5"},
        {"transfer.mode", "frozen"},
        {"scale.sizes", "50,100,200"},
        {"scale.models", "dastgcn,linear"},
    };
}

void apply_key(ConfigMap& config, const std::string& key, const std::string& value) {
    if (!config.count(key)) throw UsageError("unknown config key '" + key + "'");
    config[key] = value;
}

void apply_config_file(ConfigMap& config, const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
            line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        const auto eq = line.find('=', start);
        if (eq == std::string::npos)
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        apply_key(config, line.substr(start, eq - start), line.substr(eq + 1));
    }
}

void apply_sets(ConfigMap& config, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set wants key=value, got '" + s + "'");
        apply_key(config, s.substr(0, eq), s.substr(eq + 1));
    }
}

int to_int(const ConfigMap& c, const std::string& key) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(c.at(key), &used);
        if (used != c.at(key).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UsageError("config " + key + ": expected an integer, got '" + c.at(key) + "'");
    }
}

double to_double(const ConfigMap& c, const std::string& key) {
    try {
        return std::stod(c.at(key));
    } catch (const std::exception&) {
        throw UsageError("config " + key + ": expected a number, got '" + c.at(key) + "'");
    }
}

bool to_bool(const ConfigMap& c, const std::string& key) {
    const std::string& v = c.at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config " + key + ": expected true/false, got '" + v + "'");
}

std::uint64_t to_seed(const ConfigMap& c, const std::string& key) {
    try {
        return std::stoull(c.at(key));
    } catch (const std::exception&) {
        throw UsageError("config " + key + ": expected an unsigned integer, got '" + c.at(key) + "'");
    }
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoi(tok));
    }
    return out;
}

std::vector<std::string> parse_name_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

std::vector<int> doubling_dilations(int blocks) {
    std::vector<int> d(static_cast<std::size_t>(blocks));
    int v = 1;
    for (int k = 0; k < blocks; ++k) {
        d[static_cast<std::size_t>(k)] = v;
        v *= 2;
    }
    return d;
}

ModelConfig model_from_config(const ConfigMap& c) {
    ModelConfig cfg;
    cfg.blocks = to_int(c, "model.K");
    cfg.filters = to_int(c, "model.f");
    cfg.kernel_size = to_int(c, "model.ks");
    cfg.embed_dim = to_int(c, "model.d");
    cfg.graph_count = c.at("model.M") == "K" ? cfg.blocks : to_int(c, "model.M");
    cfg.dilations = c.at("model.dilations").empty() ? doubling_dilations(cfg.blocks)
                                                    : parse_int_list(c.at("model.dilations"));
    cfg.dropout_rate = to_double(c, "model.dropout");
    cfg.use_tlc = to_bool(c, "model.tlc");
    cfg.adjacency = adjacency_mode_from(c.at("model.adjacency"));
    cfg.num_classes = to_int(c, "model.num_classes");
    return cfg;
}

TrainConfig train_from_config(const ConfigMap& c) {
    TrainConfig tc;
    tc.epochs = to_int(c, "train.epochs");
    tc.batch_size = to_int(c, "train.batch_size");
    tc.lr_max = to_double(c, "train.lr_max");
    tc.warmup_epochs = to_int(c, "train.warmup_epochs");
    tc.folds = to_int(c, "train.folds");
    tc.seed = to_seed(c, "seed");
    return tc;
}

int resolve_threads(const ConfigMap& c) {
    if (!c.at("threads").empty()) return std::max(1, to_int(c, "threads"));
    if (const char* env = std::getenv("DASTGC_THREADS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw UsageError("DASTGC_THREADS is not an integer: '" + std::string(env) + "'");
        }
    }
    return 1;
}

// ---------------------------------------------------------------------------
// run records
// ---------------------------------------------------------------------------

struct RunContext {
    std::string command;
    ConfigMap config;
    std::map<std::string, std::string> inputs;  // data/source/target/checkpoint paths
    std::string out_dir;
    json synth_spec;  // resolved synthesis spec (synth only)
};

json run_record(const RunContext& ctx) {
    json j;
    j["format"] = 1;
    j["command"] = ctx.command;
    j["config"] = ctx.config;
    j["inputs"] = ctx.inputs;
    j["out"] = ctx.out_dir;
    if (!ctx.synth_spec.is_null()) j["synth_spec"] = ctx.synth_spec;
    return j;
}

void write_run_record(const RunContext& ctx) {
    ensure_dir(ctx.out_dir);
    write_text_file(fs::path(ctx.out_dir) / "run.json", run_record(ctx).dump(2) + "\n");
}

RunContext context_from_record(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError("run record " + path.string() + " does not parse: " + e.what());
    }
    RunContext ctx;
    ctx.command = j.at("command").get<std::string>();
    ConfigMap defaults = default_config();
    for (auto& [k, v] : j.at("config").items()) apply_key(defaults, k, v.get<std::string>());
    ctx.config = std::move(defaults);
    for (auto& [k, v] : j.at("inputs").items()) ctx.inputs[k] = v.get<std::string>();
    ctx.out_dir = j.at("out").get<std::string>();
    if (j.contains("synth_spec")) ctx.synth_spec = j.at("synth_spec");
    return ctx;
}

// ---------------------------------------------------------------------------
// synthesis spec JSON
// ---------------------------------------------------------------------------

SynthSpec synth_spec_from_json(const json& j, const fs::path& base_dir) {
    SynthSpec spec;
    spec.name = j.value("name", spec.name);
    spec.nodes = j.value("nodes", spec.nodes);
    spec.timepoints = j.value("timepoints", spec.timepoints);
    spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
    spec.effect_size = j.value("effect_size", spec.effect_size);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    if (j.contains("dynamics")) spec.dynamics = coupling_dynamics_from(j.at("dynamics").get<std::string>());
    spec.switch_period = j.value("switch_period", spec.switch_period);
    spec.edge_density = j.value("edge_density", spec.edge_density);
    spec.tr_seconds = j.value("tr_seconds", spec.tr_seconds);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("coupling_base_csv"))
        spec.coupling_base = read_matrix_csv(base_dir / j.at("coupling_base_csv").get<std::string>());
    if (j.contains("coupling_true_csv"))
        spec.coupling_true = read_matrix_csv(base_dir / j.at("coupling_true_csv").get<std::string>());
    return spec;
}

// ---------------------------------------------------------------------------
// shared reporting helpers
// ---------------------------------------------------------------------------

void print_param_breakdown(const ModelConfig& cfg) {
    std::cout << "parameter breakdown (N=" << cfg.nodes << ", K=" << cfg.blocks << ", f=" << cfg.filters
              << ", ks=" << cfg.kernel_size << ", d=" << cfg.embed_dim << ", M=" << cfg.graph_count
              << ", " << to_string(cfg.adjacency) << ")\n";
    long long total = 0;
    for (const auto& item : param_count_breakdown(cfg)) {
        std::printf("  %-28s %8lld\n", item.component.c_str(), item.count);
        total += item.count;
    }
    std::printf("  %-28s %8lld\n", "total", total);
}

void print_report_summary(const std::string& name, const TrainReport& report) {
    const auto [mean, sd] = mean_sd(report.fold_accuracies());
    std::cout << name << ": accuracy " << format_double(mean) << " +- " << format_double(sd) << " over "
              << report.folds.size() << " folds";
    int failed = 0;
    for (const auto& f : report.folds) failed += f.failed ? 1 : 0;
    if (failed) std::cout << " (" << failed << " failed)";
    std::cout << "\n";
}

TrainReport run_variant_cv(const Dataset& ds, const ConfigMap& config, const std::string& variant,
                           const TrainConfig& tc, int workers) {
    if (variant == "linear") return train_linear_baseline(ds, tc, workers);
    const ModelConfig cfg = variant_config(model_from_config(config), variant);
    return train_model(ds, cfg, tc, workers);
}

void write_cv_artifacts(const fs::path& out, const RunContext& ctx, const TrainReport& report) {
    json j;
    j["command"] = ctx.command;
    j["config"] = ctx.config;
    j["report"] = train_report_json(report);
    write_text_file(out / "report.json", j.dump(2) + "\n");
    write_metrics_csv(out / "metrics.csv", report);
    write_fold_artifacts(out, report);
}

// ---------------------------------------------------------------------------
// command dispatch
// ---------------------------------------------------------------------------

int dispatch(const RunContext& ctx);

int dispatch_synth(const RunContext& ctx) {
    // any csv paths in the record were already rebased onto the working dir
    const SynthSpec spec = synth_spec_from_json(ctx.synth_spec, fs::path("."));
    write_run_record(ctx);
    const SynthResult result = synth_generate(spec, ctx.out_dir);
    std::cout << "wrote " << 2 * spec.samples_per_class << " samples to " << result.manifest_path << "\n";
    return 0;
}

int dispatch_train(const RunContext& ctx) {
    const Dataset ds = load_dataset(ctx.inputs.at("data"));
    const TrainConfig tc = train_from_config(ctx.config);
    ModelConfig cfg = variant_config(model_from_config(ctx.config), ctx.config.at("model.variant"));
    cfg.nodes = ds.nodes();
    cfg.input_channels = ds.manifest.channels;
    print_param_breakdown(cfg);
    write_run_record(ctx);

    auto [model, record] = train_full(ds, DastModelFactory{cfg}, tc);
    const fs::path out = ctx.out_dir;
    json prov;
    prov["dataset"] = ds.manifest.name;
    prov["seed"] = tc.seed;
    prov["config_hash"] = config_hash_hex(model_config_json(model.config()).dump() + "|" +
                                          std::to_string(tc.seed) + "|" + std::to_string(tc.epochs) +
                                          "|" + format_double(tc.lr_max));
    json cfg_json = model_config_json(model.config());
    cfg_json["provenance"] = prov;
    auto tensors = model.params().named();
    if (model.config().fixed_adjacency.defined())
        tensors.emplace_back("fixed.adjacency", model.config().fixed_adjacency);
    write_dgcp(out / "checkpoint.dgcp", "model", cfg_json, tensors);
    write_loss_curve(out / "losscurve.csv", record);
    const auto snapshots = model.adjacency_snapshots();
    for (std::size_t g = 0; g < snapshots.size(); ++g)
        write_matrix_csv(out / ("adjacency_graph" + std::to_string(g) + ".csv"), snapshots[g]);
    json j;
    j["command"] = "train";
    j["config"] = ctx.config;
    j["final_loss"] = record.loss_curve.empty() ? 0.0 : record.loss_curve.back();
    write_text_file(out / "report.json", j.dump(2) + "\n");
    std::cout << "trained on " << ds.samples.size() << " samples; final loss "
              << format_double(record.loss_curve.empty() ? 0.0 : record.loss_curve.back()) << "\n";
    return 0;
}

int dispatch_cv(const RunContext& ctx) {
    const Dataset ds = load_dataset(ctx.inputs.at("data"));
    const TrainConfig tc = train_from_config(ctx.config);
    const int workers = resolve_threads(ctx.config);
    const std::string variant = ctx.config.at("model.variant");
    if (variant != "linear") {
        ModelConfig cfg = variant_config(model_from_config(ctx.config), variant);
        cfg.nodes = ds.nodes();
        cfg.input_channels = ds.manifest.channels;
        print_param_breakdown(cfg);
    }
    write_run_record(ctx);
    const TrainReport report = run_variant_cv(ds, ctx.config, variant, tc, workers);
    write_cv_artifacts(ctx.out_dir, ctx, report);
    print_report_summary(variant, report);
    return 0;
}

int dispatch_ablate(const RunContext& ctx) {
    const Dataset ds = load_dataset(ctx.inputs.at("data"));
    const TrainConfig tc = train_from_config(ctx.config);
    const int workers = resolve_threads(ctx.config);
    write_run_record(ctx);
    const fs::path out = ctx.out_dir;
    std::string summary = "variant,acc_mean,acc_sd,sens_mean,sens_sd,spec_mean,spec_sd\n";
    for (const auto& [name, cfg] : ablation_variants(model_from_config(ctx.config))) {
        const TrainReport report = train_model(ds, cfg, tc, workers);
        const fs::path sub = out / name;
        ensure_dir(sub);
        RunContext sub_ctx = ctx;
        sub_ctx.command = "cv";
        sub_ctx.config["model.variant"] = name;
        write_cv_artifacts(sub, sub_ctx, report);
        std::vector<double> acc, sens, spec;
        for (const auto& f : report.folds) {
            if (f.failed) continue;
            if (auto v = f.metrics.accuracy()) acc.push_back(*v);
            if (auto v = f.metrics.sensitivity()) sens.push_back(*v);
            if (auto v = f.metrics.specificity()) spec.push_back(*v);
        }
        const auto [am, as] = mean_sd(acc);
        const auto [sm, ss] = mean_sd(sens);
        const auto [pm, ps] = mean_sd(spec);
        summary += name + "," + format_double(am) + "," + format_double(as) + "," + format_double(sm) +
                   "," + format_double(ss) + "," + format_double(pm) + "," + format_double(ps) + "\n";
        print_report_summary(name, report);
    }
    write_text_file(out / "ablation.csv", summary);
    return 0;
}

int dispatch_scale(const RunContext& ctx) {
    const Dataset ds = load_dataset(ctx.inputs.at("data"));
    const TrainConfig tc = train_from_config(ctx.config);
    const int workers = resolve_threads(ctx.config);
    const std::vector<int> sizes = parse_int_list(ctx.config.at("scale.sizes"));
    const std::vector<std::string> models = parse_name_list(ctx.config.at("scale.models"));
    if (sizes.empty()) throw UsageError("scale: no sizes given");
    if (models.empty()) throw UsageError("scale: no models given");
    write_run_record(ctx);
    const auto rows =
        scaling_experiment(ds, models, model_from_config(ctx.config), sizes, tc, workers);
    write_scale_csv(fs::path(ctx.out_dir) / "scaling.csv", rows);
    for (const auto& r : rows)
        std::cout << r.size << "/class  " << r.model << "  " << format_double(r.acc_mean) << " +- "
                  << format_double(r.acc_sd) << "\n";
    return 0;
}

int dispatch_export_graph(const RunContext& ctx) {
    const fs::path ckpt = ctx.inputs.at("checkpoint");
    const DgcpFile file = read_dgcp(ckpt);
    auto [cfg, params] = load_model_checkpoint(ckpt);
    GraphProvenance prov;
    if (file.config.contains("provenance")) {
        const auto& p = file.config.at("provenance");
        prov.source_dataset = p.value("dataset", "");
        prov.seed = p.value("seed", std::uint64_t{0});
        prov.config_hash = p.value("config_hash", "");
    }
    prov.task_tag = "binary-label";
    write_run_record(ctx);
    export_graph(cfg, params, prov, ctx.out_dir);
    std::cout << "exported " << cfg.graph_count << " graph(s) from " << ckpt.string() << "\n";
    return 0;
}

int dispatch_transfer(const RunContext& ctx) {
    const Dataset source = load_dataset(ctx.inputs.at("source"));
    const Dataset target = load_dataset(ctx.inputs.at("target"));
    const TrainConfig tc = train_from_config(ctx.config);
    const int workers = resolve_threads(ctx.config);
    const TransferMode mode = transfer_mode_from(ctx.config.at("transfer.mode"));
    write_run_record(ctx);
    const TransferReport report =
        transfer_experiment(source, target, model_from_config(ctx.config), tc, tc, mode, workers);
    const fs::path out = ctx.out_dir;
    save_graph_bundle(out / "bundle.dgcp", report.bundle);

    std::string csv = "arm,fold,accuracy,sensitivity,specificity,tp,tn,fp,fn\n";
    auto append_rows = [&csv](const std::string& arm, const TrainReport& r) {
        for (const auto& f : r.folds) {
            csv += arm + "," + std::to_string(f.fold) + ",";
            if (f.failed) {
                csv += "FAILED,FAILED,FAILED,0,0,0,0\n";
                continue;
            }
            const Metrics& m = f.metrics;
            auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
            csv += opt(m.accuracy()) + "," + opt(m.sensitivity()) + "," + opt(m.specificity()) + "," +
                   std::to_string(m.tp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fp) + "," +
                   std::to_string(m.fn) + "\n";
        }
    };
    append_rows("pretrained", report.pretrained);
    append_rows("scratch", report.scratch);
    write_text_file(out / "transfer_metrics.csv", csv);

    const auto [pm, psd] = mean_sd(report.pretrained.fold_accuracies());
    const auto [sm, ssd] = mean_sd(report.scratch.fold_accuracies());
    json j;
    j["command"] = "transfer";
    j["config"] = ctx.config;
    j["pretrained"] = train_report_json(report.pretrained);
    j["scratch"] = train_report_json(report.scratch);
    j["paired_accuracy_diff"] = report.paired_accuracy_diff;
    j["paired_diff_mean"] = report.diff_mean;
    j["paired_diff_sd"] = report.diff_sd;
    j["pretrained_accuracy_mean"] = pm;
    j["pretrained_accuracy_sd"] = psd;
    j["scratch_accuracy_mean"] = sm;
    j["scratch_accuracy_sd"] = ssd;
    j["bundle_provenance"] = {{"source_dataset", report.bundle.provenance.source_dataset},
                              {"seed", report.bundle.provenance.seed},
                              {"config_hash", report.bundle.provenance.config_hash}};
    write_text_file(out / "transfer_report.json", j.dump(2) + "\n");
    std::cout << "pretrained " << format_double(pm) << " +- " << format_double(psd) << " | scratch "
              << format_double(sm) << " +- " << format_double(ssd) << " | paired diff "
              << format_double(report.diff_mean) << "\n";
    return 0;
}

int dispatch_check_grads(const RunContext& ctx) {
    const auto items = gradient_check_suite();
    double worst = 0.0;
    bool all_pass = true;
    for (const auto& item : items) {
        std::printf("%-28s max_rel_err %-12.3e tol %.0e  %s\n", item.name.c_str(), item.max_rel_err,
                    item.tolerance, item.pass ? "PASS" : "FAIL");
        worst = std::max(worst, item.max_rel_err);
        all_pass = all_pass && item.pass;
    }
    std::printf("worst relative error: %g\n", worst);
    if (!ctx.out_dir.empty()) {
        write_run_record(ctx);
        std::string csv = "check,max_rel_err,tolerance,pass\n";
        for (const auto& item : items)
            csv += item.name + "," + format_double(item.max_rel_err) + "," +
                   format_double(item.tolerance) + "," + (item.pass ? "1" : "0") + "\n";
        write_text_file(fs::path(ctx.out_dir) / "gradcheck.csv", csv);
    }
    return all_pass ? 0 : 1;
}

int dispatch(const RunContext& ctx) {
    if (ctx.command == "synth") return dispatch_synth(ctx);
    if (ctx.command == "train") return dispatch_train(ctx);
    if (ctx.command == "cv") return dispatch_cv(ctx);
    if (ctx.command == "ablate") return dispatch_ablate(ctx);
    if (ctx.command == "scale") return dispatch_scale(ctx);
    if (ctx.command == "export-graph") return dispatch_export_graph(ctx);
    if (ctx.command == "transfer") return dispatch_transfer(ctx);
    if (ctx.command == "check-grads") return dispatch_check_grads(ctx);
    throw UsageError("unknown command '" + ctx.command + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DAST-GCN: dynamic adaptive spatio-temporal graph convolution pipeline"};
    app.require_subcommand(0, 1);

    std::string replay_path;
    app.add_option("--replay", replay_path, "re-run a recorded run.json");

    std::string config_file;
    std::vector<std::string> sets;
    std::string out_dir;
    std::optional<std::uint64_t> seed_flag;
    std::optional<int> threads_flag;

    auto add_common = [&](CLI::App* cmd, bool requires_out = true) {
        cmd->add_option("--config", config_file, "key=value config file");
        cmd->add_option("--set", sets, "override a config key (key=value, repeatable)");
        auto* out_opt = cmd->add_option("--out", out_dir, "output directory");
        if (requires_out) out_opt->required();
        cmd->add_option("--seed", seed_flag, "root seed");
        cmd->add_option("--threads", threads_flag, "worker pool bound (default DASTGC_THREADS or 1)");
    };

    std::string spec_file, data_file, source_file, target_file, checkpoint_file;
    std::optional<int> folds_flag, epochs_flag;
    std::string model_flag, mode_flag, sizes_flag, models_flag;

    auto* synth = app.add_subcommand("synth", "generate a synthetic planted-structure dataset");
    synth->add_option("--spec", spec_file, "synthesis spec JSON")->required();
    add_common(synth);

    auto* train = app.add_subcommand("train", "fit one model on a whole dataset and checkpoint it");
    train->add_option("--data", data_file, "dataset manifest.json")->required();
    train->add_option("--model", model_flag, "model variant (dastgcn|no_tlc|m1|undirected|corr)");
    train->add_option("--epochs", epochs_flag, "training epochs");
    add_common(train);

    auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
    cv->add_option("--data", data_file, "dataset manifest.json")->required();
    cv->add_option("--model", model_flag, "model variant (dastgcn|no_tlc|m1|undirected|corr|linear)");
    cv->add_option("--folds", folds_flag, "fold count")->check(CLI::Range(2, 1000000));
    cv->add_option("--epochs", epochs_flag, "training epochs");
    add_common(cv);

    auto* ablate = app.add_subcommand("ablate", "run the full ablation grid");
    ablate->add_option("--data", data_file, "dataset manifest.json")->required();
    ablate->add_option("--epochs", epochs_flag, "training epochs");
    add_common(ablate);

    auto* scale = app.add_subcommand("scale", "accuracy vs samples-per-class sweep");
    scale->add_option("--data", data_file, "dataset manifest.json")->required();
    scale->add_option("--sizes", sizes_flag, "comma list of samples per class");
    scale->add_option("--models", models_flag, "comma list of models");
    scale->add_option("--epochs", epochs_flag, "training epochs");
    add_common(scale);

    auto* exportg = app.add_subcommand("export-graph", "export trained adjacency factors as a bundle");
    exportg->add_option("--checkpoint", checkpoint_file, "model checkpoint (.dgcp)")->required();
    add_common(exportg);

    auto* transfer = app.add_subcommand("transfer", "paired pretrained-vs-scratch graph transfer");
    transfer->add_option("--source", source_file, "source dataset manifest.json")->required();
    transfer->add_option("--target", target_file, "target dataset manifest.json")->required();
    transfer->add_option("--mode", mode_flag, "frozen|finetune");
    transfer->add_option("--epochs", epochs_flag, "training epochs");
    add_common(transfer);

    auto* grads = app.add_subcommand("check-grads", "finite-difference gradient verification suite");
    add_common(grads, /*requires_out=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunContext ctx;
        if (!replay_path.empty()) {
            if (app.get_subcommands().size() != 0)
                throw UsageError("--replay cannot be combined with a subcommand");
            ctx = context_from_record(replay_path);
        } else {
            if (app.get_subcommands().empty()) {
                std::cerr << app.help() << "\n";
                return 2;
            }
            CLI::App* cmd = app.get_subcommands().front();
            ctx.command = cmd->get_name();
            ctx.config = default_config();
            if (!config_file.empty()) apply_config_file(ctx.config, config_file);
            apply_sets(ctx.config, sets);
            if (seed_flag) ctx.config["seed"] = std::to_string(*seed_flag);
            if (threads_flag) ctx.config["threads"] = std::to_string(*threads_flag);
            if (folds_flag) ctx.config["train.folds"] = std::to_string(*folds_flag);
            if (epochs_flag) ctx.config["train.epochs"] = std::to_string(*epochs_flag);
            if (!model_flag.empty()) ctx.config["model.variant"] = model_flag;
            if (!mode_flag.empty()) ctx.config["transfer.mode"] = mode_flag;
            if (!sizes_flag.empty()) ctx.config["scale.sizes"] = sizes_flag;
            if (!models_flag.empty()) ctx.config["scale.models"] = models_flag;
            ctx.out_dir = out_dir;
            if (!data_file.empty()) ctx.inputs["data"] = data_file;
            if (!source_file.empty()) ctx.inputs["source"] = source_file;
            if (!target_file.empty()) ctx.inputs["target"] = target_file;
            if (!checkpoint_file.empty()) ctx.inputs["checkpoint"] = checkpoint_file;
            if (ctx.command == "synth") {
                json spec_json;
                try {
                    spec_json = json::parse(read_text_file(spec_file));
                } catch (const json::exception& e) {
                    throw DataError("synthesis spec " + spec_file + " does not parse: " + e.what());
                }
                if (seed_flag) spec_json["seed"] = *seed_flag;
                ctx.inputs["spec"] = spec_file;
                // resolve the spec (defaults + file) so a replay needs no spec file
                const SynthSpec s = synth_spec_from_json(spec_json, fs::path(spec_file).parent_path());
                json resolved;
                resolved["name"] = s.name;
                resolved["nodes"] = s.nodes;
                resolved["timepoints"] = s.timepoints;
                resolved["samples_per_class"] = s.samples_per_class;
                resolved["effect_size"] = s.effect_size;
                resolved["noise_sigma"] = s.noise_sigma;
                resolved["dynamics"] = to_string(s.dynamics);
                resolved["switch_period"] = s.switch_period;
                resolved["edge_density"] = s.edge_density;
                resolved["tr_seconds"] = s.tr_seconds;
                resolved["seed"] = s.seed;
                if (spec_json.contains("coupling_base_csv"))
                    resolved["coupling_base_csv"] =
                        (fs::path(spec_file).parent_path() / spec_json.at("coupling_base_csv").get<std::string>())
                            .string();
                if (spec_json.contains("coupling_true_csv"))
                    resolved["coupling_true_csv"] =
                        (fs::path(spec_file).parent_path() / spec_json.at("coupling_true_csv").get<std::string>())
                            .string();
                ctx.synth_spec = resolved;
            }
        }
        return dispatch(ctx);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
