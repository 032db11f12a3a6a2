#pragma once

// The DAST-GCN architecture: optional temporal lag correction, a 1x1 channel
// scale-up, a stack of spatio-temporal blocks (gated dilated TCN -> graph
// convolution over a learned adjacency -> residual), a 1x1 reduction, temporal
// mean pooling, dropout and a softmax classification head. Adjacencies come
// from trainable source/target node dictionaries, one pair per block
// (layer-wise) or a single shared pair, or from a fixed correlation matrix.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dastgcn/autodiff.hpp"
#include "dastgcn/errors.hpp"
#include "dastgcn/rng.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

enum class AdjacencyMode { adaptive_directed, adaptive_undirected, fixed_correlation };

inline std::string to_string(AdjacencyMode m) {
    switch (m) {
        case AdjacencyMode::adaptive_directed: return "adaptive_directed";
        case AdjacencyMode::adaptive_undirected: return "adaptive_undirected";
        case AdjacencyMode::fixed_correlation: return "fixed_correlation";
    }
    return "?";
}

inline AdjacencyMode adjacency_mode_from(const std::string& s) {
    if (s == "adaptive_directed") return AdjacencyMode::adaptive_directed;
    if (s == "adaptive_undirected") return AdjacencyMode::adaptive_undirected;
    if (s == "fixed_correlation") return AdjacencyMode::fixed_correlation;
    throw ConfigError("unknown adjacency mode '" + s + "'");
}

struct ModelConfig {
    int nodes = 116;
    int input_channels = 1;
    int blocks = 3;       // spatio-temporal blocks (K)
    int filters = 10;     // feature channels inside the trunk (f)
    int kernel_size = 3;  // temporal kernel width (ks), odd
    int embed_dim = 10;   // node dictionary dimension (d)
    int graph_count = 3;  // adjacencies: 1 shared or one per block (M)
    std::vector<int> dilations = {1, 2, 4};
    double dropout_rate = 0.3;
    bool use_tlc = true;
    AdjacencyMode adjacency = AdjacencyMode::adaptive_directed;
    int num_classes = 2;
    Tensor fixed_adjacency;  // normalized adjacency, only in fixed_correlation mode

    void validate() const {
        if (nodes < 2) throw ConfigError("model: need at least 2 nodes, got " + std::to_string(nodes));
        if (input_channels < 1) throw ConfigError("model: input_channels must be >= 1");
        if (blocks < 1) throw ConfigError("model: need at least one block");
        if (filters < 1) throw ConfigError("model: filters must be >= 1");
        if (kernel_size < 1 || kernel_size % 2 == 0)
            throw ConfigError("model: kernel size must be odd and positive, got " +
                              std::to_string(kernel_size));
        if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
        if (graph_count != 1 && graph_count != blocks)
            throw ConfigError("model: graph count must be 1 or equal to the block count (" +
                              std::to_string(blocks) + "), got " + std::to_string(graph_count));
        if (static_cast<int>(dilations.size()) != blocks)
            throw ConfigError("model: need one dilation per block");
        for (int d : dilations)
            if (d < 1) throw ConfigError("model: dilations must be >= 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("model: dropout rate must lie in [0, 1)");
        if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
        if (use_tlc && input_channels != 1)
            throw ConfigError("model: temporal lag correction is defined on a single input channel");
        if (adjacency == AdjacencyMode::fixed_correlation) {
            if (!fixed_adjacency.defined() || fixed_adjacency.rank() != 2 ||
                fixed_adjacency.dim(0) != nodes || fixed_adjacency.dim(1) != nodes)
                throw ConfigError("model: fixed_correlation mode requires a supplied " +
                                  std::to_string(nodes) + "x" + std::to_string(nodes) + " matrix");
        }
    }
};

// Trainable source/target node dictionaries. In the undirected variant the
// target is tied to source^T and carries no storage of its own.
struct AdjacencyFactors {
    Tensor source;  // [N, d]
    Tensor target;  // [d, N], undefined when tied
    bool tied() const { return !target.defined(); }
};

struct BlockParams {
    Tensor filter_w, filter_b;  // gated TCN tanh branch
    Tensor gate_w, gate_b;      // gated TCN sigmoid branch
    Tensor gcn_w, gcn_b;        // graph convolution feature map
};

struct ModelParams {
    Tensor tlc_w, tlc_b;          // 1x1 conv, 3 stacked channels -> 1
    Tensor scaleup_w, scaleup_b;  // 1x1 conv, input channels -> filters
    std::vector<BlockParams> blocks;
    std::vector<AdjacencyFactors> graphs;  // empty in fixed_correlation mode
    Tensor reduce_w, reduce_b;    // 1x1 conv, filters -> 1
    Tensor fc_w, fc_b;            // classifier over node features

    std::vector<std::pair<std::string, Tensor>> named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto push = [&out](const std::string& n, const Tensor& t) {
            if (t.defined()) out.emplace_back(n, t);
        };
        push("tlc.w", tlc_w);
        push("tlc.b", tlc_b);
        push("scaleup.w", scaleup_w);
        push("scaleup.b", scaleup_b);
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            const std::string p = "block" + std::to_string(k) + ".";
            push(p + "filter.w", blocks[k].filter_w);
            push(p + "filter.b", blocks[k].filter_b);
            push(p + "gate.w", blocks[k].gate_w);
            push(p + "gate.b", blocks[k].gate_b);
            push(p + "gcn.w", blocks[k].gcn_w);
            push(p + "gcn.b", blocks[k].gcn_b);
        }
        for (std::size_t m = 0; m < graphs.size(); ++m) {
            const std::string p = "graph" + std::to_string(m) + ".";
            push(p + "source", graphs[m].source);
            push(p + "target", graphs[m].target);
        }
        push("reduce.w", reduce_w);
        push("reduce.b", reduce_b);
        push("fc.w", fc_w);
        push("fc.b", fc_b);
        return out;
    }

    std::vector<Tensor> all() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }
};

namespace detail {
inline Tensor init_conv(int ks, int cin, int cout, std::uint64_t seed, const std::string& name) {
    Tensor w({ks, cin, cout});
    RngStream rng(seed, "init." + name);
    const double bound = std::sqrt(1.0 / (ks * cin));
    fill_uniform(w, rng, -bound, bound);
    w.set_requires_grad();
    return w;
}
inline Tensor init_matrix(int rows, int cols, int fan_in, std::uint64_t seed, const std::string& name) {
    Tensor w({rows, cols});
    RngStream rng(seed, "init." + name);
    const double bound = std::sqrt(1.0 / fan_in);
    fill_uniform(w, rng, -bound, bound);
    w.set_requires_grad();
    return w;
}
inline Tensor init_factor(std::vector<int> shape, int embed_dim, std::uint64_t seed,
                          const std::string& name) {
    Tensor t(std::move(shape));
    RngStream rng(seed, "init." + name);
    fill_normal(t, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(embed_dim)));
    t.set_requires_grad();
    return t;
}
inline Tensor zero_bias(int n) {
    Tensor b({n});
    b.set_requires_grad();
    return b;
}
}  // namespace detail

// Fresh parameters. Every tensor draws from its own named substream, so two
// models share identical non-factor weights whenever they share a seed,
// regardless of which factor tensors exist.
inline ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    if (cfg.use_tlc) {
        p.tlc_w = detail::init_conv(1, 3, 1, seed, "tlc.w");
        p.tlc_b = detail::zero_bias(1);
    }
    p.scaleup_w = detail::init_conv(1, cfg.input_channels, cfg.filters, seed, "scaleup.w");
    p.scaleup_b = detail::zero_bias(cfg.filters);
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string prefix = "block" + std::to_string(k) + ".";
        BlockParams b;
        b.filter_w = detail::init_conv(cfg.kernel_size, cfg.filters, cfg.filters, seed, prefix + "filter.w");
        b.filter_b = detail::zero_bias(cfg.filters);
        b.gate_w = detail::init_conv(cfg.kernel_size, cfg.filters, cfg.filters, seed, prefix + "gate.w");
        b.gate_b = detail::zero_bias(cfg.filters);
        b.gcn_w = detail::init_matrix(cfg.filters, cfg.filters, cfg.filters, seed, prefix + "gcn.w");
        b.gcn_b = detail::zero_bias(cfg.filters);
        p.blocks.push_back(std::move(b));
    }
    if (cfg.adjacency != AdjacencyMode::fixed_correlation) {
        for (int m = 0; m < cfg.graph_count; ++m) {
            const std::string prefix = "graph" + std::to_string(m) + ".";
            AdjacencyFactors g;
            g.source = detail::init_factor({cfg.nodes, cfg.embed_dim}, cfg.embed_dim, seed, prefix + "source");
            if (cfg.adjacency == AdjacencyMode::adaptive_directed)
                g.target =
                    detail::init_factor({cfg.embed_dim, cfg.nodes}, cfg.embed_dim, seed, prefix + "target");
            p.graphs.push_back(std::move(g));
        }
    }
    p.reduce_w = detail::init_conv(1, cfg.filters, 1, seed, "reduce.w");
    p.reduce_b = detail::zero_bias(1);
    p.fc_w = detail::init_matrix(cfg.num_classes, cfg.nodes, cfg.nodes, seed, "fc.w");
    p.fc_b = detail::zero_bias(cfg.num_classes);
    return p;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

// A' = I_N + softmax_rows(relu(E_s E_t)). Rows sum to 2, the diagonal is
// >= 1 and every entry is >= 0; fully differentiable in both dictionaries.
inline Tensor adaptive_adjacency(Tape& tape, const AdjacencyFactors& g) {
    Tensor target = g.tied() ? transpose(tape, g.source) : g.target;
    Tensor scores = matmul(tape, g.source, target);
    Tensor sm = softmax_rows(tape, relu(tape, scores));
    return add(tape, Tensor::identity(sm.dim(0)), sm);
}

// z = tanh(conv(x; W_f)) * sigmoid(conv(x; W_g)), convolving along time with
// weights shared across nodes (and across any batch dim folded in front).
inline Tensor gated_tcn_layer(Tape& tape, const Tensor& x, const Tensor& filter_w,
                              const Tensor& filter_b, const Tensor& gate_w, const Tensor& gate_b,
                              int dilation) {
    Tensor ft = tanh(tape, conv1d_dilated(tape, x, filter_w, filter_b, dilation));
    Tensor gt = sigmoid(tape, conv1d_dilated(tape, x, gate_w, gate_b, dilation));
    return mul(tape, ft, gt);
}

// H[:, t, :] = adj * x[:, t, :] * W + bias, for every time position at once:
// the channel map is a flat matmul and the node mix reuses the row-major
// layout, where [N, ..., f] flattens to [N x rest].
inline Tensor gcn_layer(Tape& tape, const Tensor& adj, const Tensor& x, const Tensor& w,
                        const Tensor& bias) {
    if (adj.rank() != 2 || adj.dim(0) != adj.dim(1))
        throw DimensionError("gcn_layer: adjacency must be square, got " + shape_str(adj.shape()));
    if (x.rank() < 2 || x.dim(0) != adj.dim(0))
        throw DimensionError("gcn_layer: adjacency " + shape_str(adj.shape()) +
                             " does not match signal " + shape_str(x.shape()));
    if (w.rank() != 2 || w.dim(0) != x.dim(x.rank() - 1))
        throw DimensionError("gcn_layer: weight " + shape_str(w.shape()) + " does not match signal " +
                             shape_str(x.shape()));
    const int n = adj.dim(0);
    const int f_in = w.dim(0), f_out = w.dim(1);
    const int positions = static_cast<int>(x.size()) / f_in;

    Tensor z = matmul(tape, reshape(tape, x, {positions, f_in}), w);
    Tensor mixed = matmul(tape, adj, reshape(tape, z, {n, positions / n * f_out}));
    std::vector<int> out_shape = x.shape();
    out_shape.back() = f_out;
    return add_channel_bias(tape, reshape(tape, mixed, out_shape), bias);
}

// One spatio-temporal block: gated TCN, graph convolution, residual skip.
inline Tensor st_block_forward(Tape& tape, const Tensor& x, const BlockParams& bp,
                               const Tensor& adjacency, int dilation) {
    Tensor z = gated_tcn_layer(tape, x, bp.filter_w, bp.filter_b, bp.gate_w, bp.gate_b, dilation);
    Tensor h = gcn_layer(tape, adjacency, z, bp.gcn_w, bp.gcn_b);
    return add(tape, x, h);
}

// Temporal lag correction: stack [x, x', x''] and mix back to one channel
// with a shared linear 1x1 convolution.
inline Tensor temporal_lag_correction(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.dim(x.rank() - 1) != 1)
        throw ConfigError("temporal_lag_correction: defined on a single-channel signal, got " +
                          shape_str(x.shape()));
    return conv1d_dilated(tape, derivative_stack(tape, x), w, b, 1);
}

// One adjacency handle per block. Shared factors (or the fixed matrix) hand
// the same tape node to every block, so gradients pool across uses.
inline std::vector<Tensor> block_adjacencies(Tape& tape, const ModelParams& p, const ModelConfig& cfg) {
    std::vector<Tensor> adjs;
    adjs.reserve(static_cast<std::size_t>(cfg.blocks));
    if (cfg.adjacency == AdjacencyMode::fixed_correlation) {
        for (int k = 0; k < cfg.blocks; ++k) adjs.push_back(cfg.fixed_adjacency);
        return adjs;
    }
    std::vector<Tensor> realized;
    for (const auto& g : p.graphs) realized.push_back(adaptive_adjacency(tape, g));
    for (int k = 0; k < cfg.blocks; ++k)
        adjs.push_back(realized[static_cast<std::size_t>(cfg.graph_count == 1 ? 0 : k)]);
    return adjs;
}

namespace detail {
inline void check_signal(const Tensor& x, const ModelConfig& cfg) {
    if (x.rank() < 3)
        throw DimensionError("model: signal must be [N, (B,) T, C], got " + shape_str(x.shape()));
    if (x.dim(0) != cfg.nodes)
        throw DimensionError("model: configured for " + std::to_string(cfg.nodes) + " nodes, signal has " +
                             std::to_string(x.dim(0)));
    if (x.dim(x.rank() - 1) != cfg.input_channels)
        throw DimensionError("model: configured for " + std::to_string(cfg.input_channels) +
                             " channels, signal has " + std::to_string(x.dim(x.rank() - 1)));
    if (x.dim(x.rank() - 2) < cfg.kernel_size)
        throw ConfigError("model: signal length " + std::to_string(x.dim(x.rank() - 2)) +
                          " is shorter than the kernel size " + std::to_string(cfg.kernel_size));
}
}  // namespace detail

// TLC -> scale-up -> block stack. x: [N, (B,) T, C] -> same leading shape
// with `filters` channels.
inline Tensor model_trunk(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& cfg) {
    detail::check_signal(x, cfg);
    Tensor h = x;
    if (cfg.use_tlc) h = temporal_lag_correction(tape, h, p.tlc_w, p.tlc_b);
    h = conv1d_dilated(tape, h, p.scaleup_w, p.scaleup_b, 1);
    const auto adjs = block_adjacencies(tape, p, cfg);
    for (int k = 0; k < cfg.blocks; ++k)
        h = st_block_forward(tape, h, p.blocks[static_cast<std::size_t>(k)],
                             adjs[static_cast<std::size_t>(k)],
                             cfg.dilations[static_cast<std::size_t>(k)]);
    return h;
}

namespace detail {
inline Tensor dropout_mask(const std::vector<int>& shape, double rate, RngStream& rng) {
    Tensor mask(shape, 1.0);
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < keep ? inv_keep : 0.0;
    return mask;
}
}  // namespace detail

// Reduce -> temporal mean pool -> dropout -> fully connected -> softmax.
// Returns [B, num_classes] rows of probabilities (B = 1 column layout is
// handled by the single-sample wrapper below).
inline Tensor model_head(Tape& tape, const Tensor& trunk_out, const ModelParams& p,
                         const ModelConfig& cfg, bool training, RngStream* dropout_rng) {
    Tensor reduced = conv1d_dilated(tape, trunk_out, p.reduce_w, p.reduce_b, 1);
    Tensor pooled = temporal_mean(tape, reduced);  // [N] or [N, B]
    if (training && cfg.dropout_rate > 0.0) {
        if (dropout_rng == nullptr)
            throw ContractError("model: training-mode forward needs a dropout stream");
        pooled = mul(tape, pooled, detail::dropout_mask(pooled.shape(), cfg.dropout_rate, *dropout_rng));
    }
    Tensor feat = pooled.rank() == 1 ? reshape(tape, pooled, {cfg.nodes, 1}) : pooled;
    Tensor logits = add_row_bias(tape, matmul(tape, p.fc_w, feat), p.fc_b);  // [classes, B]
    return softmax_rows(tape, transpose(tape, logits));                      // [B, classes]
}

// Whole pipeline on one sample [N, T, C] -> probabilities [num_classes].
inline Tensor model_forward(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& cfg,
                            bool training = false, RngStream* dropout_rng = nullptr) {
    if (x.rank() != 3)
        throw DimensionError("model_forward: want one [N, T, C] sample, got " + shape_str(x.shape()));
    Tensor probs = model_head(tape, model_trunk(tape, x, p, cfg), p, cfg, training, dropout_rng);
    return reshape(tape, probs, {cfg.num_classes});
}

// Batched pipeline on [N, B, T, C] -> probabilities [B, num_classes]. The
// arithmetic per sample is identical to model_forward; the batch dim only
// widens the kernels.
inline Tensor model_forward_batch(Tape& tape, const Tensor& x, const ModelParams& p,
                                  const ModelConfig& cfg, bool training = false,
                                  RngStream* dropout_rng = nullptr) {
    if (x.rank() != 4)
        throw DimensionError("model_forward_batch: want [N, B, T, C], got " + shape_str(x.shape()));
    return model_head(tape, model_trunk(tape, x, p, cfg), p, cfg, training, dropout_rng);
}

// Stack equally shaped [N, T, C] samples into the batched [N, B, T, C] layout.
inline Tensor stack_batch(const std::vector<const Tensor*>& samples) {
    if (samples.empty()) throw ContractError("stack_batch: empty batch");
    const Tensor& first = *samples.front();
    const int n = first.dim(0), t_len = first.dim(1), ch = first.dim(2);
    for (const Tensor* s : samples)
        if (!s->same_shape(first))
            throw DimensionError("stack_batch: mixed sample shapes " + shape_str(first.shape()) +
                                 " vs " + shape_str(s->shape()));
    const int batch = static_cast<int>(samples.size());
    Tensor out({n, batch, t_len, ch});
    const std::size_t row = static_cast<std::size_t>(t_len) * ch;
    for (int b = 0; b < batch; ++b) {
        const double* src = samples[static_cast<std::size_t>(b)]->data();
        for (int i = 0; i < n; ++i)
            std::copy(src + i * row, src + (i + 1) * row,
                      out.data() + (static_cast<std::size_t>(i) * batch + static_cast<std::size_t>(b)) * row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// fixed-correlation adjacency and parameter counting
// ---------------------------------------------------------------------------

// Normalizes a mean correlation matrix with the same structure the adaptive
// rule uses: zero the diagonal, clamp negatives, row-softmax, add self loops.
inline Tensor fixed_correlation_adjacency(const Tensor& mean_corr) {
    if (mean_corr.rank() != 2 || mean_corr.dim(0) != mean_corr.dim(1))
        throw DimensionError("fixed_correlation_adjacency: want a square matrix, got " +
                             shape_str(mean_corr.shape()));
    const int n = mean_corr.dim(0);
    Tensor scores = mean_corr.clone();
    for (int i = 0; i < n; ++i) scores.at(i, i) = 0.0;
    Tape quiet;
    quiet.set_recording(false);
    Tensor sm = softmax_rows(quiet, relu(quiet, scores));
    return add(quiet, Tensor::identity(n), sm);
}

struct ParamCountItem {
    std::string component;
    long long count;
};

inline std::vector<ParamCountItem> param_count_breakdown(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamCountItem> items;
    const long long n = cfg.nodes, f = cfg.filters, ks = cfg.kernel_size, d = cfg.embed_dim;
    if (cfg.use_tlc) items.push_back({"tlc_conv (3->1)", 3 + 1});
    items.push_back({"scaleup_conv (" + std::to_string(cfg.input_channels) + "->" + std::to_string(f) + ")",
                     cfg.input_channels * f + f});
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = "block" + std::to_string(k);
        items.push_back({b + ".gated_tcn", 2 * (ks * f * f + f)});
        items.push_back({b + ".gcn", f * f + f});
    }
    if (cfg.adjacency != AdjacencyMode::fixed_correlation) {
        const long long per_graph =
            cfg.adjacency == AdjacencyMode::adaptive_undirected ? n * d : 2 * n * d;
        for (int m = 0; m < cfg.graph_count; ++m)
            items.push_back({"graph" + std::to_string(m) + ".factors", per_graph});
    }
    items.push_back({"reduce_conv (" + std::to_string(f) + "->1)", f + 1});
    items.push_back({"fc (" + std::to_string(n) + "->" + std::to_string(cfg.num_classes) + ")",
                     n * cfg.num_classes + cfg.num_classes});
    return items;
}

inline long long param_count(const ModelConfig& cfg) {
    long long total = 0;
    for (const auto& item : param_count_breakdown(cfg)) total += item.count;
    return total;
}

}  // namespace dastgcn
