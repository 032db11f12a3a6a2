#pragma once

// The two classifiers the harness trains: the DAST-GCN model on z-scored
// node signals, and the linear softmax baseline on flattened upper-triangle
// correlation features. Each comes with a factory that performs its
// fold-dependent preprocessing (mean-correlation adjacency, feature
// normalization) from the training indices only.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dastgcn/autodiff.hpp"
#include "dastgcn/data.hpp"
#include "dastgcn/model.hpp"
#include "dastgcn/training.hpp"

namespace dastgcn {

namespace detail {
inline bool uniform_shapes(const std::vector<const Tensor*>& inputs) {
    for (const Tensor* t : inputs)
        if (!t->same_shape(*inputs.front())) return false;
    return true;
}
inline int argmax_row(const Tensor& probs, int row) {
    int best = 0;
    for (int c = 1; c < probs.dim(1); ++c)
        if (probs.at(row, c) > probs.at(row, best)) best = c;
    return best;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// DAST-GCN classifier
// ---------------------------------------------------------------------------

class DastGcnClassifier {
public:
    DastGcnClassifier(ModelConfig cfg, std::uint64_t init_seed)
        : config_(std::move(cfg)), params_(init_model_params(config_, init_seed)) {}

    DastGcnClassifier(ModelConfig cfg, ModelParams params)
        : config_(std::move(cfg)), params_(std::move(params)) {}

    const ModelConfig& config() const { return config_; }
    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }

    // Mean cross-entropy over the batch. Equal-length samples run as one
    // batched forward; mixed lengths fall back to per-sample graphs.
    Tensor batch_loss(Tape& tape, const std::vector<const Tensor*>& inputs,
                      std::span<const int> labels, bool training, RngStream& dropout_rng) const {
        if (inputs.empty()) throw ContractError("batch_loss: empty batch");
        if (detail::uniform_shapes(inputs)) {
            Tensor probs = model_forward_batch(tape, stack_batch(inputs), params_, config_, training,
                                               &dropout_rng);
            return nll_mean(tape, probs, labels);
        }
        Tensor acc;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
            Tensor probs = model_forward(tape, *inputs[b], params_, config_, training, &dropout_rng);
            Tensor one = cross_entropy_loss(tape, probs, labels[b]);
            acc = b == 0 ? one : add(tape, acc, one);
        }
        return scale(tape, acc, 1.0 / static_cast<double>(inputs.size()));
    }

    std::vector<int> predict(const std::vector<const Tensor*>& inputs) const {
        Tape quiet;
        quiet.set_recording(false);
        std::vector<int> out;
        out.reserve(inputs.size());
        // chunked so an arbitrarily large evaluation set cannot blow memory
        constexpr std::size_t kChunk = 256;
        std::size_t start = 0;
        while (start < inputs.size()) {
            const std::size_t stop = std::min(inputs.size(), start + kChunk);
            std::vector<const Tensor*> chunk(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                             inputs.begin() + static_cast<std::ptrdiff_t>(stop));
            if (detail::uniform_shapes(chunk)) {
                Tensor probs = model_forward_batch(quiet, stack_batch(chunk), params_, config_, false,
                                                   nullptr);
                for (int r = 0; r < probs.dim(0); ++r) out.push_back(detail::argmax_row(probs, r));
            } else {
                for (const Tensor* x : chunk) {
                    Tensor probs = model_forward(quiet, *x, params_, config_, false, nullptr);
                    int best = 0;
                    for (int c = 1; c < probs.dim(0); ++c)
                        if (probs.at(c) > probs.at(best)) best = c;
                    out.push_back(best);
                }
            }
            start = stop;
        }
        return out;
    }

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (const Tensor& t : params_.all())
            if (t.requires_grad()) out.push_back(t);
        return out;
    }

    // Realized adjacency matrices, one per graph (or the fixed one).
    std::vector<Tensor> adjacency_snapshots() const {
        Tape quiet;
        quiet.set_recording(false);
        std::vector<Tensor> out;
        if (config_.adjacency == AdjacencyMode::fixed_correlation) {
            out.push_back(config_.fixed_adjacency.clone());
            return out;
        }
        for (const auto& g : params_.graphs) out.push_back(adaptive_adjacency(quiet, g).clone());
        return out;
    }

private:
    ModelConfig config_;
    ModelParams params_;
};

// ---------------------------------------------------------------------------
// linear correlation baseline
// ---------------------------------------------------------------------------

// Logistic regression (softmax over 2 logits) on a fixed-length feature
// vector; trained by the very same harness as the graph model.
class LinearCorrClassifier {
public:
    LinearCorrClassifier(int feature_len, int num_classes, std::uint64_t init_seed)
        : w_(detail::init_matrix(num_classes, feature_len, feature_len, init_seed, "linear.w")),
          b_(detail::zero_bias(num_classes)) {}

    Tensor batch_loss(Tape& tape, const std::vector<const Tensor*>& inputs,
                      std::span<const int> labels, bool /*training*/, RngStream& /*dropout*/) const {
        return nll_mean(tape, forward(tape, inputs), labels);
    }

    std::vector<int> predict(const std::vector<const Tensor*>& inputs) const {
        Tape quiet;
        quiet.set_recording(false);
        Tensor probs = forward(quiet, inputs);
        std::vector<int> out;
        out.reserve(inputs.size());
        for (int r = 0; r < probs.dim(0); ++r) out.push_back(detail::argmax_row(probs, r));
        return out;
    }

    std::vector<Tensor> trainable() const { return {w_, b_}; }
    std::vector<Tensor> adjacency_snapshots() const { return {}; }

private:
    Tensor forward(Tape& tape, const std::vector<const Tensor*>& inputs) const {
        if (inputs.empty()) throw ContractError("linear baseline: empty batch");
        const int f_len = w_.dim(1);
        const int batch = static_cast<int>(inputs.size());
        Tensor x({f_len, batch});
        for (int b = 0; b < batch; ++b) {
            const Tensor& feat = *inputs[static_cast<std::size_t>(b)];
            if (feat.rank() != 1 || feat.dim(0) != f_len)
                throw DimensionError("linear baseline: feature " + shape_str(feat.shape()) +
                                     ", expected [" + std::to_string(f_len) + "]");
            for (int i = 0; i < f_len; ++i) x.at(i, b) = feat.at(i);
        }
        Tensor logits = add_row_bias(tape, matmul(tape, w_, x), b_);
        return softmax_rows(tape, transpose(tape, logits));  // [B, classes]
    }

    Tensor w_, b_;
};

// ---------------------------------------------------------------------------
// fold factories
// ---------------------------------------------------------------------------

struct DastModelFactory {
    ModelConfig config;

    std::pair<DastGcnClassifier, std::vector<Tensor>> operator()(const Dataset& ds,
                                                                 const std::vector<int>& train_idx,
                                                                 std::uint64_t seed) const {
        ModelConfig cfg = config;
        cfg.nodes = ds.nodes();
        cfg.input_channels = ds.manifest.channels;
        if (cfg.adjacency == AdjacencyMode::fixed_correlation && !cfg.fixed_adjacency.defined())
            cfg.fixed_adjacency = fixed_correlation_adjacency(mean_pearson(ds, train_idx));
        std::vector<Tensor> inputs;
        inputs.reserve(ds.samples.size());
        for (const auto& s : ds.samples) inputs.push_back(zscore(s.signal));
        return {DastGcnClassifier(std::move(cfg), seed), std::move(inputs)};
    }
};

struct LinearBaselineFactory {
    int num_classes = 2;

    std::pair<LinearCorrClassifier, std::vector<Tensor>> operator()(const Dataset& ds,
                                                                    const std::vector<int>& train_idx,
                                                                    std::uint64_t seed) const {
        const int n = ds.nodes();
        const int f_len = n * (n - 1) / 2;
        std::vector<Tensor> feats;
        feats.reserve(ds.samples.size());
        for (const auto& s : ds.samples)
            feats.push_back(upper_triangle_features(pearson_matrix(s.signal)));
        // feature z-scoring from the training split only
        std::vector<double> mean(static_cast<std::size_t>(f_len), 0.0);
        std::vector<double> sd(static_cast<std::size_t>(f_len), 0.0);
        for (int idx : train_idx)
            for (int i = 0; i < f_len; ++i) mean[static_cast<std::size_t>(i)] += feats[static_cast<std::size_t>(idx)].at(i);
        for (auto& m : mean) m /= static_cast<double>(train_idx.size());
        for (int idx : train_idx)
            for (int i = 0; i < f_len; ++i) {
                const double d = feats[static_cast<std::size_t>(idx)].at(i) - mean[static_cast<std::size_t>(i)];
                sd[static_cast<std::size_t>(i)] += d * d;
            }
        for (auto& v : sd) v = std::sqrt(v / static_cast<double>(train_idx.size()));
        std::vector<Tensor> inputs;
        inputs.reserve(feats.size());
        for (const Tensor& f : feats) {
            Tensor z({f_len});
            for (int i = 0; i < f_len; ++i) {
                const double s = sd[static_cast<std::size_t>(i)];
                z.at(i) = s > 1e-12 ? (f.at(i) - mean[static_cast<std::size_t>(i)]) / s : 0.0;
            }
            inputs.push_back(std::move(z));
        }
        return {LinearCorrClassifier(f_len, num_classes, seed), std::move(inputs)};
    }
};

// ---------------------------------------------------------------------------
// convenience entry points
// ---------------------------------------------------------------------------

inline TrainReport train_model(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                               int workers = 1) {
    return cross_validate(ds, DastModelFactory{mc}, tc, workers);
}

inline TrainReport train_linear_baseline(const Dataset& ds, const TrainConfig& tc, int workers = 1) {
    return cross_validate(ds, LinearBaselineFactory{}, tc, workers);
}

}  // namespace dastgcn
