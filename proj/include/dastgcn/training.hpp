#pragma once

// Training harness: cross-entropy loss, Adam, the cosine warm-up schedule,
// stratified k-fold splitting, metrics and the generic fit / cross-validation
// loops. The loops are templated on a classifier that exposes
//
//   Tensor batch_loss(Tape&, inputs, labels, training, RngStream& dropout)
//   std::vector<int> predict(inputs)
//   std::vector<Tensor> trainable()
//   std::vector<Tensor> adjacency_snapshots()
//
// and on a factory (Dataset, train indices, seed) -> (classifier, inputs for
// every sample), so fold-dependent preprocessing stays next to the model that
// needs it. Every fold is fully isolated and seeded as seed + fold index,
// which keeps runs reproducible under any worker count.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dastgcn/autodiff.hpp"
#include "dastgcn/data.hpp"
#include "dastgcn/errors.hpp"
#include "dastgcn/rng.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 32;
    double lr_max = 0.001;
    int warmup_epochs = 10;
    int folds = 5;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (lr_max <= 0.0) throw ConfigError("train: lr_max must be positive");
        if (warmup_epochs <= 0 || warmup_epochs >= epochs)
            throw ConfigError("train: need 0 < warmup_epochs < epochs, got " +
                              std::to_string(warmup_epochs) + " of " + std::to_string(epochs));
        if (folds < 2) throw ConfigError("train: need at least 2 folds");
    }
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

// Class 1 is the positive class throughout. Ratios whose denominator is zero
// are reported as "undefined" (empty optional), never as NaN.
struct Metrics {
    long long tp = 0, tn = 0, fp = 0, fn = 0;

    long long total() const { return tp + tn + fp + fn; }
    std::optional<double> accuracy() const {
        if (total() == 0) return std::nullopt;
        return static_cast<double>(tp + tn) / static_cast<double>(total());
    }
    std::optional<double> sensitivity() const {
        if (tp + fn == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    std::optional<double> specificity() const {
        if (tn + fp == 0) return std::nullopt;
        return static_cast<double>(tn) / static_cast<double>(tn + fp);
    }
};

// ---------------------------------------------------------------------------
// loss, optimizer, schedule
// ---------------------------------------------------------------------------

// -log(probs[label]) with the probability floored at 1e-12.
inline Tensor cross_entropy_loss(Tape& tape, const Tensor& probs, int label) {
    if (probs.rank() != 1)
        throw DimensionError("cross_entropy_loss: want a probability vector, got " +
                             shape_str(probs.shape()));
    const int classes = probs.dim(0);
    return nll_mean(tape, reshape(tape, probs, {1, classes}), std::span<const int>(&label, 1));
}

struct AdamState {
    std::vector<double> m, v;
    long long step = 0;
};

inline void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (param.size() != grad.size())
        throw ContractError("adam_step: " + std::to_string(param.size()) + " params vs " +
                            std::to_string(grad.size()) + " grads");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    } else if (state.m.size() != param.size()) {
        throw ContractError("adam_step: optimizer state does not match parameter size");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        param[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + eps);
    }
}

class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Tensor> params)
        : params_(std::move(params)), states_(params_.size()) {}

    void zero_grad() {
        for (const Tensor& p : params_) p.zero_grad();
    }

    // Applies one Adam update per tensor; tensors without requires_grad
    // (frozen) or without an accumulated gradient are left untouched.
    void step(double lr) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Tensor& p = params_[i];
            if (!p.requires_grad() || !p.has_grad()) continue;
            adam_step(p.values(), p.grad(), states_[i], lr);
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<AdamState> states_;
};

// Linear ramp to lr_max over the first warmup_epochs, then cosine decay to
// ~0 at the final epoch. Continuous at the warm-up boundary.
inline double cosine_warmup_lr(int epoch, const TrainConfig& tc) {
    if (epoch < 0 || epoch >= tc.epochs)
        throw ContractError("cosine_warmup_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(tc.epochs) + ")");
    if (epoch < tc.warmup_epochs)
        return tc.lr_max * static_cast<double>(epoch + 1) / static_cast<double>(tc.warmup_epochs);
    const double progress = static_cast<double>(epoch - tc.warmup_epochs) /
                            static_cast<double>(tc.epochs - tc.warmup_epochs);
    return tc.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// stratified folds
// ---------------------------------------------------------------------------

// Stratified k-fold: per class, a seeded shuffle is dealt into `folds` chunks
// whose sizes differ by at most one, and fold i tests on chunk i of every
// class. Index lists come back sorted, disjoint and exhaustive.
inline std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_split(
    const std::vector<int>& labels, int folds, std::uint64_t seed) {
    if (folds < 2) throw ContractError("kfold_split: need at least 2 folds");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [cls, idx] : by_class)
        if (static_cast<int>(idx.size()) < folds)
            throw ContractError("kfold_split: class " + std::to_string(cls) + " has only " +
                                std::to_string(idx.size()) + " samples for " + std::to_string(folds) +
                                " folds");

    std::vector<std::vector<int>> test_sets(static_cast<std::size_t>(folds));
    for (auto& [cls, idx] : by_class) {
        RngStream rng(seed, "kfold.class" + std::to_string(cls));
        rng.shuffle(idx);
        const int count = static_cast<int>(idx.size());
        const int base = count / folds, extra = count % folds;
        int cursor = 0;
        for (int f = 0; f < folds; ++f) {
            const int take = base + (f < extra ? 1 : 0);
            for (int k = 0; k < take; ++k)
                test_sets[static_cast<std::size_t>(f)].push_back(idx[static_cast<std::size_t>(cursor++)]);
        }
    }

    std::vector<std::pair<std::vector<int>, std::vector<int>>> splits;
    std::vector<char> in_test(labels.size());
    for (int f = 0; f < folds; ++f) {
        auto& test = test_sets[static_cast<std::size_t>(f)];
        std::sort(test.begin(), test.end());
        std::fill(in_test.begin(), in_test.end(), 0);
        for (int i : test) in_test[static_cast<std::size_t>(i)] = 1;
        std::vector<int> train;
        train.reserve(labels.size() - test.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (!in_test[i]) train.push_back(static_cast<int>(i));
        splits.emplace_back(std::move(train), std::move(test));
    }
    return splits;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

template <class Model>
Metrics evaluate(const Model& model, const std::vector<const Tensor*>& inputs,
                 std::span<const int> labels) {
    if (inputs.empty()) throw ContractError("evaluate: empty sample set");
    const std::vector<int> pred = model.predict(inputs);
    Metrics m;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (labels[i] == 1)
            ++(pred[i] == 1 ? m.tp : m.fn);
        else
            ++(pred[i] == 0 ? m.tn : m.fp);
    }
    return m;
}

// ---------------------------------------------------------------------------
// fit / cross-validation
// ---------------------------------------------------------------------------

struct FoldResult {
    int fold = 0;
    bool failed = false;
    std::string diagnostic;
    Metrics metrics;
    std::vector<double> loss_curve;  // mean batch loss per epoch
    std::vector<double> lr_curve;
    std::vector<Tensor> adjacency_snapshots;  // realized adjacency per graph
};

struct TrainReport {
    std::vector<FoldResult> folds;

    std::vector<double> fold_accuracies() const {
        std::vector<double> out;
        for (const auto& f : folds)
            if (!f.failed)
                if (auto a = f.metrics.accuracy()) out.push_back(*a);
        return out;
    }
};

// mean and sample standard deviation (sd of a single value is 0)
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return {mean, std::sqrt(acc / static_cast<double>(v.size() - 1))};
}

// Seeded-shuffle mini-batch training with the cosine warm-up schedule. The
// last short batch is kept. A non-finite batch loss aborts the fold and marks
// it failed instead of propagating garbage into the report.
template <class Model>
void fit_classifier(Model& model, const std::vector<Tensor>& inputs, const std::vector<int>& labels,
                    const std::vector<int>& train_idx, const TrainConfig& tc, std::uint64_t run_seed,
                    FoldResult& out) {
    if (train_idx.empty()) throw ContractError("fit: empty training set");
    AdamOptimizer optimizer(model.trainable());
    RngStream dropout_rng(run_seed, "dropout");
    Tape tape;
    std::vector<int> order = train_idx;
    std::vector<const Tensor*> batch_in;
    std::vector<int> batch_lab;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = cosine_warmup_lr(epoch, tc);
        RngStream shuffle_rng(run_seed, "shuffle.epoch" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            batch_in.clear();
            batch_lab.clear();
            for (std::size_t i = start; i < stop; ++i) {
                batch_in.push_back(&inputs[static_cast<std::size_t>(order[i])]);
                batch_lab.push_back(labels[static_cast<std::size_t>(order[i])]);
            }
            tape.clear();
            Tensor loss = model.batch_loss(tape, batch_in, batch_lab, /*training=*/true, dropout_rng);
            if (!std::isfinite(loss[0])) {
                out.failed = true;
                out.diagnostic = "training diverged: non-finite loss in epoch " + std::to_string(epoch);
                return;
            }
            optimizer.zero_grad();
            tape.backward(loss);
            optimizer.step(lr);
            epoch_loss += loss[0];
            ++batches;
        }
        out.loss_curve.push_back(epoch_loss / batches);
        out.lr_curve.push_back(lr);
    }
}

// Runs tasks 0..count-1 on up to `workers` threads; any task exception is
// rethrown on the caller after all workers drain.
inline void run_parallel(int count, const std::function<void(int)>& task, int workers) {
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            try {
                task(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int nthreads = std::min(workers, count);
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int w = 0; w < nthreads; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Stratified k-fold cross-validation. Each fold builds its model through the
// factory (which sees only that fold's training indices), trains with seed
// seed + fold, and evaluates on the held-out fold.
template <class Factory>
TrainReport cross_validate(const Dataset& ds, const Factory& factory, const TrainConfig& tc,
                           int workers = 1) {
    tc.validate();
    if (ds.samples.empty()) throw ContractError("cross_validate: empty dataset");
    const std::vector<int> labels = ds.labels();
    const auto splits = kfold_split(labels, tc.folds, tc.seed);
    TrainReport report;
    report.folds.resize(splits.size());
    run_parallel(
        static_cast<int>(splits.size()),
        [&](int f) {
            const auto& [train_idx, test_idx] = splits[static_cast<std::size_t>(f)];
            const std::uint64_t fold_seed = tc.seed + static_cast<std::uint64_t>(f);
            auto [model, inputs] = factory(ds, train_idx, fold_seed);
            FoldResult& out = report.folds[static_cast<std::size_t>(f)];
            out.fold = f;
            fit_classifier(model, inputs, labels, train_idx, tc, fold_seed, out);
            if (out.failed) return;
            std::vector<const Tensor*> test_in;
            std::vector<int> test_lab;
            for (int idx : test_idx) {
                test_in.push_back(&inputs[static_cast<std::size_t>(idx)]);
                test_lab.push_back(labels[static_cast<std::size_t>(idx)]);
            }
            out.metrics = evaluate(model, test_in, test_lab);
            out.adjacency_snapshots = model.adjacency_snapshots();
        },
        workers);
    return report;
}

// Fits one model on the whole dataset (no held-out fold); used to produce
// checkpoints and transfer sources.
template <class Factory>
auto train_full(const Dataset& ds, const Factory& factory, const TrainConfig& tc) {
    if (ds.samples.empty()) throw ContractError("train_full: empty dataset");
    std::vector<int> all(ds.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    auto [model, inputs] = factory(ds, all, tc.seed);
    FoldResult record;
    fit_classifier(model, inputs, ds.labels(), all, tc, tc.seed, record);
    if (record.failed) throw Error("train_full: " + record.diagnostic);
    return std::make_pair(std::move(model), std::move(record));
}

}  // namespace dastgcn
