#pragma once

// Central finite-difference verification of the tape gradients. The checked
// function rebuilds its graph from the given leaf tensors on every call, so
// perturbing a leaf in place is enough to probe one coordinate.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dastgcn/autodiff.hpp"
#include "dastgcn/errors.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool finite = true;  // false if any probe produced a non-finite loss
    std::size_t worst_leaf = 0;
    std::size_t worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;

    std::string describe() const {
        if (!finite) return "non-finite loss during probing";
        return "max rel err " + std::to_string(max_rel_err) + " at leaf " + std::to_string(worst_leaf) +
               " coord " + std::to_string(worst_coord) + " (analytic " + std::to_string(analytic) +
               ", numeric " + std::to_string(numeric) + ")";
    }
};

// f must return a scalar loss built on the supplied tape from `leaves`.
// Returns the worst relative error between the tape gradient and a central
// difference, with denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport finite_diff_check(const std::function<Tensor(Tape&)>& f,
                                         const std::vector<Tensor>& leaves, double eps = 1e-5) {
    if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");

    for (const Tensor& leaf : leaves) {
        leaf.set_requires_grad();
        leaf.drop_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    if (loss.size() != 1)
        throw ContractError("finite_diff_check: function must produce a scalar loss");
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());

    GradCheckReport report;
    Tape quiet;
    quiet.set_recording(false);
    auto eval = [&]() {
        Tensor v = f(quiet);
        return v[0];
    };
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& leaf = leaves[li];
        for (std::size_t ci = 0; ci < leaf.size(); ++ci) {
            const double orig = leaf[ci];
            leaf[ci] = orig + eps;
            const double fp = eval();
            leaf[ci] = orig - eps;
            const double fm = eval();
            leaf[ci] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.finite = false;
                report.worst_leaf = li;
                report.worst_coord = ci;
                return report;
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            const double ana = analytic[li][ci];
            const double denom = std::max({std::abs(numeric), std::abs(ana), 1e-8});
            const double rel = std::abs(numeric - ana) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_leaf = li;
                report.worst_coord = ci;
                report.analytic = ana;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace dastgcn
