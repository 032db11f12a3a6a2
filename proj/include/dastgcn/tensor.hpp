#pragma once

// Dense row-major double tensor. A Tensor is a cheap shared handle onto its
// payload (same convention as the big frameworks): const applies to the
// handle, not the buffer, which is what lets autodiff closures accumulate
// gradients into leaves captured by value.

#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dastgcn/errors.hpp"
#include "dastgcn/rng.hpp"

namespace dastgcn {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
struct TensorPayload {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : Tensor(std::move(shape), 0.0) {}

    Tensor(std::vector<int> shape, double fill)
        : p_(std::make_shared<detail::TensorPayload>()) {
        p_->shape = std::move(shape);
        p_->values.assign(count(p_->shape), fill);
    }

    Tensor(std::vector<int> shape, std::vector<double> values)
        : p_(std::make_shared<detail::TensorPayload>()) {
        if (count(shape) != values.size())
            throw DimensionError("tensor init: " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        p_->shape = std::move(shape);
        p_->values = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    static Tensor identity(int n) {
        Tensor t({n, n});
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    bool defined() const { return p_ != nullptr; }
    const std::vector<int>& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    int dim(int axis) const { return p_->shape[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return p_->values.size(); }

    double* data() const { return p_->values.data(); }
    std::vector<double>& values() const { return p_->values; }

    double& operator[](std::size_t i) const { return p_->values[i]; }

    double& at(int i) const { return p_->values[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) const {
        return p_->values[static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)];
    }
    double& at(int i, int j, int k) const {
        return p_->values[(static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                          static_cast<std::size_t>(k)];
    }
    double& at(int i, int j, int k, int l) const {
        return p_->values[((static_cast<std::size_t>(i) * su(1) + static_cast<std::size_t>(j)) * su(2) +
                           static_cast<std::size_t>(k)) *
                              su(3) +
                          static_cast<std::size_t>(l)];
    }

    bool requires_grad() const { return p_->requires_grad; }
    const Tensor& set_requires_grad(bool v = true) const {
        p_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }
    std::vector<double>& grad() const {
        if (p_->grad.empty()) p_->grad.assign(p_->values.size(), 0.0);
        return p_->grad;
    }
    void zero_grad() const {
        if (!p_->grad.empty()) p_->grad.assign(p_->values.size(), 0.0);
    }
    void drop_grad() const { p_->grad.clear(); }

    Tensor grad_tensor() const {
        Tensor g(p_->shape);
        if (has_grad()) g.values() = p_->grad;
        return g;
    }

    // Deep copy, detached from gradients.
    Tensor clone() const {
        Tensor t(p_->shape);
        t.values() = p_->values;
        return t;
    }

    bool same_shape(const Tensor& o) const { return p_->shape == o.p_->shape; }

    // Identity of the underlying buffer, used to deduplicate shared parameters.
    const void* payload_id() const { return p_.get(); }

private:
    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    std::size_t su(int axis) const { return static_cast<std::size_t>(p_->shape[static_cast<std::size_t>(axis)]); }

    std::shared_ptr<detail::TensorPayload> p_;
};

inline void fill_uniform(const Tensor& t, RngStream& rng, double lo, double hi) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
}

inline void fill_normal(const Tensor& t, RngStream& rng, double mean, double sd) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(mean, sd);
}

}  // namespace dastgcn
