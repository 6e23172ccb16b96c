#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modas/errors.hpp"

namespace modas {

/// Dense real-valued array in row-major order. Rank 0 (scalar), 1 (vector)
/// and 2 (matrix) are what the library actually uses. Extents are strictly
/// positive; a default-constructed Tensor is the scalar 0.
class Tensor {
public:
    Tensor() : values_(1, 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        long n = 1;
        for (int d : shape_) {
            if (d <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(d));
            n *= d;
        }
        if (n != static_cast<long>(values_.size())) {
            throw ShapeError("tensor value count " + std::to_string(values_.size()) +
                             " does not match shape product " + std::to_string(n));
        }
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(std::vector<int> shape) {
        long n = 1;
        for (int d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int> shape, double v) {
        long n = 1;
        for (int d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    static Tensor from_vector(std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(int rows, int cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    long size() const { return static_cast<long>(values_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    int rows() const { return rank() == 2 ? shape_[0] : throw_rank2("rows"); }
    int cols() const { return rank() == 2 ? shape_[1] : throw_rank2("cols"); }

    bool is_scalar() const { return size() == 1; }

    double value() const {
        if (!is_scalar()) throw ShapeError("value() on non-scalar tensor");
        return values_[0];
    }

    double operator[](long i) const { return values_[static_cast<std::size_t>(i)]; }
    double& operator[](long i) { return values_[static_cast<std::size_t>(i)]; }

    double at(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols() + c]; }
    double& at(int r, int c) { return values_[static_cast<std::size_t>(r) * cols() + c]; }

    std::span<const double> data() const { return values_; }
    std::span<double> data() { return values_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    int throw_rank2(const char* what) const {
        throw ShapeError(std::string(what) + "() on tensor of rank " + std::to_string(rank()));
    }

    std::vector<int> shape_;
    std::vector<double> values_;
};

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    double s = 0.0;
    for (long i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm_sq(const Tensor& a) { return dot(a, a); }
inline double l2_norm(const Tensor& a) { return std::sqrt(l2_norm_sq(a)); }

inline double linf_norm(const Tensor& a) {
    double m = 0.0;
    for (long i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

/// y += a * x
inline void axpy(double a, const Tensor& x, Tensor& y) {
    if (!x.same_shape(y)) throw ShapeError("axpy: shape mismatch");
    for (long i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// a + s * b, elementwise.
inline Tensor add_scaled(const Tensor& a, double s, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add_scaled: shape mismatch");
    Tensor out = a;
    for (long i = 0; i < out.size(); ++i) out[i] += s * b[i];
    return out;
}

/// Numerically stable softmax of a contiguous run of values (max-subtraction).
inline void softmax_inplace(std::span<double> v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        z += x;
    }
    for (double& x : v) x /= z;
}

}  // namespace modas
