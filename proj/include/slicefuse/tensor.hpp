#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "slicefuse/common.hpp"

namespace slicefuse {

// Dense row-major matrix of 64-bit reals. Vectors are single-row matrices and
// scalars are 1x1; that covers every shape this project manipulates. Tensors
// are plain values: copyable, immutable-by-convention once placed on a tape,
// and safe to share read-only across threads.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) {
            throw ShapeError("Tensor: value count " + std::to_string(values_.size()) +
                             " does not match shape " + shape_string(rows_, cols_));
        }
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }

    static Tensor full(std::size_t rows, std::size_t cols, double v) {
        Tensor t(rows, cols);
        for (auto& x : t.values_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(1, n, std::move(v));
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor t(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("Tensor::from_rows: ragged rows");
            for (double v : row) t.values_[i++] = v;
        }
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t(n, n);
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    Tensor row_slice(std::size_t r) const {
        if (r >= rows_) throw ShapeError("Tensor::row_slice: row out of range");
        Tensor out(1, cols_);
        for (std::size_t c = 0; c < cols_; ++c) out[c] = at(r, c);
        return out;
    }

    // Row-major flatten into a single row.
    Tensor flatten() const { return Tensor(1, size(), values_); }

    Tensor reshape(std::size_t rows, std::size_t cols) const {
        if (rows * cols != size()) throw ShapeError("Tensor::reshape: element count mismatch");
        return Tensor(rows, cols, values_);
    }

    bool operator==(const Tensor& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && values_ == o.values_;
    }

    static std::string shape_string(std::size_t r, std::size_t c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }
    std::string shape_string() const { return shape_string(rows_, cols_); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// ---- value-level arithmetic (no differentiation) ----

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree: " + a.shape_string() + " x " +
                         b.shape_string());
    }
    Tensor out(a.rows(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j) {
                out.at(i, j) += av * b.at(p, j);
            }
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add: shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Tensor add_values(Tensor a, const Tensor& b) {
    add_inplace(a, b);
    return a;
}

inline Tensor hadamard_values(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("mul: shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline Tensor scale_values(Tensor a, double k) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= k;
    return a;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor sigmoid_values(Tensor a) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = sigmoid(a[i]);
    return a;
}

inline std::uint64_t checksum(const Tensor& t, std::uint64_t h = 0xcbf29ce484222325ull) {
    const std::uint64_t dims[2] = {t.rows(), t.cols()};
    h = fnv1a64(dims, sizeof(dims), h);
    return fnv1a64(t.values(), h);
}

}  // namespace slicefuse
