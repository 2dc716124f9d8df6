#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace iognn {

/// Dense row-major matrix of doubles. The single value type for signals,
/// weights and shift operators.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        check_dims();
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        check_dims();
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix " + shape_string(rows_, cols_) + " given " +
                             std::to_string(data_.size()) + " values");
        }
        for (double v : data_) {
            if (!std::isfinite(v)) throw NumericError("matrix constructed with a non-finite entry");
        }
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        check_dims();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("ragged initializer for matrix");
            for (double v : r) {
                if (!std::isfinite(v)) throw NumericError("matrix constructed with a non-finite entry");
                data_.push_back(v);
            }
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::string shape() const { return shape_string(rows_, cols_); }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    static std::string shape_string(std::size_t r, std::size_t c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }

private:
    void check_dims() const {
        if (rows_ == 0 || cols_ == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows_, cols_));
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Untracked dense kernels. The tape reuses these for forward values and
// gradients; oracles and closed-form solvers call them directly.
namespace linalg {

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + a.shape() + " * " + b.shape() + ")");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            const double* bp = b.row(p).data();
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

/// aᵀ·b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: row counts differ (" + a.shape() + "ᵀ * " + b.shape() + ")");
    }
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Matrix c(m, n);
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a.row(p).data();
        const double* bp = b.row(p).data();
        for (std::size_t i = 0; i < m; ++i) {
            const double api = ap[i];
            if (api == 0.0) continue;
            double* ci = &c(i, 0);
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
    return c;
}

/// a·bᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: column counts differ (" + a.shape() + " * " + b.shape() + "ᵀ)");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Matrix c(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c(i, j) = s;
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shapes differ (" + a.shape() + " vs " + b.shape() + ")");
    }
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    auto cv = c.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += bv[i];
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c = a;
    auto cv = c.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
    return c;
}

inline Matrix scale(double alpha, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.values()) v *= alpha;
    return c;
}

/// a += alpha * b, in place.
inline void axpy(double alpha, const Matrix& b, Matrix& a) {
    require_same_shape(a, b, "axpy");
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += alpha * bv[i];
}

inline double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return s;
}

inline double trace(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("trace: matrix is not square (" + a.shape() + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
    return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

/// Rows `index[i]` of `a`, in order.
inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> index) {
    if (index.empty()) throw EmptySelectionError("gather_rows: empty row selection");
    Matrix out(index.size(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= a.rows()) throw ValidationError("gather_rows: row index out of range");
        auto src = a.row(index[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// Column-major stacking into an (rows*cols)x1 column.
inline Matrix vec(const Matrix& a) {
    Matrix v(a.rows() * a.cols(), 1);
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) v(j * a.rows() + i, 0) = a(i, j);
    return v;
}

/// Inverse of vec: reads `v` (any shape, taken in storage order as a flat
/// sequence) column-major into a `rows`-row matrix.
inline Matrix unvec(const Matrix& v, std::size_t rows) {
    if (rows == 0 || v.size() % rows != 0) {
        throw ShapeError("unvec: length " + std::to_string(v.size()) + " not divisible by " + std::to_string(rows));
    }
    const std::size_t cols = v.size() / rows;
    Matrix a(rows, cols);
    auto flat = v.values();
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) a(i, j) = flat[j * rows + i];
    return a;
}

} // namespace linalg
} // namespace iognn
