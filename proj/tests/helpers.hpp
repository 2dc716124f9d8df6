#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "iognn/graph.hpp"
#include "iognn/matrix.hpp"

namespace testutil {

using iognn::Graph;
using iognn::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (double& v : m.values()) v = u(rng);
    return m;
}

// Naive triple loop, independent of linalg::matmul.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline Matrix naive_power(const Matrix& s, std::size_t r) {
    Matrix out = Matrix::identity(s.rows());
    for (std::size_t i = 0; i < r; ++i) out = naive_matmul(out, s);
    return out;
}

// A ⊗ B
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            for (std::size_t p = 0; p < b.rows(); ++p)
                for (std::size_t q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
    return k;
}

// Column-major stacking written out directly.
inline Matrix naive_vec(const Matrix& m) {
    Matrix v(m.rows() * m.cols(), 1);
    std::size_t k = 0;
    for (std::size_t j = 0; j < m.cols(); ++j)
        for (std::size_t i = 0; i < m.rows(); ++i) v(k++, 0) = m(i, j);
    return v;
}

inline Matrix naive_unvec(const Matrix& v, std::size_t rows) {
    const std::size_t cols = v.size() / rows;
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) m(i, j) = v.values()[k++];
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
    return d;
}

// Erdős–Rényi graph with edge probability p.
inline Graph random_graph(std::size_t n, double p, std::mt19937_64& rng, bool random_weights = false) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<iognn::Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (u(rng) < p) edges.push_back({i, j, random_weights ? 0.5 + u(rng) : 1.0});
    return Graph(n, std::move(edges));
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// Graph relabelled so that old node i becomes perm[i].
inline Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm) {
    std::vector<iognn::Edge> edges;
    for (const auto& e : g.edges()) edges.push_back({perm[e.u], perm[e.v], e.w});
    return Graph(g.num_nodes(), std::move(edges));
}

// Rows moved so that row i lands at perm[i].
inline Matrix permute_rows(const Matrix& x, const std::vector<std::size_t>& perm) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(perm[i], j) = x(i, j);
    return out;
}

inline Matrix permute_sym(const Matrix& s, const std::vector<std::size_t>& perm) {
    Matrix out(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t j = 0; j < s.cols(); ++j) out(perm[i], perm[j]) = s(i, j);
    return out;
}

} // namespace testutil
