#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "layers.hpp"
#include "optimizer.hpp"
#include "training.hpp"

namespace iognn {

struct EigenDecomposition {
    std::vector<double> values; // descending
    Matrix vectors;             // column k pairs with values[k]
};

/// Cyclic Jacobi. Stops once every off-diagonal magnitude is below
/// tol·max(1, ‖A‖_F).
inline EigenDecomposition sym_eig(const Matrix& a, double tol = 1e-14) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("sym_eig: matrix " + a.shape() + " is not square");
    const double scale = std::max(1.0, std::sqrt(linalg::frobenius_sq(a)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-10 * scale) {
                throw ValidationError("sym_eig: matrix is not symmetric at (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ")");
            }

    Matrix m = a;
    Matrix q = Matrix::identity(n);
    const double thresh = tol * scale;
    auto off_max = [&] {
        double mx = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) mx = std::max(mx, std::abs(m(i, j)));
        return mx;
    };

    std::size_t sweep = 0;
    while (off_max() >= thresh) {
        if (++sweep > 100) throw NumericError("sym_eig: no convergence after 100 sweeps");
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t r = p + 1; r < n; ++r) {
                const double apr = m(p, r);
                if (apr == 0.0) continue;
                const double theta = (m(r, r) - m(p, p)) / (2.0 * apr);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkr = m(k, r);
                    m(k, p) = c * mkp - s * mkr;
                    m(k, r) = s * mkp + c * mkr;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mrk = m(r, k);
                    m(p, k) = c * mpk - s * mrk;
                    m(r, k) = s * mpk + c * mrk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double qkp = q(k, p), qkr = q(k, r);
                    q(k, p) = c * qkp - s * qkr;
                    q(k, r) = s * qkp + c * qkr;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });
    EigenDecomposition out{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = m(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = q(i, order[k]);
    }
    return out;
}

/// A^{-1/2} of a symmetric positive definite matrix.
inline Matrix inverse_sqrt(const Matrix& a) {
    const EigenDecomposition e = sym_eig(a);
    const std::size_t n = a.rows();
    const double floor = 1e-14 * std::max(1.0, std::abs(e.values.front()));
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        if (!(e.values[k] > floor)) {
            throw NumericError("covariance is singular (eigenvalue " + std::to_string(e.values[k]) +
                               "); use ridge > 0");
        }
        const double w = 1.0 / std::sqrt(e.values[k]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out(i, j) += w * e.vectors(i, k) * e.vectors(j, k);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear CCA

struct CCASolution {
    Matrix u;                          // n_z x N_X, rows are the X directions
    Matrix v;                          // n_z x N_Y
    std::vector<double> correlations; // non-increasing, in [0, 1]
    std::size_t n_z() const noexcept { return correlations.size(); }
};

/// Column means subtracted.
inline Matrix center_columns(const Matrix& a) {
    Matrix out = a;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) mean += a(i, j);
        mean /= static_cast<double>(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) -= mean;
    }
    return out;
}

/// (1/P)·aᵀb on centered views.
inline Matrix sample_cov(const Matrix& a_centered, const Matrix& b_centered) {
    return linalg::scale(1.0 / static_cast<double>(a_centered.rows()), linalg::matmul_tn(a_centered, b_centered));
}

inline Matrix add_ridge(Matrix s, double ridge) {
    for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) += ridge;
    return s;
}

/// Closed-form CCA of row-sample views. Auto-covariances get ridge·I before
/// whitening; T = Σ_XX^{-1/2}Σ_XYΣ_YY^{-1/2} is decomposed through eig(TTᵀ),
/// each left vector's largest-magnitude entry is made positive and the
/// paired right vector is Tᵀu/σ.
inline CCASolution linear_cca(const Matrix& xs, const Matrix& ys, std::size_t n_z, double ridge = 1e-8) {
    if (xs.rows() != ys.rows()) throw ShapeError("linear_cca: views have different sample counts");
    if (xs.rows() < 2) throw ParameterError("linear_cca: need at least two samples");
    if (n_z > std::min(xs.cols(), ys.cols())) throw ParameterError("linear_cca: n_z exceeds the smaller view width");
    if (ridge < 0.0) throw ParameterError("linear_cca: ridge must be >= 0");

    const Matrix xc = center_columns(xs), yc = center_columns(ys);
    const Matrix sxx = add_ridge(sample_cov(xc, xc), ridge);
    const Matrix syy = add_ridge(sample_cov(yc, yc), ridge);
    const Matrix sxy = sample_cov(xc, yc);
    const Matrix wx = inverse_sqrt(sxx), wy = inverse_sqrt(syy);
    const Matrix t = linalg::matmul(linalg::matmul(wx, sxy), wy);

    CCASolution sol;
    sol.correlations.resize(n_z);
    if (n_z == 0) return sol;
    const EigenDecomposition left = sym_eig(linalg::matmul_nt(t, t));
    std::optional<EigenDecomposition> right;
    Matrix uw(xs.cols(), n_z), vw(ys.cols(), n_z);
    for (std::size_t k = 0; k < n_z; ++k) {
        std::vector<double> u(xs.cols());
        std::size_t big = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            u[i] = left.vectors(i, k);
            if (std::abs(u[i]) > std::abs(u[big])) big = i;
        }
        if (u[big] < 0.0)
            for (double& e : u) e = -e;
        const double sigma = std::sqrt(std::max(0.0, left.values[k]));
        std::vector<double> v(ys.cols(), 0.0);
        if (sigma > 1e-12) {
            for (std::size_t j = 0; j < v.size(); ++j) {
                for (std::size_t i = 0; i < u.size(); ++i) v[j] += t(i, j) * u[i];
                v[j] /= sigma;
            }
        } else {
            if (!right) right = sym_eig(linalg::matmul_tn(t, t));
            for (std::size_t j = 0; j < v.size(); ++j) v[j] = right->vectors(j, k);
        }
        sol.correlations[k] = std::min(1.0, sigma);
        for (std::size_t i = 0; i < u.size(); ++i) uw(i, k) = u[i];
        for (std::size_t j = 0; j < v.size(); ++j) vw(j, k) = v[j];
    }
    // Directions in the original coordinates: U = (Σ_XX^{-1/2}·u_k)ᵀ.
    sol.u = linalg::transpose(linalg::matmul(wx, uw));
    sol.v = linalg::transpose(linalg::matmul(wy, vw));
    return sol;
}

inline double sum_correlations(const CCASolution& sol) {
    return std::accumulate(sol.correlations.begin(), sol.correlations.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Logistic classifier

struct LogisticModel {
    Matrix weights; // F x C
    Matrix bias;    // 1 x C
};

struct LogisticConfig {
    std::size_t epochs = 500;
    double lr = 0.05;
    double l2 = 1e-4;
    std::size_t num_classes = 0; // 0 = 1 + largest label
    std::uint64_t seed = 0;
};

/// Full-batch Adam on mean softmax cross-entropy + l2·‖Ξ‖²_F.
inline LogisticModel logistic_fit(const Matrix& features, std::span<const int> labels, const LogisticConfig& cfg = {}) {
    if (features.empty()) throw ParameterError("logistic_fit: no samples");
    if (labels.size() != features.rows()) throw ShapeError("logistic_fit: one label per feature row required");
    int max_label = 0;
    for (int l : labels) {
        if (l < 0) throw ValidationError("logistic_fit: negative label");
        max_label = std::max(max_label, l);
    }
    const std::size_t c = cfg.num_classes ? cfg.num_classes : static_cast<std::size_t>(max_label) + 1;
    if (static_cast<std::size_t>(max_label) >= c) throw ValidationError("logistic_fit: label outside [0, C)");

    Rng rng(cfg.seed);
    Parameter xi("logistic.weights", glorot_uniform(features.cols(), c, rng, 0.1));
    Parameter b("logistic.bias", Matrix(1, c));
    LogisticModel model{xi.value, b.value};
    if (c == 1) return model;

    OptimizerConfig oc;
    oc.lr = cfg.lr;
    Optimizer opt({&xi, &b}, oc);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        opt.zero_grad();
        Tape tape;
        Var w = tape.param(xi);
        Var logits = add_row_bias(matmul(tape.constant(features), w), tape.param(b));
        Var loss = softmax_cross_entropy(logits, labels);
        if (cfg.l2 > 0.0) loss = add(loss, scale(cfg.l2, frobenius_sq(w)));
        if (!std::isfinite(loss.scalar())) throw NumericError("logistic_fit: non-finite loss");
        tape.backward(loss);
        opt.step();
    }
    return {xi.value, b.value};
}

/// Row-wise argmax of features·Ξ + bias; ties go to the lowest class.
inline std::vector<int> logistic_predict(const LogisticModel& m, const Matrix& features) {
    if (features.cols() != m.weights.rows()) {
        throw ShapeError("logistic_predict: features have " + std::to_string(features.cols()) +
                         " columns, model expects " + std::to_string(m.weights.rows()));
    }
    Matrix scores = linalg::matmul(features, m.weights);
    for (std::size_t i = 0; i < scores.rows(); ++i)
        for (std::size_t j = 0; j < scores.cols(); ++j) scores(i, j) += m.bias(0, j);
    return argmax_rows(scores);
}

} // namespace iognn
