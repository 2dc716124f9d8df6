#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"
#include "layers.hpp"

namespace iognn {

/// Declared input (n_in x f_in) and output (n_out x f_out) of a latent map.
struct TransformShape {
    std::size_t n_in = 0, f_in = 0, n_out = 0, f_out = 0;
};

/// Z_Y = Z_Xᵀ. Swaps the roles of nodes and features.
struct TransposeMap {
    std::size_t n_x = 0, f_zx = 0;
};

/// Z_Y = W_N·Z_X.
struct LinearNodeMap {
    Parameter w_n; // n_y x n_x
    std::size_t features = 0;
    bool learnable = true;
};

/// Z_Y = W_N·Z_X·W_Fᵀ, i.e. vec(Z_Y) = (W_F ⊗ W_N)·vec(Z_X).
struct KroneckerProductMap {
    Parameter w_n; // n_y x n_x
    Parameter w_f; // f_zy x f_zx
    bool learnable = true;
};

/// Z_Y = W_N·Z_X + Z_X·W_Fᵀ. Shape preserving.
struct KroneckerSumMap {
    Parameter w_n; // n x n
    Parameter w_f; // f x f
    bool learnable = true;
};

/// vec(Z_Y) = W_Y·σ(W_Xᵀ·vec(Z_X)); σ is the identity for the plain
/// low-rank map and a pointwise nonlinearity for the two-layer perceptron.
struct LowRankVecMap {
    Parameter w_x; // (n_x*f_zx) x K
    Parameter w_y; // (n_y*f_zy) x K
    std::size_t n_x = 0, f_zx = 0, n_y = 0, f_zy = 0;
    bool learn_x = true;
    bool learn_y = true;
    Activation hidden = Activation::identity;

    std::size_t rank() const { return w_x.value.cols(); }
};

/// vec(Z_Y) = W·vec(Z_X) with a dense W.
struct DenseVecMap {
    Parameter w; // (n_y*f_zy) x (n_x*f_zx)
    std::size_t n_x = 0, f_zx = 0, n_y = 0, f_zy = 0;
};

/// Copies the rows of overlapping nodes; rows of output nodes without a
/// counterpart stay zero.
struct CopyCommonMap {
    NodeMap map;
    std::size_t n_x = 0, n_y = 0, features = 0;
};

/// Each output row is the plain mean of the k input rows closest in
/// coordinate space. Ties at equal distance go to the lower input id.
struct KnnSelectionMap {
    Matrix coords_x; // n_x x d
    Matrix coords_y; // n_y x d
    std::size_t k = 1;
    std::size_t features = 0;
    Matrix averaging; // n_y x n_x, rows hold 1/k on the selected inputs
};

/// Dense stack acting across rows: applied to Z_Xᵀ then transposed back.
struct RowMlpMap {
    GNNStack mlp; // widths n_x ... n_y
    std::size_t features = 0;
};

inline Matrix knn_averaging_matrix(const Matrix& coords_x, const Matrix& coords_y, std::size_t k) {
    if (coords_x.cols() != coords_y.cols()) throw ShapeError("selection_knn: coordinate dimensions differ");
    if (k == 0) throw ParameterError("selection_knn: k must be >= 1");
    if (k > coords_x.rows()) {
        throw ParameterError("selection_knn: k = " + std::to_string(k) + " exceeds the " +
                             std::to_string(coords_x.rows()) + " input nodes");
    }
    const std::size_t nx = coords_x.rows(), ny = coords_y.rows(), d = coords_x.cols();
    Matrix m(ny, nx);
    std::vector<std::pair<double, std::size_t>> dist(nx);
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = coords_y(j, c) - coords_x(i, c);
                s += diff * diff;
            }
            dist[i] = {s, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        for (std::size_t t = 0; t < k; ++t) m(j, dist[t].second) = 1.0 / static_cast<double>(k);
    }
    return m;
}

/// One latent map ψ^Z from signals on the input graph to signals on the
/// output graph.
class Transform {
public:
    using Variant = std::variant<TransposeMap, LinearNodeMap, KroneckerProductMap, KroneckerSumMap, LowRankVecMap,
                                 DenseVecMap, CopyCommonMap, KnnSelectionMap, RowMlpMap>;

    Transform() : impl_(TransposeMap{}) {}
    explicit Transform(Variant v) : impl_(std::move(v)) {}

    // Factories ------------------------------------------------------------

    static Transform transpose(std::size_t n_x, std::size_t f_zx) { return Transform(TransposeMap{n_x, f_zx}); }

    static Transform linear_node(std::size_t n_x, std::size_t n_y, std::size_t features, Rng& rng,
                                 bool learnable = true) {
        return Transform(LinearNodeMap{Parameter("psi_z.w_n", glorot_uniform(n_y, n_x, rng)), features, learnable});
    }

    /// W_N fixed to the identity (n_x == n_y).
    static Transform identity_node(std::size_t n, std::size_t features) {
        return Transform(LinearNodeMap{Parameter("psi_z.w_n", Matrix::identity(n)), features, false});
    }

    static Transform kronecker_product(std::size_t n_x, std::size_t f_zx, std::size_t n_y, std::size_t f_zy, Rng& rng,
                                       bool learnable = true) {
        return Transform(KroneckerProductMap{Parameter("psi_z.w_n", glorot_uniform(n_y, n_x, rng)),
                                             Parameter("psi_z.w_f", glorot_uniform(f_zy, f_zx, rng)), learnable});
    }

    static Transform kronecker_sum(std::size_t n, std::size_t f, Rng& rng, bool learnable = true) {
        return Transform(KroneckerSumMap{Parameter("psi_z.w_n", glorot_uniform(n, n, rng)),
                                         Parameter("psi_z.w_f", glorot_uniform(f, f, rng)), learnable});
    }

    static Transform low_rank_vec(std::size_t n_x, std::size_t f_zx, std::size_t n_y, std::size_t f_zy, std::size_t k,
                                  Rng& rng, bool learn_x = true, bool learn_y = true,
                                  Activation hidden = Activation::identity) {
        if (k == 0) throw ParameterError("low_rank_vec: rank K must be >= 1");
        const double gain = 1.0 / std::sqrt(static_cast<double>(k));
        LowRankVecMap m{Parameter("psi_z.w_x", glorot_uniform(n_x * f_zx, k, rng, gain)),
                        Parameter("psi_z.w_y", glorot_uniform(n_y * f_zy, k, rng, gain)),
                        n_x, f_zx, n_y, f_zy, learn_x, learn_y, hidden};
        return Transform(std::move(m));
    }

    static Transform dense_vec(std::size_t n_x, std::size_t f_zx, std::size_t n_y, std::size_t f_zy, Rng& rng) {
        return Transform(
            DenseVecMap{Parameter("psi_z.w", glorot_uniform(n_y * f_zy, n_x * f_zx, rng)), n_x, f_zx, n_y, f_zy});
    }

    static Transform copy_common(NodeMap map, std::size_t n_x, std::size_t n_y, std::size_t features) {
        map.validate(n_x, n_y);
        return Transform(CopyCommonMap{std::move(map), n_x, n_y, features});
    }

    static Transform selection_knn(Matrix coords_x, Matrix coords_y, std::size_t k, std::size_t features) {
        Matrix avg = knn_averaging_matrix(coords_x, coords_y, k);
        return Transform(KnnSelectionMap{std::move(coords_x), std::move(coords_y), k, features, std::move(avg)});
    }

    /// Row MLP n_x → hidden... → n_y; `hidden` on inner layers, identity
    /// on the last.
    static Transform row_mlp(std::size_t n_x, std::vector<std::size_t> hidden_widths, std::size_t n_y,
                             std::size_t features, Activation hidden, Rng& rng) {
        std::vector<std::size_t> widths{n_x};
        widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
        widths.push_back(n_y);
        RowMlpMap m{GNNStack(chain_specs(LayerKind::dense, widths, hidden, Activation::identity), rng, "psi_z.mlp"),
                    features};
        return Transform(std::move(m));
    }

    // Introspection ----------------------------------------------------------

    const Variant& variant() const noexcept { return impl_; }
    Variant& variant() noexcept { return impl_; }

    std::string kind_name() const {
        return std::visit(
            [](const auto& m) -> std::string {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, TransposeMap>) return "transpose";
                else if constexpr (std::is_same_v<T, LinearNodeMap>) return "linear_node";
                else if constexpr (std::is_same_v<T, KroneckerProductMap>) return "kronecker_product";
                else if constexpr (std::is_same_v<T, KroneckerSumMap>) return "kronecker_sum";
                else if constexpr (std::is_same_v<T, LowRankVecMap>) return "low_rank_vec";
                else if constexpr (std::is_same_v<T, DenseVecMap>) return "dense_vec";
                else if constexpr (std::is_same_v<T, CopyCommonMap>) return "copy_common";
                else if constexpr (std::is_same_v<T, KnnSelectionMap>) return "selection_knn";
                else return "row_mlp";
            },
            impl_);
    }

    TransformShape shape() const {
        return std::visit(
            [](const auto& m) -> TransformShape {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, TransposeMap>) {
                    return {m.n_x, m.f_zx, m.f_zx, m.n_x};
                } else if constexpr (std::is_same_v<T, LinearNodeMap>) {
                    return {m.w_n.value.cols(), m.features, m.w_n.value.rows(), m.features};
                } else if constexpr (std::is_same_v<T, KroneckerProductMap>) {
                    return {m.w_n.value.cols(), m.w_f.value.cols(), m.w_n.value.rows(), m.w_f.value.rows()};
                } else if constexpr (std::is_same_v<T, KroneckerSumMap>) {
                    return {m.w_n.value.rows(), m.w_f.value.rows(), m.w_n.value.rows(), m.w_f.value.rows()};
                } else if constexpr (std::is_same_v<T, LowRankVecMap> || std::is_same_v<T, DenseVecMap>) {
                    return {m.n_x, m.f_zx, m.n_y, m.f_zy};
                } else if constexpr (std::is_same_v<T, CopyCommonMap>) {
                    return {m.n_x, m.features, m.n_y, m.features};
                } else if constexpr (std::is_same_v<T, KnnSelectionMap>) {
                    return {m.coords_x.rows(), m.features, m.coords_y.rows(), m.features};
                } else {
                    return {m.mlp.in_features(), m.features, m.mlp.out_features(), m.features};
                }
            },
            impl_);
    }

    bool learnable() const { return !const_cast<Transform*>(this)->parameters().empty(); }

    /// Parameters that receive gradient updates (frozen factors excluded).
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        std::visit(
            [&](auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, LinearNodeMap>) {
                    if (m.learnable) out.push_back(&m.w_n);
                } else if constexpr (std::is_same_v<T, KroneckerProductMap> || std::is_same_v<T, KroneckerSumMap>) {
                    if (m.learnable) {
                        out.push_back(&m.w_n);
                        out.push_back(&m.w_f);
                    }
                } else if constexpr (std::is_same_v<T, LowRankVecMap>) {
                    if (m.learn_x) out.push_back(&m.w_x);
                    if (m.learn_y) out.push_back(&m.w_y);
                } else if constexpr (std::is_same_v<T, DenseVecMap>) {
                    out.push_back(&m.w);
                } else if constexpr (std::is_same_v<T, RowMlpMap>) {
                    out = m.mlp.parameters();
                }
            },
            impl_);
        return out;
    }

    /// Every stored matrix that defines the map, learnable or not.
    std::vector<Parameter*> all_weights() {
        std::vector<Parameter*> out;
        std::visit(
            [&](auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, LinearNodeMap>) {
                    out.push_back(&m.w_n);
                } else if constexpr (std::is_same_v<T, KroneckerProductMap> || std::is_same_v<T, KroneckerSumMap>) {
                    out.push_back(&m.w_n);
                    out.push_back(&m.w_f);
                } else if constexpr (std::is_same_v<T, LowRankVecMap>) {
                    out.push_back(&m.w_x);
                    out.push_back(&m.w_y);
                } else if constexpr (std::is_same_v<T, DenseVecMap>) {
                    out.push_back(&m.w);
                } else if constexpr (std::is_same_v<T, RowMlpMap>) {
                    out = m.mlp.parameters();
                }
            },
            impl_);
        return out;
    }

    // Application -------------------------------------------------------------

    Var apply(Tape& tape, Var z) {
        const TransformShape sh = shape();
        if (z.rows() != sh.n_in || z.cols() != sh.f_in) {
            throw ShapeError("psi_z (" + kind_name() + "): expects " + Matrix::shape_string(sh.n_in, sh.f_in) +
                             " input, got " + z.value().shape());
        }
        return std::visit([&](auto& m) { return apply_impl(tape, m, z); }, impl_);
    }

private:
    static Var leaf(Tape& tape, Parameter& p, bool learn) { return learn ? tape.param(p) : tape.constant(p.value); }

    static Var apply_impl(Tape&, TransposeMap&, Var z) { return iognn::transpose(z); }

    static Var apply_impl(Tape& tape, LinearNodeMap& m, Var z) { return matmul(leaf(tape, m.w_n, m.learnable), z); }

    static Var apply_impl(Tape& tape, KroneckerProductMap& m, Var z) {
        Var wn = leaf(tape, m.w_n, m.learnable);
        Var wf = leaf(tape, m.w_f, m.learnable);
        return matmul(matmul(wn, z), iognn::transpose(wf));
    }

    static Var apply_impl(Tape& tape, KroneckerSumMap& m, Var z) {
        Var wn = leaf(tape, m.w_n, m.learnable);
        Var wf = leaf(tape, m.w_f, m.learnable);
        return add(matmul(wn, z), matmul(z, iognn::transpose(wf)));
    }

    static Var apply_impl(Tape& tape, LowRankVecMap& m, Var z) {
        Var wx = leaf(tape, m.w_x, m.learn_x);
        Var wy = leaf(tape, m.w_y, m.learn_y);
        Var code = activate(matmul(iognn::transpose(wx), vec(z)), m.hidden);
        return unvec(matmul(wy, code), m.n_y);
    }

    static Var apply_impl(Tape& tape, DenseVecMap& m, Var z) {
        return unvec(matmul(tape.param(m.w), vec(z)), m.n_y);
    }

    static Var apply_impl(Tape&, CopyCommonMap& m, Var z) {
        std::vector<std::size_t> src, dst;
        for (auto [i, j] : m.map.pairs) {
            src.push_back(i);
            dst.push_back(j);
        }
        return scatter_rows(z, src, dst, m.n_y);
    }

    static Var apply_impl(Tape& tape, KnnSelectionMap& m, Var z) { return matmul(tape.constant(m.averaging), z); }

    static Var apply_impl(Tape& tape, RowMlpMap& m, Var z) {
        return iognn::transpose(m.mlp.forward(tape, iognn::transpose(z)));
    }

    Variant impl_;
};

/// Two-sided projection of the low-rank map: each view goes to a 1xK code
/// through its own factor, (vec(Z_X)ᵀ·W_X, vec(Z_Y)ᵀ·W_Y).
inline std::pair<Var, Var> symmetric_project(Tape& tape, Transform& t, Var z_x, Var z_y) {
    auto* m = std::get_if<LowRankVecMap>(&t.variant());
    if (!m) throw ParameterError("symmetric_project needs the low_rank_vec transform, got " + t.kind_name());
    if (z_x.rows() != m->n_x || z_x.cols() != m->f_zx) {
        throw ShapeError("symmetric_project: X view " + z_x.value().shape() + " vs declared " +
                         Matrix::shape_string(m->n_x, m->f_zx));
    }
    if (z_y.rows() != m->n_y || z_y.cols() != m->f_zy) {
        throw ShapeError("symmetric_project: Y view " + z_y.value().shape() + " vs declared " +
                         Matrix::shape_string(m->n_y, m->f_zy));
    }
    Var wx = m->learn_x ? tape.param(m->w_x) : tape.constant(m->w_x.value);
    Var wy = m->learn_y ? tape.param(m->w_y) : tape.constant(m->w_y.value);
    Var cx = iognn::transpose(matmul(iognn::transpose(wx), vec(z_x)));
    Var cy = iognn::transpose(matmul(iognn::transpose(wy), vec(z_y)));
    return {cx, cy};
}

} // namespace iognn
