#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"
#include "layers.hpp"
#include "transforms.hpp"

namespace iognn {

enum class ModelMode { supervised, cca };

inline std::string to_string(ModelMode m) { return m == ModelMode::supervised ? "supervised" : "cca"; }

inline ModelMode parse_model_mode(const std::string& s) {
    if (s == "supervised") return ModelMode::supervised;
    if (s == "cca") return ModelMode::cca;
    throw ConfigError("unknown model mode '" + s + "' (expected supervised or cca)");
}

/// Which CCA branch the latent map is applied to. `input` maps the X view
/// onto the Y graph, `output` maps the Y view onto the X graph, and
/// `symmetric` projects both views to K-dimensional codes.
enum class TransformSide { input, output, symmetric };

inline std::string to_string(TransformSide s) {
    switch (s) {
    case TransformSide::input: return "input";
    case TransformSide::output: return "output";
    case TransformSide::symmetric: return "symmetric";
    }
    return "?";
}

inline TransformSide parse_transform_side(const std::string& s) {
    if (s == "input") return TransformSide::input;
    if (s == "output") return TransformSide::output;
    if (s == "symmetric") return TransformSide::symmetric;
    throw ConfigError("unknown transform side '" + s + "' (expected input, output, symmetric or auto)");
}

/// The larger graph receives the latent map.
inline TransformSide default_side(std::size_t n_x, std::size_t n_y) {
    return n_x >= n_y ? TransformSide::input : TransformSide::output;
}

/// Output shape of a block chain, used for dry-run validation.
struct ChainShape {
    std::size_t rows = 0, cols = 0;
};

/// ψ^Y ∘ ψ^Z ∘ ψ^X. In cca mode `psi_y` is the encoder of the Y view, and
/// the two embeddings are compared rather than chained.
class IOModel {
public:
    IOModel() = default;

    IOModel(ModelMode mode, GNNStack psi_x, Transform psi_z, GNNStack psi_y,
            TransformSide side = TransformSide::input)
        : mode_(mode), side_(side), psi_x_(std::move(psi_x)), psi_z_(std::move(psi_z)), psi_y_(std::move(psi_y)) {
        if (mode_ == ModelMode::supervised && side_ != TransformSide::input) {
            throw ConfigError("transform side only applies in cca mode");
        }
        if (side_ == TransformSide::symmetric && !std::holds_alternative<LowRankVecMap>(psi_z_.variant())) {
            throw ConfigError("symmetric side needs the low_rank_vec transform, got " + psi_z_.kind_name());
        }
    }

    ModelMode mode() const noexcept { return mode_; }
    TransformSide side() const noexcept { return side_; }
    GNNStack& psi_x() noexcept { return psi_x_; }
    GNNStack& psi_y() noexcept { return psi_y_; }
    Transform& psi_z() noexcept { return psi_z_; }
    const GNNStack& psi_x() const noexcept { return psi_x_; }
    const GNNStack& psi_y() const noexcept { return psi_y_; }
    const Transform& psi_z() const noexcept { return psi_z_; }

    /// Trainable parameters of all three blocks, in block order.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = psi_x_.parameters();
        for (Parameter* p : psi_z_.parameters()) out.push_back(p);
        for (Parameter* p : psi_y_.parameters()) out.push_back(p);
        return out;
    }

    /// Every stored weight, frozen ones included (what a checkpoint holds).
    std::vector<Parameter*> all_weights() {
        std::vector<Parameter*> out = psi_x_.parameters();
        for (Parameter* p : psi_z_.all_weights()) out.push_back(p);
        for (Parameter* p : psi_y_.parameters()) out.push_back(p);
        return out;
    }

    /// Ŷ = ψ^Y(ψ^Z(ψ^X(X|G_X))|G_Y).
    Var forward(Tape& tape, const Graph& g_x, const Graph& g_y, Var x) {
        if (mode_ != ModelMode::supervised) throw ConfigError("forward needs a supervised model");
        validate(g_x.num_nodes(), x.cols(), g_y.num_nodes(), 0);
        Var z_x = psi_x_.forward(tape, g_x, x);
        Var z_y = psi_z_.apply(tape, z_x);
        return psi_y_.forward(tape, g_y, z_y);
    }

    Matrix predict(const Graph& g_x, const Graph& g_y, const Matrix& x) {
        Tape tape;
        return forward(tape, g_x, g_y, tape.constant(x)).value();
    }

    /// The two views to be correlated: (ψ^Z(ψ^X(X)), ψ^Y(Y)) for the input
    /// side, (ψ^X(X), ψ^Z(ψ^Y(Y))) for the output side, and the two K-codes
    /// for the symmetric side.
    std::pair<Var, Var> cca_forward(Tape& tape, const Graph& g_x, const Graph& g_y, Var x, Var y) {
        if (mode_ != ModelMode::cca) throw ConfigError("cca_forward needs a cca model");
        validate(g_x.num_nodes(), x.cols(), g_y.num_nodes(), y.cols());
        Var e_x = psi_x_.forward(tape, g_x, x);
        Var e_y = psi_y_.forward(tape, g_y, y);
        switch (side_) {
        case TransformSide::input: return {psi_z_.apply(tape, e_x), e_y};
        case TransformSide::output: return {e_x, psi_z_.apply(tape, e_y)};
        case TransformSide::symmetric: return symmetric_project(tape, psi_z_, e_x, e_y);
        }
        return {e_x, e_y};
    }

    /// Checks the shape chain for inputs with the given sizes without running
    /// anything. `f_y` is the Y feature width (cca mode) or the target width
    /// (supervised; 0 skips that check). Returns the output shape.
    ChainShape validate(std::size_t n_x, std::size_t f_x, std::size_t n_y, std::size_t f_y) const {
        const ChainShape ex = through_stack(psi_x_, "psi_x", n_x, f_x);
        const TransformShape ts = psi_z_.shape();
        if (mode_ == ModelMode::supervised) {
            expect_transform_input(ex, ts, "psi_x");
            if (ts.n_out != n_y) {
                throw ShapeError("psi_z emits " + Matrix::shape_string(ts.n_out, ts.f_out) + " but G_Y has " +
                                 std::to_string(n_y) + " nodes");
            }
            const ChainShape out = through_stack(psi_y_, "psi_y", ts.n_out, ts.f_out);
            if (f_y != 0 && out.cols != f_y) {
                throw ShapeError("psi_y emits " + std::to_string(out.cols) + " features but the target has " +
                                 std::to_string(f_y));
            }
            return out;
        }
        const ChainShape ey = through_stack(psi_y_, "psi_y", n_y, f_y == 0 ? psi_y_.in_features() : f_y);
        ChainShape a = ex, b = ey;
        switch (side_) {
        case TransformSide::input:
            expect_transform_input(ex, ts, "psi_x");
            a = {ts.n_out, ts.f_out};
            break;
        case TransformSide::output:
            expect_transform_input(ey, ts, "psi_y");
            b = {ts.n_out, ts.f_out};
            break;
        case TransformSide::symmetric: {
            const auto& m = std::get<LowRankVecMap>(psi_z_.variant());
            if (ex.rows != m.n_x || ex.cols != m.f_zx) {
                throw ShapeError("psi_x emits " + Matrix::shape_string(ex.rows, ex.cols) +
                                 " but the X factor expects " + Matrix::shape_string(m.n_x, m.f_zx));
            }
            if (ey.rows != m.n_y || ey.cols != m.f_zy) {
                throw ShapeError("psi_y emits " + Matrix::shape_string(ey.rows, ey.cols) +
                                 " but the Y factor expects " + Matrix::shape_string(m.n_y, m.f_zy));
            }
            return {1, m.rank()};
        }
        }
        if (a.rows != b.rows || a.cols != b.cols) {
            throw ShapeError("cca views differ after the transform: " + Matrix::shape_string(a.rows, a.cols) +
                             " vs " + Matrix::shape_string(b.rows, b.cols));
        }
        return a;
    }

private:
    static ChainShape through_stack(const GNNStack& s, const std::string& name, std::size_t n, std::size_t f) {
        if (s.empty()) return {n, f};
        if (s.in_features() != f) {
            throw ShapeError(name + " expects " + std::to_string(s.in_features()) + " input features, got " +
                             std::to_string(f));
        }
        return {n, s.out_features()};
    }

    static void expect_transform_input(ChainShape got, const TransformShape& ts, const std::string& from) {
        if (got.rows != ts.n_in || got.cols != ts.f_in) {
            throw ShapeError(from + " emits " + Matrix::shape_string(got.rows, got.cols) + " but psi_z expects " +
                             Matrix::shape_string(ts.n_in, ts.f_in));
        }
    }

    ModelMode mode_ = ModelMode::supervised;
    TransformSide side_ = TransformSide::input;
    GNNStack psi_x_;
    Transform psi_z_;
    GNNStack psi_y_;
};

} // namespace iognn
