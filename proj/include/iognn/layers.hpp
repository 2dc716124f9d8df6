#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"

namespace iognn {

using Rng = std::mt19937_64;

/// Glorot-style uniform draw on ±sqrt(6/(fan_in+fan_out)), times `gain`.
inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = dist(rng);
    return m;
}

enum class LayerKind { gcn, filterbank, dense };

inline std::string to_string(LayerKind k) {
    switch (k) {
    case LayerKind::gcn: return "gcn";
    case LayerKind::filterbank: return "filterbank";
    case LayerKind::dense: return "dense";
    }
    return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
    if (s == "gcn") return LayerKind::gcn;
    if (s == "filterbank") return LayerKind::filterbank;
    if (s == "dense" || s == "mlp") return LayerKind::dense;
    throw ConfigError("unknown layer kind '" + s + "' (expected gcn, filterbank or dense)");
}

struct LayerSpec {
    LayerKind kind = LayerKind::gcn;
    std::size_t in_features = 1;
    std::size_t out_features = 1;
    Activation activation = Activation::relu;
    bool bias = false;
    std::size_t order = 1; // filter taps R, filterbank only

    /// Layer with the kind's default bias setting (on for dense only).
    static LayerSpec make(LayerKind kind, std::size_t in, std::size_t out, Activation act, std::size_t order = 1) {
        return {kind, in, out, act, kind == LayerKind::dense, order};
    }

    void validate() const {
        if (in_features == 0 || out_features == 0) throw ParameterError("layer feature sizes must be >= 1");
        if (kind == LayerKind::filterbank && order == 0) throw ParameterError("filterbank order R must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Single-layer forward passes on the tape

/// σ(Â·X·Θ + 1·bᵀ)
inline Var gcn_forward(Var a_hat, Var x, Var theta, std::optional<Var> bias, Activation act) {
    if (a_hat.rows() != a_hat.cols() || a_hat.cols() != x.rows()) {
        throw ShapeError("gcn: shift " + a_hat.value().shape() + " does not act on signal " + x.value().shape());
    }
    if (x.cols() != theta.rows()) {
        throw ShapeError("gcn: signal " + x.value().shape() + " does not chain with weights " + theta.value().shape());
    }
    Var h = matmul(a_hat, matmul(x, theta));
    if (bias) h = add_row_bias(h, *bias);
    return activate(h, act);
}

/// σ(Σ_r S^r·X·Θ_r + 1·bᵀ) with the shifts X_r = S·X_{r-1} applied iteratively.
inline Var filterbank_forward(Var s, Var x, std::span<const Var> thetas, Activation act,
                              std::optional<Var> bias = std::nullopt) {
    if (thetas.empty()) throw ParameterError("filterbank: need at least one filter tap");
    if (s.rows() != s.cols() || s.cols() != x.rows()) {
        throw ShapeError("filterbank: shift " + s.value().shape() + " does not act on signal " + x.value().shape());
    }
    for (const Var& t : thetas) {
        if (t.rows() != x.cols() || t.cols() != thetas[0].cols()) {
            throw ShapeError("filterbank: tap " + t.value().shape() + " does not chain with " + x.value().shape());
        }
    }
    Var shifted = x;
    Var acc = matmul(x, thetas[0]);
    for (std::size_t r = 1; r < thetas.size(); ++r) {
        shifted = matmul(s, shifted);
        acc = add(acc, matmul(shifted, thetas[r]));
    }
    if (bias) acc = add_row_bias(acc, *bias);
    return activate(acc, act);
}

/// σ(X·Θ + 1·bᵀ)
inline Var dense_forward(Var x, Var theta, std::optional<Var> bias, Activation act) {
    if (x.cols() != theta.rows()) {
        throw ShapeError("dense: signal " + x.value().shape() + " does not chain with weights " + theta.value().shape());
    }
    Var h = matmul(x, theta);
    if (bias) h = add_row_bias(h, *bias);
    return activate(h, act);
}

// ---------------------------------------------------------------------------

/// Ordered layers sharing one graph. No pooling: every layer keeps the node
/// dimension. GCN layers always use the normalized loaded adjacency;
/// filterbank layers use `filter_gso`.
class GNNStack {
public:
    struct LayerParams {
        std::vector<Parameter> taps;
        std::optional<Parameter> bias;
    };

    GNNStack() = default;

    GNNStack(std::vector<LayerSpec> specs, Rng& rng, std::string name = "stack",
             GsoKind filter_gso = GsoKind::adjacency)
        : specs_(std::move(specs)), name_(std::move(name)), filter_gso_(filter_gso) {
        for (std::size_t l = 0; l < specs_.size(); ++l) {
            const LayerSpec& s = specs_[l];
            s.validate();
            if (l > 0 && specs_[l - 1].out_features != s.in_features) {
                throw ShapeError(name_ + ": layer " + std::to_string(l - 1) + " emits " +
                                 std::to_string(specs_[l - 1].out_features) + " features but layer " +
                                 std::to_string(l) + " expects " + std::to_string(s.in_features));
            }
            LayerParams p;
            const std::size_t taps = s.kind == LayerKind::filterbank ? s.order : 1;
            for (std::size_t r = 0; r < taps; ++r) {
                std::string pname = name_ + "." + std::to_string(l) + ".theta";
                if (s.kind == LayerKind::filterbank) pname += std::to_string(r);
                p.taps.emplace_back(pname, glorot_uniform(s.in_features, s.out_features, rng));
            }
            if (s.bias) p.bias.emplace(name_ + "." + std::to_string(l) + ".bias", Matrix(1, s.out_features));
            params_.push_back(std::move(p));
        }
    }

    const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
    const std::string& name() const noexcept { return name_; }
    GsoKind filter_gso() const noexcept { return filter_gso_; }
    bool empty() const noexcept { return specs_.empty(); }
    bool uses_graph() const {
        for (const auto& s : specs_)
            if (s.kind != LayerKind::dense) return true;
        return false;
    }

    std::size_t in_features() const { return specs_.empty() ? 0 : specs_.front().in_features; }
    std::size_t out_features() const { return specs_.empty() ? 0 : specs_.back().out_features; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (auto& lp : params_) {
            for (auto& t : lp.taps) out.push_back(&t);
            if (lp.bias) out.push_back(&*lp.bias);
        }
        return out;
    }

    std::vector<LayerParams>& layer_params() noexcept { return params_; }
    const std::vector<LayerParams>& layer_params() const noexcept { return params_; }

    /// Applies every layer in order. The shift operators are computed once
    /// per call from `g`.
    Var forward(Tape& tape, const Graph& g, Var x) {
        if (x.rows() != g.num_nodes()) {
            throw ShapeError(name_ + ": signal has " + std::to_string(x.rows()) + " rows but the graph has " +
                             std::to_string(g.num_nodes()) + " nodes");
        }
        return run(tape, &g, x);
    }

    /// Forward pass for stacks made only of dense layers.
    Var forward(Tape& tape, Var x) {
        if (uses_graph()) throw ConfigError(name_ + ": graph layers need a graph");
        return run(tape, nullptr, x);
    }

private:
    Var run(Tape& tape, const Graph* g, Var x) {
        if (!specs_.empty() && x.cols() != specs_.front().in_features) {
            throw ShapeError(name_ + ": signal has " + std::to_string(x.cols()) + " features, first layer expects " +
                             std::to_string(specs_.front().in_features));
        }
        std::optional<Var> a_hat, shift;
        Var h = x;
        for (std::size_t l = 0; l < specs_.size(); ++l) {
            const LayerSpec& s = specs_[l];
            LayerParams& p = params_[l];
            std::optional<Var> bias;
            if (p.bias) bias = tape.param(*p.bias);
            switch (s.kind) {
            case LayerKind::gcn:
                if (!a_hat) a_hat = tape.constant(gso(*g, GsoKind::normalized_loaded_adjacency));
                h = gcn_forward(*a_hat, h, tape.param(p.taps[0]), bias, s.activation);
                break;
            case LayerKind::filterbank: {
                if (!shift) shift = tape.constant(gso(*g, filter_gso_));
                std::vector<Var> taps;
                for (auto& t : p.taps) taps.push_back(tape.param(t));
                h = filterbank_forward(*shift, h, taps, s.activation, bias);
                break;
            }
            case LayerKind::dense:
                h = dense_forward(h, tape.param(p.taps[0]), bias, s.activation);
                break;
            }
        }
        return h;
    }

    std::vector<LayerSpec> specs_;
    std::vector<LayerParams> params_;
    std::string name_;
    GsoKind filter_gso_ = GsoKind::adjacency;
};

inline Var stack_forward(Tape& tape, GNNStack& stack, const Graph& g, Var x) { return stack.forward(tape, g, x); }

/// Widths w0 → w1 → ... → wL with `hidden` activation on every layer but
/// the last, which gets `last`.
inline std::vector<LayerSpec> chain_specs(LayerKind kind, std::span<const std::size_t> widths, Activation hidden,
                                          Activation last, std::size_t order = 1) {
    if (widths.size() < 2) return {};
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool final_layer = i + 2 == widths.size();
        specs.push_back(LayerSpec::make(kind, widths[i], widths[i + 1], final_layer ? last : hidden, order));
    }
    return specs;
}

} // namespace iognn
