#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace iognn {

/// A learnable matrix with its accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() {
        for (double& g : grad.values()) g = 0.0;
    }
};

enum class Activation { relu, tanh, identity };

inline std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(s) + "' (expected relu, tanh or identity)");
}

enum class Op : std::uint8_t {
    constant,
    param,
    matmul,
    add,
    sub,
    hadamard,
    scale,
    relu,
    tanh,
    transpose,
    add_row_bias,
    frobenius_sq,
    mse,
    trace,
    softmax_ce,
    gather_rows,
    scatter_rows,
    reshape_vec,
    reshape_unvec,
    sum,
    concat_rows,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    /// Value of a 1x1 node.
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so every parent index precedes its child and a single reverse sweep
/// visits each node once.
class Tape {
public:
    struct Node {
        Op op = Op::constant;
        std::vector<std::size_t> parents;
        Matrix value;
        Matrix grad;
        double scalar = 0.0;
        std::vector<std::size_t> index;
        std::vector<std::size_t> index2;
        std::vector<int> labels;
        Parameter* param = nullptr;
        bool needs_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix m) {
        Node n;
        n.op = Op::constant;
        n.value = std::move(m);
        return push(std::move(n));
    }

    /// Leaf bound to `p`. Registering the same parameter twice returns the
    /// same node, so gradients from every use meet in one place.
    Var param(Parameter& p) {
        if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
        Node n;
        n.op = Op::param;
        n.value = p.value;
        n.param = &p;
        n.needs_grad = true;
        Var v = push(std::move(n));
        param_ids_.emplace(&p, v.id());
        return v;
    }

    Var push(Node n) {
        for (std::size_t p : n.parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Propagates d(loss)/d(node) to every node and adds the leaf gradients
    /// into their Parameters. Parameter gradients accumulate across calls.
    void backward(Var loss);

private:
    static void accumulate(Node& n, const Matrix& g) {
        if (!n.needs_grad) return;
        if (n.grad.empty()) {
            n.grad = g;
        } else {
            linalg::axpy(1.0, g, n.grad);
        }
    }

    void backprop_node(std::size_t id);

    std::deque<Node> nodes_; // deque keeps Var::value() references stable across pushes
    std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline const Matrix& Var::value() const { return tape_->node(id_).value; }

inline double Var::scalar() const {
    const Matrix& m = value();
    if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar(): node is " + m.shape() + ", not 1x1");
    return m(0, 0);
}

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
    if (!a.valid() || a.tape() != b.tape()) {
        throw ValidationError(std::string(op) + ": operands belong to different tapes");
    }
    return *a.tape();
}

inline Var unary(Op op, Var a, Matrix value, double scalar = 0.0) {
    Tape::Node n;
    n.op = op;
    n.parents = {a.id()};
    n.value = std::move(value);
    n.scalar = scalar;
    return a.tape()->push(std::move(n));
}

inline Var binary(Op op, Var a, Var b, Matrix value) {
    Tape& t = same_tape(a, b, "binary op");
    Tape::Node n;
    n.op = op;
    n.parents = {a.id(), b.id()};
    n.value = std::move(value);
    return t.push(std::move(n));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Tracked operations

inline Var matmul(Var a, Var b) {
    return detail::binary(Op::matmul, a, b, linalg::matmul(a.value(), b.value()));
}

inline Var add(Var a, Var b) { return detail::binary(Op::add, a, b, linalg::add(a.value(), b.value())); }

inline Var sub(Var a, Var b) { return detail::binary(Op::sub, a, b, linalg::sub(a.value(), b.value())); }

inline Var hadamard(Var a, Var b) {
    linalg::require_same_shape(a.value(), b.value(), "hadamard");
    Matrix c = a.value();
    auto cv = c.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < cv.size(); ++i) cv[i] *= bv[i];
    return detail::binary(Op::hadamard, a, b, std::move(c));
}

inline Var scale(double alpha, Var a) { return detail::unary(Op::scale, a, linalg::scale(alpha, a.value()), alpha); }

inline Var relu(Var a) {
    Matrix c = a.value();
    for (double& v : c.values()) v = v > 0.0 ? v : 0.0;
    return detail::unary(Op::relu, a, std::move(c));
}

inline Var tanh(Var a) {
    Matrix c = a.value();
    for (double& v : c.values()) v = std::tanh(v);
    return detail::unary(Op::tanh, a, std::move(c));
}

inline Var activate(Var a, Activation act) {
    switch (act) {
    case Activation::relu: return relu(a);
    case Activation::tanh: return tanh(a);
    case Activation::identity: return a;
    }
    return a;
}

inline Var transpose(Var a) { return detail::unary(Op::transpose, a, linalg::transpose(a.value())); }

/// x + 1·bᵀ with `b` a 1xF row.
inline Var add_row_bias(Var x, Var b) {
    if (b.rows() != 1 || b.cols() != x.cols()) {
        throw ShapeError("add_row_bias: bias " + b.value().shape() + " does not match " + x.value().shape());
    }
    Matrix c = x.value();
    auto bv = b.value().row(0);
    for (std::size_t i = 0; i < c.rows(); ++i) {
        auto r = c.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
    }
    return detail::binary(Op::add_row_bias, x, b, std::move(c));
}

inline Var frobenius_sq(Var a) {
    return detail::unary(Op::frobenius_sq, a, Matrix(1, 1, linalg::frobenius_sq(a.value())));
}

inline Var trace(Var a) { return detail::unary(Op::trace, a, Matrix(1, 1, linalg::trace(a.value()))); }

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return detail::unary(Op::sum, a, Matrix(1, 1, s));
}

/// Mean of squared differences over the selected rows (all rows when
/// `rows` is empty-optional) and every column.
inline Var mse(Var a, Var b, std::optional<std::span<const std::size_t>> rows = std::nullopt) {
    linalg::require_same_shape(a.value(), b.value(), "mse");
    std::vector<std::size_t> sel;
    if (rows) {
        if (rows->empty()) throw EmptySelectionError("mse: empty row selection");
        sel.assign(rows->begin(), rows->end());
        for (std::size_t r : sel) {
            if (r >= a.rows()) throw ValidationError("mse: row " + std::to_string(r) + " out of range");
        }
    } else {
        sel.resize(a.rows());
        for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = i;
    }
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    double s = 0.0;
    for (std::size_t r : sel)
        for (std::size_t j = 0; j < av.cols(); ++j) {
            const double d = av(r, j) - bv(r, j);
            s += d * d;
        }
    const double denom = static_cast<double>(sel.size() * av.cols());
    Tape& t = detail::same_tape(a, b, "mse");
    Tape::Node n;
    n.op = Op::mse;
    n.parents = {a.id(), b.id()};
    n.value = Matrix(1, 1, s / denom);
    n.index = std::move(sel);
    return t.push(std::move(n));
}

/// Mean over the selected rows of -log softmax(logits_row)[label].
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                                 std::optional<std::span<const std::size_t>> rows = std::nullopt) {
    const Matrix& z = logits.value();
    if (labels.size() != z.rows()) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(z.rows()) + " rows");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= z.cols()) {
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(z.cols()) + ")");
        }
    }
    std::vector<std::size_t> sel;
    if (rows) {
        if (rows->empty()) throw EmptySelectionError("softmax_cross_entropy: empty row selection");
        sel.assign(rows->begin(), rows->end());
        for (std::size_t r : sel) {
            if (r >= z.rows()) throw ValidationError("softmax_cross_entropy: row out of range");
        }
    } else {
        sel.resize(z.rows());
        for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = i;
    }
    double total = 0.0;
    for (std::size_t r : sel) {
        auto row = z.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double se = 0.0;
        for (double v : row) se += std::exp(v - mx);
        total += -(row[labels[r]] - mx - std::log(se));
    }
    Tape::Node n;
    n.op = Op::softmax_ce;
    n.parents = {logits.id()};
    n.value = Matrix(1, 1, total / static_cast<double>(sel.size()));
    n.index = std::move(sel);
    n.labels.assign(labels.begin(), labels.end());
    return logits.tape()->push(std::move(n));
}

inline Var gather_rows(Var a, std::span<const std::size_t> index) {
    Tape::Node n;
    n.op = Op::gather_rows;
    n.parents = {a.id()};
    n.value = linalg::gather_rows(a.value(), index);
    n.index.assign(index.begin(), index.end());
    return a.tape()->push(std::move(n));
}

/// Output has `out_rows` rows of zeros except row dst[i] = a.row(src[i]).
inline Var scatter_rows(Var a, std::span<const std::size_t> src, std::span<const std::size_t> dst,
                        std::size_t out_rows) {
    if (src.size() != dst.size()) throw ShapeError("scatter_rows: src/dst lengths differ");
    Matrix out(out_rows, a.cols());
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] >= a.rows() || dst[i] >= out_rows) throw ValidationError("scatter_rows: index out of range");
        auto s = a.value().row(src[i]);
        std::copy(s.begin(), s.end(), out.row(dst[i]).begin());
    }
    Tape::Node n;
    n.op = Op::scatter_rows;
    n.parents = {a.id()};
    n.value = std::move(out);
    n.index.assign(src.begin(), src.end());
    n.index2.assign(dst.begin(), dst.end());
    return a.tape()->push(std::move(n));
}

/// Column-major vectorization into a column.
inline Var vec(Var a) { return detail::unary(Op::reshape_vec, a, linalg::vec(a.value())); }

/// Column-major reshape of any node into `rows` rows.
inline Var unvec(Var v, std::size_t rows) { return detail::unary(Op::reshape_unvec, v, linalg::unvec(v.value(), rows)); }

/// Vertical concatenation; all parts share the column count.
inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw EmptySelectionError("concat_rows: nothing to concatenate");
    Tape* t = parts[0].tape();
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (p.tape() != t) throw ValidationError("concat_rows: operands belong to different tapes");
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Tape::Node n;
    n.op = Op::concat_rows;
    std::size_t at = 0;
    for (const Var& p : parts) {
        auto src = p.value().values();
        std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(at * cols));
        at += p.rows();
        n.parents.push_back(p.id());
    }
    n.value = std::move(out);
    return t->push(std::move(n));
}

enum class Elementwise { add, sub, hadamard, scale, relu, tanh, identity };

/// Kind-dispatched entry point over the pointwise operations. `b` is used
/// by the binary kinds, `alpha` by scale.
inline Var elementwise(Elementwise kind, Var a, std::optional<Var> b = std::nullopt, double alpha = 1.0) {
    auto need_b = [&]() -> Var {
        if (!b) throw ParameterError("elementwise: binary kind needs a second operand");
        return *b;
    };
    switch (kind) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::hadamard: return hadamard(a, need_b());
    case Elementwise::scale: return scale(alpha, a);
    case Elementwise::relu: return relu(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::identity: return a;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Reverse sweep

inline void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ValidationError("backward: loss node belongs to another tape");
    const Matrix& lv = loss.value();
    if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be 1x1, got " + lv.shape());
    for (Node& n : nodes_) n.grad = Matrix();
    nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        if (nodes_[id].grad.empty()) continue;
        backprop_node(id);
    }
}

inline void Tape::backprop_node(std::size_t id) {
    Node& n = nodes_[id];
    const Matrix& g = n.grad;
    auto parent = [&](std::size_t k) -> Node& { return nodes_[n.parents[k]]; };

    switch (n.op) {
    case Op::constant:
        break;
    case Op::param:
        linalg::axpy(1.0, g, n.param->grad);
        break;
    case Op::matmul: {
        Node& a = parent(0);
        Node& b = parent(1);
        if (a.needs_grad) accumulate(a, linalg::matmul_nt(g, b.value));
        if (b.needs_grad) accumulate(b, linalg::matmul_tn(a.value, g));
        break;
    }
    case Op::add:
        accumulate(parent(0), g);
        accumulate(parent(1), g);
        break;
    case Op::sub:
        accumulate(parent(0), g);
        accumulate(parent(1), linalg::scale(-1.0, g));
        break;
    case Op::hadamard: {
        Node& a = parent(0);
        Node& b = parent(1);
        Matrix ga = g, gb = g;
        auto gav = ga.values(), gbv = gb.values();
        auto av = a.value.values(), bv = b.value.values();
        for (std::size_t i = 0; i < gav.size(); ++i) {
            gav[i] *= bv[i];
            gbv[i] *= av[i];
        }
        accumulate(a, ga);
        accumulate(b, gb);
        break;
    }
    case Op::scale:
        accumulate(parent(0), linalg::scale(n.scalar, g));
        break;
    case Op::relu: {
        Node& a = parent(0);
        Matrix ga = g;
        auto gv = ga.values();
        auto in = a.value.values();
        for (std::size_t i = 0; i < gv.size(); ++i)
            if (!(in[i] > 0.0)) gv[i] = 0.0;
        accumulate(a, ga);
        break;
    }
    case Op::tanh: {
        Matrix ga = g;
        auto gv = ga.values();
        auto y = n.value.values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= 1.0 - y[i] * y[i];
        accumulate(parent(0), ga);
        break;
    }
    case Op::transpose:
        accumulate(parent(0), linalg::transpose(g));
        break;
    case Op::add_row_bias: {
        accumulate(parent(0), g);
        Matrix gb(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
        accumulate(parent(1), gb);
        break;
    }
    case Op::frobenius_sq: {
        Node& a = parent(0);
        accumulate(a, linalg::scale(2.0 * g(0, 0), a.value));
        break;
    }
    case Op::trace: {
        Node& a = parent(0);
        accumulate(a, linalg::scale(g(0, 0), Matrix::identity(a.value.rows())));
        break;
    }
    case Op::sum: {
        Node& a = parent(0);
        accumulate(a, Matrix(a.value.rows(), a.value.cols(), g(0, 0)));
        break;
    }
    case Op::mse: {
        Node& a = parent(0);
        Node& b = parent(1);
        const std::size_t cols = a.value.cols();
        const double c = 2.0 * g(0, 0) / static_cast<double>(n.index.size() * cols);
        Matrix ga(a.value.rows(), cols);
        for (std::size_t r : n.index)
            for (std::size_t j = 0; j < cols; ++j) ga(r, j) += c * (a.value(r, j) - b.value(r, j));
        Matrix gb = linalg::scale(-1.0, ga);
        accumulate(a, ga);
        accumulate(b, gb);
        break;
    }
    case Op::softmax_ce: {
        Node& a = parent(0);
        const Matrix& z = a.value;
        Matrix ga(z.rows(), z.cols());
        const double c = g(0, 0) / static_cast<double>(n.index.size());
        for (std::size_t r : n.index) {
            auto row = z.row(r);
            double mx = row[0];
            for (double v : row) mx = std::max(mx, v);
            double se = 0.0;
            for (double v : row) se += std::exp(v - mx);
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double p = std::exp(row[j] - mx) / se;
                ga(r, j) += c * (p - (static_cast<int>(j) == n.labels[r] ? 1.0 : 0.0));
            }
        }
        accumulate(a, ga);
        break;
    }
    case Op::gather_rows: {
        Node& a = parent(0);
        Matrix ga(a.value.rows(), a.value.cols());
        for (std::size_t i = 0; i < n.index.size(); ++i) {
            auto src = g.row(i);
            auto dst = ga.row(n.index[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        accumulate(a, ga);
        break;
    }
    case Op::scatter_rows: {
        Node& a = parent(0);
        Matrix ga(a.value.rows(), a.value.cols());
        for (std::size_t i = 0; i < n.index.size(); ++i) {
            auto src = g.row(n.index2[i]);
            auto dst = ga.row(n.index[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        accumulate(a, ga);
        break;
    }
    case Op::reshape_vec: {
        Node& a = parent(0);
        accumulate(a, linalg::unvec(g, a.value.rows()));
        break;
    }
    case Op::reshape_unvec: {
        // Forward read the parent's storage column-major; the exact inverse
        // writes the gradient back in that same order.
        Node& a = parent(0);
        Matrix flat = linalg::vec(g);
        Matrix ga(a.value.rows(), a.value.cols(), std::vector<double>(flat.values().begin(), flat.values().end()));
        accumulate(a, ga);
        break;
    }
    case Op::concat_rows: {
        std::size_t at = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            Node& p = parent(k);
            const std::size_t r = p.value.rows(), c = p.value.cols();
            std::vector<double> part(g.values().begin() + static_cast<std::ptrdiff_t>(at * c),
                                     g.values().begin() + static_cast<std::ptrdiff_t>((at + r) * c));
            accumulate(p, Matrix(r, c, std::move(part)));
            at += r;
        }
        break;
    }
    }
}

} // namespace iognn
