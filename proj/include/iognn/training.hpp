#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "optimizer.hpp"

namespace iognn {

enum class LossKind { mse, cross_entropy, cca };

inline std::string to_string(LossKind k) {
    switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::cca: return "cca";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "cca") return LossKind::cca;
    throw ConfigError("unknown loss '" + s + "' (expected mse, cross_entropy or cca)");
}

struct TrainConfig {
    std::size_t epochs = 300;
    OptimizerConfig optimizer{};
    double lambda = 1e-3;
    LossKind loss = LossKind::mse;
    std::size_t patience = 30;
    std::uint64_t seed = 0;
    std::ostream* progress = nullptr; // one `epoch,train_loss,val_loss` line per epoch

    void validate() const {
        optimizer.validate();
        if (lambda < 0.0 || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
        if (patience == 0) throw ConfigError("patience must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Node splits

struct NodeSplit {
    std::vector<std::size_t> train, val, test;

    /// Pairwise disjoint and within [0, n).
    void validate(std::size_t n) const {
        std::vector<char> seen(n, 0);
        for (const auto* set : {&train, &val, &test}) {
            for (std::size_t i : *set) {
                if (i >= n) throw ValidationError("split node " + std::to_string(i) + " outside [0, " +
                                                  std::to_string(n) + ")");
                if (seen[i]) throw ValidationError("split node " + std::to_string(i) + " appears twice");
                seen[i] = 1;
            }
        }
    }
};

/// Uniform split of n nodes. Train and val sizes are floor(ratio·n); every
/// remaining node goes to test. Each set is sorted ascending.
inline NodeSplit make_split(std::size_t n, double train_ratio, double val_ratio, std::uint64_t seed) {
    if (train_ratio < 0.0 || val_ratio < 0.0 || train_ratio + val_ratio > 1.0 + 1e-12) {
        throw ConfigError("split ratios must be >= 0 with train + val <= 1");
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_tr = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n) + 1e-9));
    const std::size_t n_va =
        std::min(n - n_tr, static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(n) + 1e-9)));
    NodeSplit s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_tr));
    s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_tr), ids.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va), ids.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

// ---------------------------------------------------------------------------
// Tasks

/// One (X_p, Y_p) pair. `labels` is used by cross-entropy losses and
/// accuracy, `y` by everything else.
struct Sample {
    Matrix x;
    Matrix y;
    std::vector<int> labels;
};

/// Graph pointers must outlive the task.
struct SupervisedTask {
    const Graph* g_x = nullptr;
    const Graph* g_y = nullptr;
    std::vector<Sample> train;
    std::vector<Sample> val;
};

struct SemisupTask {
    const Graph* g_x = nullptr;
    const Graph* g_y = nullptr;
    Matrix x;
    Matrix y;
    std::vector<int> labels;
    NodeSplit split;
};

struct CcaTask {
    const Graph* g_x = nullptr;
    const Graph* g_y = nullptr;
    std::vector<Sample> train;
    std::vector<Sample> val;
};

using Task = std::variant<SupervisedTask, SemisupTask, CcaTask>;

// ---------------------------------------------------------------------------
// Losses

namespace detail {

inline Var sample_loss(Var y_hat, const Sample& s, LossKind kind, std::optional<std::span<const std::size_t>> rows) {
    Tape& tape = *y_hat.tape();
    switch (kind) {
    case LossKind::mse: return mse(y_hat, tape.constant(s.y), rows);
    case LossKind::cross_entropy: return softmax_cross_entropy(y_hat, s.labels, rows);
    case LossKind::cca: break;
    }
    throw ConfigError("cca loss is not a per-sample supervised loss");
}

} // namespace detail

/// Mean over samples of the per-sample loss.
inline Var supervised_loss(Tape& tape, IOModel& model, const Graph& g_x, const Graph& g_y,
                           std::span<const Sample> data, LossKind kind) {
    if (data.empty()) throw ParameterError("supervised_loss: empty dataset");
    std::optional<Var> total;
    for (const Sample& s : data) {
        Var y_hat = model.forward(tape, g_x, g_y, tape.constant(s.x));
        Var l = detail::sample_loss(y_hat, s, kind, std::nullopt);
        total = total ? add(*total, l) : l;
    }
    return data.size() == 1 ? *total : scale(1.0 / static_cast<double>(data.size()), *total);
}

/// Mean per-node loss over `train_nodes` only.
inline Var semisup_loss(Tape& tape, IOModel& model, const Graph& g_x, const Graph& g_y, const Matrix& x,
                        const Sample& target, std::span<const std::size_t> train_nodes, LossKind kind) {
    if (train_nodes.empty()) throw EmptySelectionError("semisup_loss: no training nodes");
    Var y_hat = model.forward(tape, g_x, g_y, tape.constant(x));
    return detail::sample_loss(y_hat, target, kind, train_nodes);
}

/// ‖(1/P)·ZᵀZ − I‖²_F with I of size F.
inline Var decorrelation(Var z, std::size_t p_count) {
    if (p_count == 0) throw ParameterError("decorrelation: sample count must be >= 1");
    Tape& tape = *z.tape();
    Var gram = matmul(transpose(z), z);
    if (p_count > 1) gram = scale(1.0 / static_cast<double>(p_count), gram);
    return frobenius_sq(sub(gram, tape.constant(Matrix::identity(z.cols()))));
}

/// (1/P)‖Z′ − Z‖²_F + λ(‖Z′ᵀZ′/P − I‖²_F + ‖ZᵀZ/P − I‖²_F), the views being
/// the P per-sample embeddings stacked by rows.
inline Var cca_loss(Var z_x_prime, Var z_y, double lambda, std::size_t p_count) {
    linalg::require_same_shape(z_x_prime.value(), z_y.value(), "cca_loss");
    if (lambda < 0.0) throw ParameterError("cca_loss: lambda must be >= 0");
    if (p_count == 0) throw ParameterError("cca_loss: sample count must be >= 1");
    Var fit = frobenius_sq(sub(z_x_prime, z_y));
    if (p_count > 1) fit = scale(1.0 / static_cast<double>(p_count), fit);
    if (lambda == 0.0) return fit;
    Var reg = add(decorrelation(z_x_prime, p_count), decorrelation(z_y, p_count));
    return add(fit, scale(lambda, reg));
}

/// Stacked views of every sample, (Z′_X, Z_Y), each (P·rows) x cols.
inline std::pair<Var, Var> cca_views(Tape& tape, IOModel& model, const Graph& g_x, const Graph& g_y,
                                     std::span<const Sample> data) {
    if (data.empty()) throw ParameterError("cca: empty dataset");
    std::vector<Var> xs, ys;
    xs.reserve(data.size());
    ys.reserve(data.size());
    for (const Sample& s : data) {
        auto [a, b] = model.cca_forward(tape, g_x, g_y, tape.constant(s.x), tape.constant(s.y));
        xs.push_back(a);
        ys.push_back(b);
    }
    if (data.size() == 1) return {xs[0], ys[0]};
    return {concat_rows(xs), concat_rows(ys)};
}

inline Var cca_objective(Tape& tape, IOModel& model, const Graph& g_x, const Graph& g_y,
                         std::span<const Sample> data, double lambda) {
    auto [a, b] = cca_views(tape, model, g_x, g_y, data);
    return cca_loss(a, b, lambda, data.size());
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct RunReport {
    std::vector<EpochRecord> trace;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::map<std::string, double> metrics;
    double seconds = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void require_graphs(const Graph* g_x, const Graph* g_y) {
    if (!g_x || !g_y) throw ConfigError("task is missing a graph");
}

/// Builds the task's training and validation losses on `tape`.
struct TaskLoss {
    IOModel& model;
    const TrainConfig& cfg;

    Var operator()(Tape& tape, const SupervisedTask& t, bool val) const {
        const auto& data = val && !t.val.empty() ? t.val : t.train;
        return supervised_loss(tape, model, *t.g_x, *t.g_y, data, cfg.loss);
    }
    Var operator()(Tape& tape, const SemisupTask& t, bool val) const {
        Sample target{Matrix(), t.y, t.labels};
        const auto& nodes = val && !t.split.val.empty() ? t.split.val : t.split.train;
        return semisup_loss(tape, model, *t.g_x, *t.g_y, t.x, target, nodes, cfg.loss);
    }
    Var operator()(Tape& tape, const CcaTask& t, bool val) const {
        const auto& data = val && !t.val.empty() ? t.val : t.train;
        return cca_objective(tape, model, *t.g_x, *t.g_y, data, cfg.lambda);
    }
};

} // namespace detail

/// Full-batch training with early stopping on the validation loss. Epoch e
/// records the losses at the parameters before its update; the parameters of
/// the best recorded epoch are restored at the end.
inline RunReport train(IOModel& model, const Task& task, const TrainConfig& cfg) {
    cfg.validate();
    const bool cca_task = std::holds_alternative<CcaTask>(task);
    if (cca_task != (model.mode() == ModelMode::cca)) {
        throw ConfigError(std::string(cca_task ? "cca" : "supervised") + " task given a " + to_string(model.mode()) +
                          " model");
    }
    if (cca_task != (cfg.loss == LossKind::cca)) {
        throw ConfigError("loss '" + to_string(cfg.loss) + "' does not fit the task");
    }
    std::visit([](const auto& t) { detail::require_graphs(t.g_x, t.g_y); }, task);
    if (const auto* s = std::get_if<SemisupTask>(&task)) s->split.validate(s->g_y->num_nodes());

    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.seed = cfg.seed;

    std::vector<Parameter*> params = model.parameters();
    Optimizer opt(params, cfg.optimizer);
    detail::TaskLoss build{model, cfg};
    std::vector<Matrix> best;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double val_loss = 0.0;
        {
            Tape tape;
            val_loss = std::visit([&](const auto& t) { return build(tape, t, true).scalar(); }, task);
        }
        opt.zero_grad();
        Tape tape;
        Var loss = std::visit([&](const auto& t) { return build(tape, t, false); }, task);
        const double train_loss = loss.scalar();
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        }
        report.trace.push_back({epoch, train_loss, val_loss});
        if (cfg.progress) {
            char line[96];
            std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", epoch, train_loss, val_loss);
            *cfg.progress << line;
        }
        if (val_loss < report.best_val_loss) {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best.clear();
            for (Parameter* p : params) best.push_back(p->value);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
        tape.backward(loss);
        opt.step();
    }
    if (!best.empty()) {
        for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// Metrics

enum class Metric { mse, accuracy, weighted_mse };

inline std::string to_string(Metric m) {
    switch (m) {
    case Metric::mse: return "mse";
    case Metric::accuracy: return "accuracy";
    case Metric::weighted_mse: return "weighted_mse";
    }
    return "?";
}

inline Metric parse_metric(const std::string& s) {
    if (s == "mse") return Metric::mse;
    if (s == "accuracy") return Metric::accuracy;
    if (s == "weighted_mse") return Metric::weighted_mse;
    throw ConfigError("unknown metric '" + s + "' (expected mse, accuracy or weighted_mse)");
}

namespace detail {

inline std::vector<std::size_t> rows_or_all(std::span<const std::size_t> rows, std::size_t n) {
    std::vector<std::size_t> out(rows.begin(), rows.end());
    if (out.empty()) {
        out.resize(n);
        std::iota(out.begin(), out.end(), std::size_t{0});
    }
    for (std::size_t r : out)
        if (r >= n) throw ValidationError("metric row " + std::to_string(r) + " out of range");
    return out;
}

} // namespace detail

/// Row-wise argmax; ties go to the lowest column.
inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

/// Metrics over `rows` (every row when empty).
inline double mse_metric(const Matrix& pred, const Matrix& target, std::span<const std::size_t> rows = {}) {
    linalg::require_same_shape(pred, target, "mse");
    const auto sel = detail::rows_or_all(rows, pred.rows());
    double s = 0.0;
    for (std::size_t r : sel)
        for (std::size_t j = 0; j < pred.cols(); ++j) {
            const double d = pred(r, j) - target(r, j);
            s += d * d;
        }
    return s / static_cast<double>(sel.size() * pred.cols());
}

inline double accuracy_metric(const Matrix& logits, std::span<const int> labels,
                              std::span<const std::size_t> rows = {}) {
    if (labels.size() != logits.rows()) throw ConfigError("accuracy needs one label per output row");
    const auto sel = detail::rows_or_all(rows, logits.rows());
    const auto pred = argmax_rows(logits);
    std::size_t hit = 0;
    for (std::size_t r : sel) hit += pred[r] == labels[r];
    return static_cast<double>(hit) / static_cast<double>(sel.size());
}

/// Σ w_n‖ŷ_n − y_n‖² / (F·Σ w_n)
inline double weighted_mse_metric(const Matrix& pred, const Matrix& target, std::span<const double> weights,
                                  std::span<const std::size_t> rows = {}) {
    linalg::require_same_shape(pred, target, "weighted_mse");
    if (weights.size() != pred.rows()) throw ConfigError("weighted_mse needs one weight per output row");
    const auto sel = detail::rows_or_all(rows, pred.rows());
    double num = 0.0, den = 0.0;
    for (std::size_t r : sel) {
        double s = 0.0;
        for (std::size_t j = 0; j < pred.cols(); ++j) {
            const double d = pred(r, j) - target(r, j);
            s += d * d;
        }
        num += weights[r] * s;
        den += weights[r];
    }
    if (!(den > 0.0)) throw ValidationError("weighted_mse: weights sum to zero");
    return num / (static_cast<double>(pred.cols()) * den);
}

inline double score(const Matrix& pred, const Sample& target, Metric metric, std::span<const std::size_t> rows,
                    std::span<const double> weights) {
    switch (metric) {
    case Metric::mse:
        if (target.y.empty()) throw ConfigError("mse needs real-valued targets");
        return mse_metric(pred, target.y, rows);
    case Metric::accuracy: return accuracy_metric(pred, target.labels, rows);
    case Metric::weighted_mse:
        if (target.y.empty()) throw ConfigError("weighted_mse needs real-valued targets");
        return weighted_mse_metric(pred, target.y, weights, rows);
    }
    return 0.0;
}

/// Metric on the given nodes of the semi-supervised task.
inline double evaluate(IOModel& model, const SemisupTask& task, std::span<const std::size_t> nodes, Metric metric,
                       std::span<const double> weights = {}) {
    detail::require_graphs(task.g_x, task.g_y);
    const Matrix pred = model.predict(*task.g_x, *task.g_y, task.x);
    return score(pred, Sample{Matrix(), task.y, task.labels}, metric, nodes, weights);
}

/// Mean over samples of the metric on every node.
inline double evaluate(IOModel& model, const Graph& g_x, const Graph& g_y, std::span<const Sample> data,
                       Metric metric, std::span<const double> weights = {}) {
    if (data.empty()) throw ParameterError("evaluate: empty dataset");
    double s = 0.0;
    for (const Sample& d : data) s += score(model.predict(g_x, g_y, d.x), d, metric, {}, weights);
    return s / static_cast<double>(data.size());
}

} // namespace iognn
