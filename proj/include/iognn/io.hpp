#pragma once

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "graph.hpp"
#include "model.hpp"
#include "training.hpp"

namespace iognn {

using json = nlohmann::json;

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_out(const std::string& path, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

template <class Int>
inline bool parse_int(std::string_view s, Int& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Edge lists

/// Lines `u v [w]`, `#` comments, blanks ignored. Node count is 1 + largest
/// id unless an `n=<N>` line is present.
inline Graph parse_edge_list(std::istream& in) {
    std::vector<Edge> edges;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::optional<std::size_t> declared;
    std::size_t max_id = 0;
    bool any = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        if (s.starts_with("n=")) {
            std::size_t n = 0;
            if (declared || !detail::parse_int(s.substr(2), n) || n == 0) {
                throw ParseError("bad node-count header '" + std::string(s) + "'", lineno);
            }
            declared = n;
            continue;
        }
        auto tok = detail::split_ws(s);
        Edge e;
        if ((tok.size() != 2 && tok.size() != 3) || !detail::parse_int(tok[0], e.u) || !detail::parse_int(tok[1], e.v) ||
            (tok.size() == 3 && !detail::parse_double(tok[2], e.w))) {
            throw ParseError("expected 'u v [w]', got '" + std::string(s) + "'", lineno);
        }
        if (e.u == e.v) throw ValidationError("line " + std::to_string(lineno) + ": self-loop on node " +
                                              std::to_string(e.u));
        if (!(e.w > 0.0)) throw ValidationError("line " + std::to_string(lineno) + ": weight must be positive");
        if (!seen.emplace(std::min(e.u, e.v), std::max(e.u, e.v)).second) {
            throw ValidationError("line " + std::to_string(lineno) + ": duplicate edge (" + std::to_string(e.u) +
                                  ", " + std::to_string(e.v) + ")");
        }
        max_id = std::max({max_id, e.u, e.v});
        any = true;
        edges.push_back(e);
    }
    const std::size_t n = declared ? *declared : (any ? max_id + 1 : 0);
    if (n == 0) throw ParseError("edge list has no edges and no n= header", lineno);
    if (any && max_id >= n) {
        throw ValidationError("edge references node " + std::to_string(max_id) + " but n=" + std::to_string(n));
    }
    return Graph(n, std::move(edges));
}

inline Graph load_edge_list(const std::string& path) {
    auto in = detail::open_in(path);
    return parse_edge_list(in);
}

/// `n=N` header, then one `u v w` line per edge.
inline void save_edge_list(const Graph& g, const std::string& path) {
    auto out = detail::open_out(path);
    out << "n=" << g.num_nodes() << '\n';
    for (const Edge& e : g.edges()) out << e.u << ' ' << e.v << ' ' << detail::fmt17(e.w) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// CSV matrices and labels

inline Matrix parse_matrix_csv(std::istream& in) {
    std::vector<double> values;
    std::size_t cols = 0, rows = 0, lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = detail::trim(line);
        if (s.empty()) continue;
        auto cells = detail::split(s, ',');
        if (rows == 0) cols = cells.size();
        if (cells.size() != cols) {
            throw ParseError("ragged row: " + std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(cols), lineno);
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double v = 0.0;
            if (!detail::parse_double(cells[c], v)) {
                throw ParseError("column " + std::to_string(c + 1) + ": not a number '" + std::string(cells[c]) + "'",
                                 lineno);
            }
            values.push_back(v);
        }
        ++rows;
    }
    if (rows == 0) throw ParseError("empty matrix file", lineno);
    return Matrix(rows, cols, std::move(values));
}

inline Matrix load_matrix_csv(const std::string& path) {
    auto in = detail::open_in(path);
    return parse_matrix_csv(in);
}

inline void save_matrix_csv(const Matrix& m, const std::string& path) {
    auto out = detail::open_out(path);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << detail::fmt17(m(i, j));
        out << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<int> parse_labels_csv(std::istream& in) {
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = detail::trim(line);
        if (s.empty()) continue;
        int v = 0;
        if (!detail::parse_int(s, v)) throw ParseError("not an integer label '" + std::string(s) + "'", lineno);
        if (v < 0) throw ParseError("negative label", lineno);
        labels.push_back(v);
    }
    return labels;
}

inline std::vector<int> load_labels_csv(const std::string& path) {
    auto in = detail::open_in(path);
    return parse_labels_csv(in);
}

inline void save_labels_csv(std::span<const int> labels, const std::string& path) {
    auto out = detail::open_out(path);
    for (int l : labels) out << l << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// `node,set` header, then one `id,train|val|test` row per node.
inline void save_split_csv(const NodeSplit& s, const std::string& path) {
    auto out = detail::open_out(path);
    out << "node,set\n";
    for (std::size_t i : s.train) out << i << ",train\n";
    for (std::size_t i : s.val) out << i << ",val\n";
    for (std::size_t i : s.test) out << i << ",test\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline NodeSplit load_split_csv(const std::string& path) {
    auto in = detail::open_in(path);
    NodeSplit s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = detail::trim(line);
        if (v.empty() || (lineno == 1 && v == "node,set")) continue;
        auto cells = detail::split(v, ',');
        std::size_t id = 0;
        if (cells.size() != 2 || !detail::parse_int(cells[0], id)) throw ParseError("expected 'node,set'", lineno);
        const std::string_view set = detail::trim(cells[1]);
        if (set == "train") s.train.push_back(id);
        else if (set == "val") s.val.push_back(id);
        else if (set == "test") s.test.push_back(id);
        else throw ParseError("unknown split set '" + std::string(set) + "'", lineno);
    }
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

// ---------------------------------------------------------------------------
// Metrics

/// `epoch,train_loss,val_loss` header plus one row per epoch.
inline void save_metrics_csv(const RunReport& r, const std::string& path) {
    auto out = detail::open_out(path);
    out << "epoch,train_loss,val_loss\n";
    for (const EpochRecord& e : r.trace)
        out << e.epoch << ',' << detail::fmt17(e.train_loss) << ',' << detail::fmt17(e.val_loss) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<EpochRecord> load_metrics_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::vector<EpochRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (detail::trim(line) != "epoch,train_loss,val_loss") throw ParseError("bad metrics header", lineno);
            continue;
        }
        auto cells = detail::split(detail::trim(line), ',');
        EpochRecord e;
        if (cells.size() != 3 || !detail::parse_int(cells[0], e.epoch) || !detail::parse_double(cells[1], e.train_loss) ||
            !detail::parse_double(cells[2], e.val_loss)) {
            throw ParseError("expected 'epoch,train_loss,val_loss'", lineno);
        }
        out.push_back(e);
    }
    return out;
}

struct SweepRow {
    std::string run;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

inline void save_sweep_csv(std::span<const SweepRow> rows, const std::string& path) {
    auto out = detail::open_out(path);
    out << "run,seed,metric,value\n";
    for (const SweepRow& r : rows) out << r.run << ',' << r.seed << ',' << r.metric << ',' << detail::fmt17(r.value) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// Appends one row, writing the header first when the file is new or empty.
inline void append_sweep_row(const SweepRow& r, const std::string& path) {
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
    auto out = detail::open_out(path, true);
    if (fresh) out << "run,seed,metric,value\n";
    out << r.run << ',' << r.seed << ',' << r.metric << ',' << detail::fmt17(r.value) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<SweepRow> load_sweep_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::vector<SweepRow> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) continue;
        auto cells = detail::split(detail::trim(line), ',');
        SweepRow r;
        if (cells.size() != 4 || !detail::parse_int(cells[1], r.seed) || !detail::parse_double(cells[3], r.value)) {
            throw ParseError("expected 'run,seed,metric,value'", lineno);
        }
        r.run = cells[0];
        r.metric = cells[2];
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int checkpoint_version = 1;

struct GraphFingerprint {
    std::size_t nodes = 0;
    std::size_t edges = 0;

    static GraphFingerprint of(const Graph& g) { return {g.num_nodes(), g.num_edges()}; }
    friend bool operator==(const GraphFingerprint&, const GraphFingerprint&) = default;
};

struct Checkpoint {
    IOModel model;
    GraphFingerprint g_x, g_y;
};

namespace detail {

inline json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != rows * cols) {
        throw ValidationError(what + ": " + std::to_string(values.size()) + " values for a " +
                              Matrix::shape_string(rows, cols) + " matrix");
    }
    return Matrix(rows, cols, std::move(values));
}

inline json stack_to_json(const GNNStack& s) {
    json layers = json::array();
    for (const LayerSpec& l : s.specs()) {
        layers.push_back({{"kind", to_string(l.kind)},
                          {"in", l.in_features},
                          {"out", l.out_features},
                          {"activation", std::string(to_string(l.activation))},
                          {"bias", l.bias},
                          {"order", l.order}});
    }
    return json{{"name", s.name()}, {"filter_gso", to_string(s.filter_gso())}, {"layers", layers}};
}

inline GNNStack stack_from_json(const json& j) {
    std::vector<LayerSpec> specs;
    for (const json& l : j.at("layers")) {
        LayerSpec s;
        s.kind = parse_layer_kind(l.at("kind").get<std::string>());
        s.in_features = l.at("in").get<std::size_t>();
        s.out_features = l.at("out").get<std::size_t>();
        s.activation = parse_activation(l.at("activation").get<std::string>());
        s.bias = l.at("bias").get<bool>();
        s.order = l.at("order").get<std::size_t>();
        specs.push_back(s);
    }
    Rng rng(0);
    return GNNStack(std::move(specs), rng, j.at("name").get<std::string>(),
                    parse_gso_kind(j.at("filter_gso").get<std::string>()));
}

inline json transform_to_json(const Transform& t) {
    json j{{"kind", t.kind_name()}};
    const TransformShape sh = t.shape();
    j["shape"] = {sh.n_in, sh.f_in, sh.n_out, sh.f_out};
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, LinearNodeMap> || std::is_same_v<T, KroneckerProductMap> ||
                          std::is_same_v<T, KroneckerSumMap>) {
                j["learnable"] = m.learnable;
            } else if constexpr (std::is_same_v<T, LowRankVecMap>) {
                j["rank"] = m.rank();
                j["learn_x"] = m.learn_x;
                j["learn_y"] = m.learn_y;
                j["hidden"] = std::string(to_string(m.hidden));
            } else if constexpr (std::is_same_v<T, CopyCommonMap>) {
                j["pairs"] = m.map.pairs;
            } else if constexpr (std::is_same_v<T, KnnSelectionMap>) {
                j["k"] = m.k;
                j["coords_x"] = matrix_to_json(m.coords_x);
                j["coords_y"] = matrix_to_json(m.coords_y);
            } else if constexpr (std::is_same_v<T, RowMlpMap>) {
                j["mlp"] = stack_to_json(m.mlp);
            }
        },
        t.variant());
    return j;
}

inline Transform transform_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const auto sh = j.at("shape").get<std::vector<std::size_t>>();
    if (sh.size() != 4) throw ValidationError("transform shape must have four entries");
    const std::size_t n_in = sh[0], f_in = sh[1], n_out = sh[2], f_out = sh[3];
    Rng rng(0);
    if (kind == "transpose") return Transform::transpose(n_in, f_in);
    if (kind == "linear_node") return Transform::linear_node(n_in, n_out, f_in, rng, j.at("learnable").get<bool>());
    if (kind == "kronecker_product")
        return Transform::kronecker_product(n_in, f_in, n_out, f_out, rng, j.at("learnable").get<bool>());
    if (kind == "kronecker_sum") return Transform::kronecker_sum(n_in, f_in, rng, j.at("learnable").get<bool>());
    if (kind == "low_rank_vec") {
        return Transform::low_rank_vec(n_in, f_in, n_out, f_out, j.at("rank").get<std::size_t>(), rng,
                                       j.at("learn_x").get<bool>(), j.at("learn_y").get<bool>(),
                                       parse_activation(j.at("hidden").get<std::string>()));
    }
    if (kind == "dense_vec") return Transform::dense_vec(n_in, f_in, n_out, f_out, rng);
    if (kind == "copy_common") {
        NodeMap map{j.at("pairs").get<std::vector<std::pair<std::size_t, std::size_t>>>()};
        return Transform::copy_common(std::move(map), n_in, n_out, f_in);
    }
    if (kind == "selection_knn") {
        return Transform::selection_knn(matrix_from_json(j.at("coords_x"), "coords_x"),
                                        matrix_from_json(j.at("coords_y"), "coords_y"), j.at("k").get<std::size_t>(),
                                        f_in);
    }
    if (kind == "row_mlp") {
        Transform t;
        t = Transform(RowMlpMap{stack_from_json(j.at("mlp")), f_in});
        return t;
    }
    throw ValidationError("unknown transform kind '" + kind + "' in checkpoint");
}

} // namespace detail

inline json checkpoint_to_json(IOModel& model, const Graph& g_x, const Graph& g_y) {
    json params = json::array();
    for (Parameter* p : model.all_weights()) {
        json rec = detail::matrix_to_json(p->value);
        rec["name"] = p->name;
        params.push_back(std::move(rec));
    }
    return json{{"version", checkpoint_version},
                {"mode", to_string(model.mode())},
                {"side", to_string(model.side())},
                {"psi_x", detail::stack_to_json(model.psi_x())},
                {"psi_z", detail::transform_to_json(model.psi_z())},
                {"psi_y", detail::stack_to_json(model.psi_y())},
                {"graphs",
                 {{"x", {{"nodes", g_x.num_nodes()}, {"edges", g_x.num_edges()}}},
                  {"y", {{"nodes", g_y.num_nodes()}, {"edges", g_y.num_edges()}}}}},
                {"parameters", params}};
}

/// Rebuilds the model described by `j`; every weight must be present with
/// its declared shape.
inline Checkpoint checkpoint_from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != checkpoint_version) {
            throw UnsupportedVersionError("checkpoint version " + j.at("version").dump() + " is not supported (expected " +
                                          std::to_string(checkpoint_version) + ")");
        }
        GNNStack psi_x = detail::stack_from_json(j.at("psi_x"));
        GNNStack psi_y = detail::stack_from_json(j.at("psi_y"));
        Transform psi_z = detail::transform_from_json(j.at("psi_z"));
        Checkpoint c{IOModel(parse_model_mode(j.at("mode").get<std::string>()), std::move(psi_x), std::move(psi_z),
                             std::move(psi_y), parse_transform_side(j.at("side").get<std::string>())),
                     {j.at("graphs").at("x").at("nodes").get<std::size_t>(),
                      j.at("graphs").at("x").at("edges").get<std::size_t>()},
                     {j.at("graphs").at("y").at("nodes").get<std::size_t>(),
                      j.at("graphs").at("y").at("edges").get<std::size_t>()}};
        std::vector<Parameter*> weights = c.model.all_weights();
        const json& recs = j.at("parameters");
        if (recs.size() != weights.size()) {
            throw ValidationError("checkpoint holds " + std::to_string(recs.size()) + " parameters, topology needs " +
                                  std::to_string(weights.size()));
        }
        for (std::size_t k = 0; k < weights.size(); ++k) {
            const json& rec = recs[k];
            const std::string name = rec.at("name").get<std::string>();
            if (name != weights[k]->name) {
                throw ValidationError("checkpoint parameter " + std::to_string(k) + " is '" + name + "', expected '" +
                                      weights[k]->name + "'");
            }
            Matrix v = detail::matrix_from_json(rec, name);
            if (!v.same_shape(weights[k]->value)) {
                throw ValidationError("parameter '" + name + "' is " + v.shape() + ", topology needs " +
                                      weights[k]->value.shape());
            }
            weights[k]->value = std::move(v);
        }
        return c;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
    }
}

inline void save_checkpoint(IOModel& model, const Graph& g_x, const Graph& g_y, const std::string& path) {
    auto out = detail::open_out(path);
    out << checkpoint_to_json(model, g_x, g_y).dump(1) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    auto in = detail::open_in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
    }
    return checkpoint_from_json(j);
}

/// Loads and checks the stored graph fingerprints against `g_x` and `g_y`.
inline Checkpoint load_checkpoint(const std::string& path, const Graph& g_x, const Graph& g_y) {
    Checkpoint c = load_checkpoint(path);
    auto check = [](const GraphFingerprint& saved, const Graph& g, const char* side) {
        if (!(saved == GraphFingerprint::of(g))) {
            throw ValidationError(std::string("checkpoint was saved for G_") + side + " with " +
                                  std::to_string(saved.nodes) + " nodes / " + std::to_string(saved.edges) +
                                  " edges, got " + std::to_string(g.num_nodes()) + " / " +
                                  std::to_string(g.num_edges()));
        }
    };
    check(c.g_x, g_x, "X");
    check(c.g_y, g_y, "Y");
    return c;
}

} // namespace iognn
