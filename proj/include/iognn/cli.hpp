#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cca.hpp"
#include "datagen.hpp"
#include "gradcheck.hpp"
#include "io.hpp"
#include "model.hpp"
#include "training.hpp"

namespace iognn::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config access

namespace cfg {

inline const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    const json& s = j.at(key);
    if (!s.is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
    return s;
}

template <class T>
T get(const json& j, const char* key, const T& fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) {
        throw ConfigError(where + ": missing required parameter '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": parameter '" + key + "' has the wrong type");
    }
}

inline std::string fmt17(double v) { return detail::fmt17(v); }

} // namespace cfg

/// Parsed config file plus the directory relative data paths resolve against.
struct Config {
    json doc;
    fs::path base_dir;
    std::uint64_t seed = 0;
    fs::path out_dir = "out";

    std::string path(const std::string& p) const {
        const fs::path q(p);
        return (q.is_absolute() ? q : base_dir / q).string();
    }
};

inline Config load_config(const std::string& path, std::optional<std::uint64_t> seed,
                          std::optional<std::string> out_dir) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    Config c;
    try {
        c.doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config '") + path + "' is not valid JSON: " + e.what());
    }
    if (!c.doc.is_object()) throw ConfigError("config root must be an object");
    c.base_dir = fs::path(path).parent_path();
    c.seed = seed ? *seed : cfg::get<std::uint64_t>(c.doc, "seed", 0);
    c.out_dir = out_dir ? fs::path(*out_dir) : fs::path(cfg::get<std::string>(c.doc, "out_dir", "out"));
    return c;
}

// ---------------------------------------------------------------------------
// Datasets

/// Everything a command may need, whatever produced it.
struct Dataset {
    Graph g_x, g_y;
    Matrix x, y;
    std::vector<int> labels; // on G_Y
    std::size_t num_classes = 0;
    NodeSplit split;
    bool has_split = false;
    std::vector<double> weights;
    Matrix coords_x, coords_y;
    NodeMap common;
    bool has_common = false;
    std::vector<Sample> samples; // multi-sample data on single-node graphs
};

inline Matrix one_hot(std::span<const int> labels, std::size_t classes) {
    Matrix m(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) m(i, static_cast<std::size_t>(labels[i])) = 1.0;
    return m;
}

inline SbmParams sbm_params(const json& j) {
    SbmParams p;
    p.block_sizes = cfg::get<std::vector<std::size_t>>(j, "blocks", p.block_sizes);
    p.p_in = cfg::get<double>(j, "p_in", p.p_in);
    p.p_out = cfg::get<double>(j, "p_out", p.p_out);
    return p;
}

inline NodeSplit split_with_budget(std::size_t n, const json& j, std::uint64_t seed) {
    const double train = cfg::get<double>(j, "train_ratio", 0.3);
    const double val = cfg::get<double>(j, "val_ratio", 0.2);
    if (!j.contains("label_budget")) return make_split(n, train, val, seed);
    const auto budget = cfg::get<std::size_t>(j, "label_budget", 0);
    if (budget == 0 || budget > n) {
        throw ConfigError("label_budget " + std::to_string(budget) + " must lie in [1, " + std::to_string(n) + "]");
    }
    NodeSplit s;
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_val = std::min(n - budget, count_from_ratio(val, n));
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(budget));
    s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(budget),
                 ids.begin() + static_cast<std::ptrdiff_t>(budget + n_val));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(budget + n_val), ids.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

inline SslParams ssl_params(const json& j, double ratio) {
    SslParams p;
    p.parent = sbm_params(j);
    if (j.contains("parent_seed")) p.parent_seed = cfg::get<std::uint64_t>(j, "parent_seed", 0);
    p.f_cols = cfg::get<std::size_t>(j, "f_cols", p.f_cols);
    p.feature_signal = cfg::get<double>(j, "feature_signal", p.feature_signal);
    p.feature_noise = cfg::get<double>(j, "feature_noise", p.feature_noise);
    p.drop_ratio = cfg::get<double>(j, "drop_ratio", ratio);
    p.mask_ratio = cfg::get<double>(j, "mask_ratio", ratio);
    p.node_ratio = cfg::get<double>(j, "node_ratio", p.node_ratio);
    p.train_ratio = cfg::get<double>(j, "train_ratio", p.train_ratio);
    p.val_ratio = cfg::get<double>(j, "val_ratio", p.val_ratio);
    return p;
}

inline Dataset dataset_from_ssl(SslTask t, const json& j, std::uint64_t seed) {
    Dataset d;
    d.g_x = std::move(t.g_prime);
    d.x = std::move(t.x_prime);
    d.g_y = std::move(t.g_s);
    d.y = std::move(t.y_s);
    d.labels = std::move(t.labels);
    d.num_classes = t.num_classes;
    d.split = j.contains("label_budget") ? split_with_budget(d.g_y.num_nodes(), j, derive_seed(seed, 5))
                                         : std::move(t.split);
    d.has_split = true;
    d.common = std::move(t.common);
    d.has_common = true;
    return d;
}

inline Dataset generate_dataset(const json& j, std::uint64_t seed) {
    const std::string gen = cfg::require<std::string>(j, "generator", "data");
    Dataset d;
    if (gen == "coarse_fine") {
        CoarseFineParams p;
        p.coarse_rows = cfg::get<std::size_t>(j, "coarse_rows", p.coarse_rows);
        p.coarse_cols = cfg::get<std::size_t>(j, "coarse_cols", p.coarse_cols);
        p.refine_factor = cfg::get<std::size_t>(j, "refine_factor", p.refine_factor);
        p.filter_order = cfg::get<std::size_t>(j, "filter_order", p.filter_order);
        p.f_cols = cfg::get<std::size_t>(j, "f_cols", p.f_cols);
        p.noise_sd = cfg::get<double>(j, "noise_sd", p.noise_sd);
        p.train_ratio = cfg::get<double>(j, "train_ratio", p.train_ratio);
        p.val_ratio = cfg::get<double>(j, "val_ratio", p.val_ratio);
        CoarseFineTask t = gen_coarse_fine_task(p, seed);
        d.g_x = std::move(t.g_coarse);
        d.g_y = std::move(t.g_fine);
        d.x = std::move(t.x);
        d.y = std::move(t.y);
        d.weights = std::move(t.weights);
        d.coords_x = std::move(t.coarse_coords);
        d.coords_y = std::move(t.fine_coords);
        d.split = std::move(t.split);
        d.has_split = true;
    } else if (gen == "subgraph") {
        SubgraphTaskParams p;
        p.parent = sbm_params(j);
        p.parent_seed = cfg::get<std::uint64_t>(j, "parent_seed", p.parent_seed);
        p.k_hops = cfg::get<std::size_t>(j, "k_hops", p.k_hops);
        p.feature_signal = cfg::get<double>(j, "feature_signal", p.feature_signal);
        p.feature_noise = cfg::get<double>(j, "feature_noise", p.feature_noise);
        p.train_ratio = cfg::get<double>(j, "train_ratio", p.train_ratio);
        p.val_ratio = cfg::get<double>(j, "val_ratio", p.val_ratio);
        if (j.contains("root_x")) p.root_x = cfg::get<std::size_t>(j, "root_x", 0);
        if (j.contains("root_y")) p.root_y = cfg::get<std::size_t>(j, "root_y", 0);
        SubgraphTask t = gen_subgraph_task(p, seed);
        d.g_x = std::move(t.g_x);
        d.g_y = std::move(t.g_y);
        d.x = std::move(t.x);
        d.labels = std::move(t.labels);
        d.num_classes = t.num_classes;
        d.y = one_hot(d.labels, d.num_classes);
        d.split = std::move(t.split);
        d.has_split = true;
        d.common = std::move(t.common);
        d.has_common = true;
    } else if (gen == "two_view") {
        const auto dim = cfg::require<std::size_t>(j, "d", "two_view");
        const auto n_x = cfg::require<std::size_t>(j, "n_x", "two_view");
        const auto n_y = cfg::require<std::size_t>(j, "n_y", "two_view");
        const auto p = cfg::require<std::size_t>(j, "P", "two_view");
        TwoViewDataset t = gen_two_view_cca(dim, n_x, n_y, p, cfg::get<double>(j, "noise_sd", 0.1), seed);
        d.g_x = Graph(1, {});
        d.g_y = Graph(1, {});
        d.x = t.stacked_x();
        d.y = t.stacked_y();
        d.samples = std::move(t.samples);
    } else if (gen == "ssl") {
        d = dataset_from_ssl(gen_ssl_task(ssl_params(j, cfg::get<double>(j, "ratio", 0.0)), seed), j, seed);
    } else if (gen == "grid" || gen == "sbm" || gen == "geometric") {
        GraphSpec s;
        s.kind = parse_graph_kind(gen);
        s.sbm = sbm_params(j);
        if (gen == "grid") {
            s.rows = cfg::require<std::size_t>(j, "rows", "grid");
            s.cols = cfg::require<std::size_t>(j, "cols", "grid");
        } else if (gen == "geometric") {
            s.n = cfg::require<std::size_t>(j, "n", "geometric");
            s.radius = cfg::require<double>(j, "radius", "geometric");
        }
        GeneratedGraph g = gen_graph(s, seed);
        if (j.contains("filter_order")) {
            d.x = gen_smooth_signal(g.graph, cfg::get<std::size_t>(j, "filter_order", 1),
                                    cfg::get<std::size_t>(j, "f_cols", 1), cfg::get<double>(j, "noise_sd", 0.0),
                                    derive_seed(seed, 1));
        }
        d.labels = std::move(g.communities);
        d.num_classes = count_classes(d.labels);
        d.coords_x = g.coords;
        d.coords_y = std::move(g.coords);
        d.g_x = g.graph;
        d.g_y = std::move(g.graph);
    } else {
        throw ConfigError("unknown generator '" + gen +
                          "' (valid: coarse_fine, subgraph, two_view, ssl, grid, sbm, geometric)");
    }
    return d;
}

inline NodeMap load_node_map_csv(const std::string& path) {
    const Matrix m = load_matrix_csv(path);
    if (m.cols() != 2) throw ParseError("node map file must have two columns");
    NodeMap map;
    for (std::size_t i = 0; i < m.rows(); ++i)
        map.pairs.emplace_back(static_cast<std::size_t>(m(i, 0)), static_cast<std::size_t>(m(i, 1)));
    return map;
}

inline void save_node_map_csv(const NodeMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (auto [i, j] : map.pairs) out << i << ',' << j << '\n';
}

/// Data section with explicit file paths (the layout `generate` writes).
inline Dataset load_dataset_files(const Config& c, const json& j) {
    Dataset d;
    d.g_x = load_edge_list(c.path(cfg::require<std::string>(j, "g_x", "data")));
    d.g_y = load_edge_list(c.path(cfg::require<std::string>(j, "g_y", "data")));
    d.x = load_matrix_csv(c.path(cfg::require<std::string>(j, "x", "data")));
    if (j.contains("y")) d.y = load_matrix_csv(c.path(cfg::get<std::string>(j, "y", "")));
    if (j.contains("labels")) {
        d.labels = load_labels_csv(c.path(cfg::get<std::string>(j, "labels", "")));
        d.num_classes = cfg::get<std::size_t>(j, "num_classes", count_classes(d.labels));
    }
    if (j.contains("split")) {
        d.split = load_split_csv(c.path(cfg::get<std::string>(j, "split", "")));
        d.has_split = true;
    }
    if (j.contains("weights")) {
        const Matrix w = load_matrix_csv(c.path(cfg::get<std::string>(j, "weights", "")));
        d.weights.assign(w.values().begin(), w.values().end());
    }
    if (j.contains("coords_x")) d.coords_x = load_matrix_csv(c.path(cfg::get<std::string>(j, "coords_x", "")));
    if (j.contains("coords_y")) d.coords_y = load_matrix_csv(c.path(cfg::get<std::string>(j, "coords_y", "")));
    if (j.contains("common")) {
        d.common = load_node_map_csv(c.path(cfg::get<std::string>(j, "common", "")));
        d.has_common = true;
    }
    if (cfg::get<bool>(j, "samples", false)) {
        if (d.y.empty() || d.y.rows() != d.x.rows()) throw ConfigError("sample data needs x and y with equal rows");
        for (std::size_t p = 0; p < d.x.rows(); ++p) {
            Sample s{linalg::gather_rows(d.x, std::vector<std::size_t>{p}),
                     linalg::gather_rows(d.y, std::vector<std::size_t>{p}), {}};
            d.samples.push_back(std::move(s));
        }
        d.g_x = Graph(1, {});
        d.g_y = Graph(1, {});
    }
    return d;
}

inline Dataset load_dataset(const Config& c, const json& data, std::uint64_t seed) {
    if (data.contains("generator")) return generate_dataset(data, seed);
    if (data.contains("g_x")) return load_dataset_files(c, data);
    throw ConfigError("data section needs either 'generator' or file paths ('g_x', 'g_y', 'x', ...)");
}

/// Writes every populated field; returns the written paths in order.
inline std::vector<std::string> write_dataset(const Dataset& d, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto p = [&](const char* name) {
        files.push_back((dir / name).string());
        return files.back();
    };
    save_edge_list(d.g_x, p("g_x.edges"));
    save_edge_list(d.g_y, p("g_y.edges"));
    if (!d.x.empty()) save_matrix_csv(d.x, p("x.csv"));
    if (!d.y.empty()) save_matrix_csv(d.y, p("y.csv"));
    if (!d.labels.empty()) save_labels_csv(d.labels, p("labels.csv"));
    if (d.has_split) save_split_csv(d.split, p("split.csv"));
    if (!d.weights.empty()) save_matrix_csv(Matrix(d.weights.size(), 1, d.weights), p("weights.csv"));
    if (!d.coords_x.empty()) save_matrix_csv(d.coords_x, p("coords_x.csv"));
    if (!d.coords_y.empty()) save_matrix_csv(d.coords_y, p("coords_y.csv"));
    if (d.has_common) save_node_map_csv(d.common, p("common.csv"));
    return files;
}

// ---------------------------------------------------------------------------
// Models

inline std::size_t resolve_width(const json& j, const char* key, const Dataset& d, std::size_t fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    const json& v = j.at(key);
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "n_x") return d.g_x.num_nodes();
        if (s == "n_y") return d.g_y.num_nodes();
        throw ConfigError(std::string("'") + key + "' must be a number, \"n_x\" or \"n_y\"");
    }
    return cfg::get<std::size_t>(j, key, fallback);
}

/// Stack from {kind, hidden, out, activation, last_activation, order, gso}.
/// A null section or kind "none" is the empty stack.
inline GNNStack build_stack(const json& j, const std::string& name, std::size_t in, std::size_t out_default,
                            std::optional<Activation> last_default, const Dataset& d, Rng& rng) {
    if (j.is_null() || cfg::get<std::string>(j, "kind", "gcn") == "none") return GNNStack({}, rng, name);
    const LayerKind kind = parse_layer_kind(cfg::get<std::string>(j, "kind", "gcn"));
    const Activation act = parse_activation(cfg::get<std::string>(j, "activation", "relu"));
    const Activation last = j.contains("last_activation")
                                ? parse_activation(cfg::get<std::string>(j, "last_activation", "relu"))
                                : last_default.value_or(act);
    std::vector<std::size_t> widths{in};
    for (std::size_t h : cfg::get<std::vector<std::size_t>>(j, "hidden", {})) widths.push_back(h);
    widths.push_back(resolve_width(j, "out", d, out_default));
    std::vector<LayerSpec> specs =
        chain_specs(kind, widths, act, last, cfg::get<std::size_t>(j, "order", 1));
    if (j.contains("bias"))
        for (auto& s : specs) s.bias = cfg::get<bool>(j, "bias", s.bias);
    return GNNStack(std::move(specs), rng, name, parse_gso_kind(cfg::get<std::string>(j, "gso", "adjacency")));
}

inline std::size_t stack_out(const GNNStack& s, std::size_t in) { return s.empty() ? in : s.out_features(); }

inline Transform build_transform(const json& j, std::size_t n_in, std::size_t f_in, std::size_t n_out,
                                 std::size_t f_out_default, const Dataset& d, Rng& rng) {
    const std::string kind = cfg::require<std::string>(j, "kind", "psi_z");
    const std::size_t f_out = resolve_width(j, "features", d, f_out_default);
    if (kind == "transpose") {
        if (f_in != n_out) {
            throw ConfigError("transpose needs psi_x to emit " + std::to_string(n_out) +
                              " features (one per output node), got " + std::to_string(f_in));
        }
        return Transform::transpose(n_in, f_in);
    }
    if (kind == "linear_node") {
        if (cfg::get<bool>(j, "identity", false)) {
            if (n_in != n_out) throw ConfigError("identity linear_node needs equal node counts");
            return Transform::identity_node(n_in, f_in);
        }
        return Transform::linear_node(n_in, n_out, f_in, rng, cfg::get<bool>(j, "learnable", true));
    }
    if (kind == "kronecker_product")
        return Transform::kronecker_product(n_in, f_in, n_out, f_out, rng, cfg::get<bool>(j, "learnable", true));
    if (kind == "kronecker_sum") {
        if (n_in != n_out || f_in != f_out) {
            throw ConfigError("kronecker_sum needs equal node counts and feature widths on both sides");
        }
        return Transform::kronecker_sum(n_in, f_in, rng, cfg::get<bool>(j, "learnable", true));
    }
    if (kind == "low_rank_vec" || kind == "two_layer_perceptron") {
        const Activation hidden = parse_activation(
            cfg::get<std::string>(j, "hidden_activation", kind == "low_rank_vec" ? "identity" : "relu"));
        return Transform::low_rank_vec(n_in, f_in, n_out, f_out, cfg::require<std::size_t>(j, "rank", "low_rank_vec"),
                                       rng, cfg::get<bool>(j, "learn_x", true), cfg::get<bool>(j, "learn_y", true),
                                       hidden);
    }
    if (kind == "dense_vec") return Transform::dense_vec(n_in, f_in, n_out, f_out, rng);
    if (kind == "copy_common") {
        if (!d.has_common) throw ConfigError("copy_common needs a node map in the data");
        return Transform::copy_common(d.common, n_in, n_out, f_in);
    }
    if (kind == "selection_knn") {
        if (d.coords_x.empty() || d.coords_y.empty()) throw ConfigError("selection_knn needs node coordinates");
        return Transform::selection_knn(d.coords_x, d.coords_y, cfg::get<std::size_t>(j, "k", 1), f_in);
    }
    if (kind == "row_mlp") {
        return Transform::row_mlp(n_in, cfg::get<std::vector<std::size_t>>(j, "hidden", {}), n_out, f_in,
                                  parse_activation(cfg::get<std::string>(j, "activation", "relu")), rng);
    }
    throw ConfigError("unknown transform '" + kind +
                      "' (valid: transpose, linear_node, kronecker_product, kronecker_sum, low_rank_vec, "
                      "two_layer_perceptron, dense_vec, copy_common, selection_knn, row_mlp)");
}

inline std::size_t target_width(const Dataset& d, LossKind loss) {
    if (loss == LossKind::cross_entropy) {
        if (d.num_classes == 0) throw ConfigError("cross_entropy needs labels");
        return d.num_classes;
    }
    if (!d.samples.empty()) return d.samples.front().y.cols();
    if (d.y.empty()) throw ConfigError("mse needs a target signal 'y'");
    return d.y.cols();
}

inline ModelMode task_mode(const std::string& task) {
    if (task == "supervised" || task == "semisup") return ModelMode::supervised;
    if (task == "cca") return ModelMode::cca;
    throw ConfigError("unknown task '" + task + "' (valid: supervised, semisup, cca)");
}

inline LossKind default_loss(const std::string& task, const Dataset& d) {
    if (task == "cca") return LossKind::cca;
    return !d.labels.empty() && d.y.empty() ? LossKind::cross_entropy : LossKind::mse;
}

inline std::size_t input_width(const Dataset& d) { return d.samples.empty() ? d.x.cols() : d.samples[0].x.cols(); }
inline std::size_t y_width(const Dataset& d) { return d.samples.empty() ? d.y.cols() : d.samples[0].y.cols(); }

/// Builds ψ^X, ψ^Z, ψ^Y from the `model` section for the given data.
inline IOModel build_model(const json& m, const Dataset& d, ModelMode mode, LossKind loss, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n_x = d.g_x.num_nodes(), n_y = d.g_y.num_nodes();
    const json& jx = m.contains("psi_x") ? m.at("psi_x") : json();
    const json& jy = m.contains("psi_y") ? m.at("psi_y") : json();
    const json& jz = m.contains("psi_z") ? m.at("psi_z") : json{{"kind", "linear_node"}};
    const std::size_t f_x = input_width(d);

    if (mode == ModelMode::supervised) {
        GNNStack psi_x = build_stack(jx, "psi_x", f_x, f_x, std::nullopt, d, rng);
        const std::size_t f_zx = stack_out(psi_x, f_x);
        Transform psi_z = build_transform(jz, n_x, f_zx, n_y, f_zx, d, rng);
        const TransformShape ts = psi_z.shape();
        GNNStack psi_y = build_stack(jy, "psi_y", ts.f_out, target_width(d, loss), Activation::identity, d, rng);
        return IOModel(mode, std::move(psi_x), std::move(psi_z), std::move(psi_y));
    }

    if (d.y.empty() && d.samples.empty()) throw ConfigError("cca needs a second view 'y'");
    const std::size_t f_y = y_width(d);
    GNNStack psi_x = build_stack(jx, "psi_x", f_x, f_x, std::nullopt, d, rng);
    GNNStack psi_y = build_stack(jy, "psi_y", f_y, f_y, std::nullopt, d, rng);
    const std::size_t e_x = stack_out(psi_x, f_x), e_y = stack_out(psi_y, f_y);
    const std::string side_s = cfg::get<std::string>(m, "side", "auto");
    const TransformSide side = side_s == "auto" ? default_side(n_x, n_y) : parse_transform_side(side_s);
    Transform psi_z;
    switch (side) {
    case TransformSide::input: psi_z = build_transform(jz, n_x, e_x, n_y, e_y, d, rng); break;
    case TransformSide::output: psi_z = build_transform(jz, n_y, e_y, n_x, e_x, d, rng); break;
    case TransformSide::symmetric: {
        json jj = jz;
        if (!jj.contains("kind")) jj["kind"] = "low_rank_vec";
        psi_z = build_transform(jj, n_x, e_x, n_y, e_y, d, rng);
        break;
    }
    }
    return IOModel(mode, std::move(psi_x), std::move(psi_z), std::move(psi_y), side);
}

inline TrainConfig train_config(const json& t, LossKind loss, std::uint64_t seed) {
    TrainConfig c;
    c.epochs = cfg::get<std::size_t>(t, "epochs", c.epochs);
    c.optimizer.kind = parse_optimizer_kind(cfg::get<std::string>(t, "optimizer", "adam"));
    c.optimizer.lr = cfg::get<double>(t, "lr", c.optimizer.lr);
    c.optimizer.momentum = cfg::get<double>(t, "momentum", c.optimizer.momentum);
    c.optimizer.beta1 = cfg::get<double>(t, "beta1", c.optimizer.beta1);
    c.optimizer.beta2 = cfg::get<double>(t, "beta2", c.optimizer.beta2);
    c.optimizer.eps = cfg::get<double>(t, "eps", c.optimizer.eps);
    c.optimizer.weight_decay = cfg::get<double>(t, "weight_decay", c.optimizer.weight_decay);
    c.lambda = cfg::get<double>(t, "lambda", c.lambda);
    c.patience = cfg::get<std::size_t>(t, "patience", c.patience);
    c.loss = loss;
    c.seed = seed;
    c.validate();
    return c;
}

/// Task over the dataset. Graph pointers refer into `d`.
inline Task make_task(const std::string& task, const Dataset& d) {
    if (task == "semisup") {
        if (!d.has_split) throw ConfigError("semisup needs a node split");
        return SemisupTask{&d.g_x, &d.g_y, d.x, d.y, d.labels, d.split};
    }
    std::vector<Sample> data = d.samples;
    if (data.empty()) data.push_back(Sample{d.x, d.y, d.labels});
    if (task == "supervised") return SupervisedTask{&d.g_x, &d.g_y, std::move(data), {}};
    if (task == "cca") {
        if (d.y.empty() && d.samples.empty()) throw ConfigError("cca needs a second view 'y'");
        return CcaTask{&d.g_x, &d.g_y, std::move(data), {}};
    }
    throw ConfigError("unknown task '" + task + "' (valid: supervised, semisup, cca)");
}

/// Shape-chain check against the data, phrased as a configuration error.
inline void preflight(const IOModel& m, const Dataset& d, LossKind loss) {
    try {
        if (m.mode() == ModelMode::supervised) {
            m.validate(d.g_x.num_nodes(), input_width(d), d.g_y.num_nodes(), target_width(d, loss));
        } else {
            m.validate(d.g_x.num_nodes(), input_width(d), d.g_y.num_nodes(), y_width(d));
        }
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("shape chain: ") + e.what());
    }
    if (d.x.rows() != d.g_x.num_nodes() && d.samples.empty()) {
        throw ConfigError("x has " + std::to_string(d.x.rows()) + " rows but G_X has " +
                          std::to_string(d.g_x.num_nodes()) + " nodes");
    }
}

/// The task's training loss on a fresh tape, for gradient checking.
inline Var task_loss(Tape& tape, IOModel& model, const Task& task, const TrainConfig& tc) {
    return std::visit(
        [&](const auto& t) -> Var {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, SupervisedTask>) {
                return supervised_loss(tape, model, *t.g_x, *t.g_y, t.train, tc.loss);
            } else if constexpr (std::is_same_v<T, SemisupTask>) {
                return semisup_loss(tape, model, *t.g_x, *t.g_y, t.x, Sample{Matrix(), t.y, t.labels}, t.split.train,
                                    tc.loss);
            } else {
                return cca_objective(tape, model, *t.g_x, *t.g_y, t.train, tc.lambda);
            }
        },
        task);
}

// ---------------------------------------------------------------------------
// Commands

struct RunOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t jobs = 1;
    bool dry_run = false;
};

/// Runs `work(i)` for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& work) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    work(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Seeds a command runs over: `seeds` (list) or `runs` consecutive values
/// from the base seed; just the base seed otherwise.
inline std::vector<std::uint64_t> sweep_seeds(const Config& c) {
    const json& s = cfg::section(c.doc, "sweep");
    if (s.contains("seeds")) return cfg::get<std::vector<std::uint64_t>>(s, "seeds", {});
    const auto runs = cfg::get<std::size_t>(s, "runs", 1);
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < runs; ++i) out.push_back(c.seed + i);
    return out;
}

inline int cmd_generate(const Config& c, std::ostream& out) {
    const json& g = c.doc.contains("generate") ? cfg::section(c.doc, "generate") : cfg::section(c.doc, "data");
    if (!g.contains("generator")) throw ConfigError("generate: missing required parameter 'generator'");
    const Dataset d = generate_dataset(g, c.seed);
    for (const std::string& f : write_dataset(d, c.out_dir)) out << "wrote " << f << '\n';
    return 0;
}

struct TrainResult {
    std::string log;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

inline TrainResult train_one(const Config& c, std::uint64_t seed, const fs::path& out_dir, bool dry_run,
                             bool stream_progress, std::ostream& live) {
    const std::string task_name = cfg::require<std::string>(c.doc, "task", "config");
    const Dataset d = load_dataset(c, cfg::section(c.doc, "data"), seed);
    const json& tj = cfg::section(c.doc, "train");
    const LossKind loss = tj.contains("loss") ? parse_loss_kind(cfg::get<std::string>(tj, "loss", "mse"))
                                              : default_loss(task_name, d);
    IOModel model = build_model(cfg::section(c.doc, "model"), d, task_mode(task_name), loss, derive_seed(seed, 100));
    preflight(model, d, loss);
    TrainConfig tc = train_config(tj, loss, seed);
    const Task task = make_task(task_name, d);
    std::ostringstream log;
    TrainResult r;
    if (dry_run) {
        log << "dry-run ok: task=" << task_name << " G_X=" << d.g_x.num_nodes() << " G_Y=" << d.g_y.num_nodes()
            << " psi_z=" << model.psi_z().kind_name() << " parameters=" << model.parameters().size() << '\n';
        r.log = log.str();
        return r;
    }
    std::ostream& progress = stream_progress ? live : static_cast<std::ostream&>(log);
    tc.progress = &progress;
    const RunReport rep = train(model, task, tc);
    fs::create_directories(out_dir);
    save_checkpoint(model, d.g_x, d.g_y, (out_dir / "checkpoint.json").string());
    save_metrics_csv(rep, (out_dir / "metrics.csv").string());
    r.best_val = rep.best_val_loss;
    r.best_epoch = rep.best_epoch;
    r.epochs_run = rep.trace.size();
    if (rep.trace.empty()) {
        log << "no epochs run\n";
    } else {
        log << "best_epoch=" << rep.best_epoch << '\n' << "val_loss=" << cfg::fmt17(rep.best_val_loss) << '\n';
    }
    r.log = log.str();
    return r;
}

inline int cmd_train(const Config& c, const RunOptions& o, std::ostream& out) {
    const std::vector<std::uint64_t> seeds = sweep_seeds(c);
    if (seeds.size() == 1) {
        const TrainResult r = train_one(c, seeds[0], c.out_dir, o.dry_run, true, out);
        out << r.log;
        return 0;
    }
    std::vector<TrainResult> results(seeds.size());
    parallel_for(seeds.size(), o.jobs, [&](std::size_t i) {
        std::ostringstream local;
        results[i] = train_one(c, seeds[i], c.out_dir / ("seed_" + std::to_string(seeds[i])), o.dry_run, false, local);
    });
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        out << "seed=" << seeds[i] << '\n';
        std::istringstream lines(results[i].log);
        std::string line;
        while (std::getline(lines, line))
            if (line.find(',') == std::string::npos) out << "  " << line << '\n';
        if (!o.dry_run && results[i].epochs_run) rows.push_back({"train", seeds[i], "best_val_loss", results[i].best_val});
    }
    if (!o.dry_run) {
        fs::create_directories(c.out_dir);
        save_sweep_csv(rows, (c.out_dir / "sweep.csv").string());
    }
    return 0;
}

inline Metric default_metric(const Dataset& d, LossKind loss) {
    if (loss == LossKind::cross_entropy) return Metric::accuracy;
    return d.weights.empty() ? Metric::mse : Metric::weighted_mse;
}

inline int cmd_eval(const Config& c, std::ostream& out) {
    const std::string task_name = cfg::require<std::string>(c.doc, "task", "config");
    const Dataset d = load_dataset(c, cfg::section(c.doc, "data"), c.seed);
    const json& ej = cfg::section(c.doc, "eval");
    const json& tj = cfg::section(c.doc, "train");
    const LossKind loss = tj.contains("loss") ? parse_loss_kind(cfg::get<std::string>(tj, "loss", "mse"))
                                              : default_loss(task_name, d);
    const std::string ckpt = ej.contains("checkpoint") ? c.path(cfg::get<std::string>(ej, "checkpoint", ""))
                                                       : (c.out_dir / "checkpoint.json").string();
    Checkpoint cp = load_checkpoint(ckpt, d.g_x, d.g_y);
    if (cp.model.mode() != ModelMode::supervised) {
        throw ConfigError("eval metrics (mse, accuracy, weighted_mse) need a supervised model");
    }
    const Metric metric =
        ej.contains("metric") ? parse_metric(cfg::get<std::string>(ej, "metric", "mse")) : default_metric(d, loss);
    if (metric == Metric::accuracy && d.labels.empty()) throw ConfigError("accuracy needs labels");
    if (metric == Metric::weighted_mse && d.weights.empty()) throw ConfigError("weighted_mse needs node weights");
    double value = 0.0;
    if (!d.samples.empty()) {
        value = evaluate(cp.model, d.g_x, d.g_y, d.samples, metric, d.weights);
    } else {
        const std::string which = cfg::get<std::string>(ej, "nodes", d.has_split ? "test" : "all");
        std::vector<std::size_t> nodes;
        if (which == "train") nodes = d.split.train;
        else if (which == "val") nodes = d.split.val;
        else if (which == "test") nodes = d.split.test;
        else if (which != "all") throw ConfigError("eval nodes must be train, val, test or all");
        if (which != "all" && nodes.empty()) throw ConfigError("eval node set '" + which + "' is empty");
        SemisupTask t{&d.g_x, &d.g_y, d.x, d.y, d.labels, d.split};
        value = evaluate(cp.model, t, nodes, metric, d.weights);
    }
    out << "metric=" << cfg::fmt17(value) << '\n';
    fs::create_directories(c.out_dir);
    append_sweep_row({"eval", c.seed, to_string(metric), value}, (c.out_dir / "sweep.csv").string());
    return 0;
}

/// Downstream accuracies of one self-supervised run.
struct SslResult {
    double acc_both = 0.0;   // ψ^Y(Y_s | G_s)
    double acc_gprime = 0.0; // C·ψ^X(X′ | G′)
    double acc_raw = 0.0;    // Y_s itself
};

/// Scored on the test nodes; a label budget covering every node leaves none,
/// and the labelled nodes are scored instead.
inline double logistic_accuracy(const Matrix& emb, const Dataset& d, const LogisticConfig& lc) {
    const std::vector<std::size_t>& scored = d.split.test.empty() ? d.split.train : d.split.test;
    const Matrix tr = linalg::gather_rows(emb, d.split.train);
    std::vector<int> tr_labels;
    for (std::size_t i : d.split.train) tr_labels.push_back(d.labels[i]);
    LogisticConfig l = lc;
    l.num_classes = d.num_classes;
    const LogisticModel m = logistic_fit(tr, tr_labels, l);
    const std::vector<int> pred = logistic_predict(m, linalg::gather_rows(emb, scored));
    std::size_t hit = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) hit += pred[k] == d.labels[scored[k]];
    return static_cast<double>(hit) / static_cast<double>(scored.size());
}

/// Column-standardized copy (zero mean, unit variance; constant columns left at zero).
inline Matrix standardize_columns(const Matrix& a) {
    Matrix out = center_columns(a);
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double ss = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) ss += out(i, j) * out(i, j);
        const double sd = std::sqrt(ss / static_cast<double>(a.rows()));
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = sd > 1e-12 ? out(i, j) / sd : 0.0;
    }
    return out;
}

/// Trains the cca model on one corrupted task and scores both embeddings
/// and the raw features with the downstream classifier.
inline SslResult ssl_run(const json& ssl, const json& model_j, const json& train_j, double ratio,
                         std::uint64_t seed) {
    Dataset d = dataset_from_ssl(gen_ssl_task(ssl_params(ssl, ratio), seed), ssl, seed);
    json mj = model_j;
    if (!mj.contains("psi_z")) mj["psi_z"] = {{"kind", "copy_common"}};
    if (!mj.contains("side")) mj["side"] = "input";
    IOModel model = build_model(mj, d, ModelMode::cca, LossKind::cca, derive_seed(seed, 100));
    preflight(model, d, LossKind::cca);
    const TrainConfig tc = train_config(train_j, LossKind::cca, seed);
    train(model, make_task("cca", d), tc);

    Tape tape;
    auto [zx, zy] = model.cca_forward(tape, d.g_x, d.g_y, tape.constant(d.x), tape.constant(d.y));
    LogisticConfig lc;
    const json& lj = cfg::section(ssl, "classifier");
    lc.epochs = cfg::get<std::size_t>(lj, "epochs", lc.epochs);
    lc.lr = cfg::get<double>(lj, "lr", lc.lr);
    lc.seed = seed;
    SslResult r;
    r.acc_both = logistic_accuracy(standardize_columns(zy.value()), d, lc);
    r.acc_gprime = logistic_accuracy(standardize_columns(zx.value()), d, lc);
    r.acc_raw = logistic_accuracy(standardize_columns(d.y), d, lc);
    return r;
}

inline int cmd_ssl(const Config& c, const RunOptions& o, std::ostream& out) {
    const json& ssl = cfg::section(c.doc, "ssl");
    const auto ratios = cfg::get<std::vector<double>>(ssl, "ratios", {0.0});
    const std::vector<std::uint64_t> seeds = sweep_seeds(c);
    const json& mj = cfg::section(c.doc, "model");
    const json& tj = cfg::section(c.doc, "train");
    if (o.dry_run) {
        Dataset d = dataset_from_ssl(gen_ssl_task(ssl_params(ssl, ratios.front()), seeds.front()), ssl, seeds.front());
        json m = mj;
        if (!m.contains("psi_z")) m["psi_z"] = {{"kind", "copy_common"}};
        if (!m.contains("side")) m["side"] = "input";
        IOModel model = build_model(m, d, ModelMode::cca, LossKind::cca, 0);
        preflight(model, d, LossKind::cca);
        train_config(tj, LossKind::cca, 0);
        out << "dry-run ok: ssl ratios=" << ratios.size() << " seeds=" << seeds.size() << " V_s=" << d.g_y.num_nodes()
            << '\n';
        return 0;
    }
    const std::size_t n = ratios.size() * seeds.size();
    std::vector<SslResult> res(n);
    parallel_for(n, o.jobs, [&](std::size_t k) {
        res[k] = ssl_run(ssl, mj, tj, ratios[k / seeds.size()], seeds[k % seeds.size()]);
    });
    std::vector<SweepRow> rows;
    for (std::size_t r = 0; r < ratios.size(); ++r) {
        SslResult mean;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const SslResult& x = res[r * seeds.size() + s];
            const std::string run = "ratio=" + cfg::fmt17(ratios[r]);
            rows.push_back({run, seeds[s], "acc_both", x.acc_both});
            rows.push_back({run, seeds[s], "acc_gprime", x.acc_gprime});
            rows.push_back({run, seeds[s], "acc_raw", x.acc_raw});
            mean.acc_both += x.acc_both / static_cast<double>(seeds.size());
            mean.acc_gprime += x.acc_gprime / static_cast<double>(seeds.size());
            mean.acc_raw += x.acc_raw / static_cast<double>(seeds.size());
        }
        out << "ratio=" << cfg::fmt17(ratios[r]) << " acc_both=" << cfg::fmt17(mean.acc_both)
            << " acc_gprime=" << cfg::fmt17(mean.acc_gprime) << " acc_raw=" << cfg::fmt17(mean.acc_raw) << '\n';
    }
    fs::create_directories(c.out_dir);
    save_sweep_csv(rows, (c.out_dir / "ssl_sweep.csv").string());
    return 0;
}

inline int cmd_gradcheck(const Config& c, std::ostream& out) {
    const std::string task_name = cfg::require<std::string>(c.doc, "task", "config");
    const Dataset d = load_dataset(c, cfg::section(c.doc, "data"), c.seed);
    const json& tj = cfg::section(c.doc, "train");
    const LossKind loss = tj.contains("loss") ? parse_loss_kind(cfg::get<std::string>(tj, "loss", "mse"))
                                              : default_loss(task_name, d);
    IOModel model = build_model(cfg::section(c.doc, "model"), d, task_mode(task_name), loss, derive_seed(c.seed, 100));
    preflight(model, d, loss);
    const TrainConfig tc = train_config(tj, loss, c.seed);
    const Task task = make_task(task_name, d);
    std::vector<Parameter*> params = model.parameters();
    const double err = grad_check([&](Tape& t) { return task_loss(t, model, task, tc); }, params);
    out << "max_rel_error=" << cfg::fmt17(err) << '\n';
    return err < 1e-4 ? 0 : 3;
}

// ---------------------------------------------------------------------------
// Entry point

/// 0 success, 1 configuration/validation, 2 I/O or parse, 3 numeric.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
    return 1;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Input-output graph neural networks: generate data, train, evaluate"};
    app.require_subcommand(1, 1);
    RunOptions o;
    std::string command;
    auto add = [&](const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config_path, "JSON config file")->required();
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--out", o.out_dir, "override the output directory");
        sub->add_option("--jobs", o.jobs, "parallel workers for seed sweeps")->check(CLI::PositiveNumber);
        sub->add_flag("--dry-run", o.dry_run, "validate config and shapes without training");
        sub->callback([&command, name] { command = name; });
    };
    add("generate", "write a synthetic dataset");
    add("train", "train a model and write checkpoint + metrics");
    add("eval", "evaluate a checkpoint");
    add("ssl", "self-supervised pipeline with downstream classifier");
    add("gradcheck", "compare backprop against finite differences");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    try {
        const Config c = load_config(o.config_path, o.seed, o.out_dir);
        if (command == "generate") return cmd_generate(c, out);
        if (command == "train") return cmd_train(c, o, out);
        if (command == "eval") return cmd_eval(c, out);
        if (command == "ssl") return cmd_ssl(c, o, out);
        return cmd_gradcheck(c, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

} // namespace iognn::cli
