#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "graph.hpp"
#include "training.hpp"

namespace iognn {

/// Independent stream number `k` of a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Matrix standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = dist(rng);
    return m;
}

// ---------------------------------------------------------------------------
// Graphs

struct GeneratedGraph {
    Graph graph;
    std::vector<int> communities; // sbm only
    Matrix coords;                // grid and geometric only, one row per node
};

/// rows x cols 4-neighbour lattice; node r·cols + c sits at (r, c).
inline GeneratedGraph gen_grid(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw ParameterError("grid: rows and cols must be >= 1");
    std::vector<Edge> edges;
    Matrix coords(rows * cols, 2);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t id = r * cols + c;
            coords(id, 0) = static_cast<double>(r);
            coords(id, 1) = static_cast<double>(c);
            if (c + 1 < cols) edges.push_back({id, id + 1, 1.0});
            if (r + 1 < rows) edges.push_back({id, id + cols, 1.0});
        }
    return {Graph(rows * cols, std::move(edges)), {}, std::move(coords)};
}

struct SbmParams {
    std::vector<std::size_t> block_sizes{30, 30, 30, 30};
    double p_in = 0.3;
    double p_out = 0.02;
};

/// Contiguous blocks; every pair i < j is drawn once, in lexicographic order.
inline GeneratedGraph gen_sbm(const SbmParams& p, std::uint64_t seed) {
    if (p.block_sizes.empty()) throw ParameterError("sbm: need at least one block");
    if (!(p.p_in >= 0.0 && p.p_in <= 1.0 && p.p_out >= 0.0 && p.p_out <= 1.0)) {
        throw ParameterError("sbm: probabilities must lie in [0, 1]");
    }
    std::vector<int> comm;
    for (std::size_t b = 0; b < p.block_sizes.size(); ++b) {
        if (p.block_sizes[b] == 0) throw ParameterError("sbm: block sizes must be >= 1");
        comm.insert(comm.end(), p.block_sizes[b], static_cast<int>(b));
    }
    const std::size_t n = comm.size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (u(rng) < (comm[i] == comm[j] ? p.p_in : p.p_out)) edges.push_back({i, j, 1.0});
    return {Graph(n, std::move(edges)), std::move(comm), Matrix()};
}

/// n points uniform in the unit square, joined when within `radius`.
inline GeneratedGraph gen_geometric(std::size_t n, double radius, std::uint64_t seed) {
    if (n == 0) throw ParameterError("geometric: n must be >= 1");
    if (!(radius >= 0.0)) throw ParameterError("geometric: radius must be >= 0");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix coords(n, 2);
    for (double& v : coords.values()) v = u(rng);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = coords(i, 0) - coords(j, 0), dy = coords(i, 1) - coords(j, 1);
            if (std::sqrt(dx * dx + dy * dy) <= radius) edges.push_back({i, j, 1.0});
        }
    return {Graph(n, std::move(edges)), {}, std::move(coords)};
}

enum class GraphKind { sbm, grid, geometric };

inline GraphKind parse_graph_kind(const std::string& s) {
    if (s == "sbm") return GraphKind::sbm;
    if (s == "grid") return GraphKind::grid;
    if (s == "geometric") return GraphKind::geometric;
    throw ConfigError("unknown graph kind '" + s + "' (expected sbm, grid or geometric)");
}

struct GraphSpec {
    GraphKind kind = GraphKind::sbm;
    SbmParams sbm{};
    std::size_t rows = 1, cols = 1; // grid
    std::size_t n = 1;              // geometric
    double radius = 0.0;            // geometric
};

inline GeneratedGraph gen_graph(const GraphSpec& s, std::uint64_t seed) {
    switch (s.kind) {
    case GraphKind::sbm: return gen_sbm(s.sbm, seed);
    case GraphKind::grid: return gen_grid(s.rows, s.cols);
    case GraphKind::geometric: return gen_geometric(s.n, s.radius, seed);
    }
    throw ConfigError("unknown graph kind");
}

// ---------------------------------------------------------------------------
// Signals

/// X = (1/R)·Σ_{r<R} Â^r·W + noise_sd·E with W, E standard normal (W drawn first).
inline Matrix gen_smooth_signal(const Graph& g, std::size_t filter_order, std::size_t f_cols, double noise_sd,
                                std::uint64_t seed) {
    if (filter_order == 0) throw ParameterError("smooth signal: filter order must be >= 1");
    if (f_cols == 0) throw ParameterError("smooth signal: need at least one column");
    std::mt19937_64 rng(seed);
    const Matrix w = standard_normal(g.num_nodes(), f_cols, rng);
    Matrix x;
    if (filter_order == 1) {
        x = w;
    } else {
        const std::vector<double> taps(filter_order, 1.0 / static_cast<double>(filter_order));
        x = graph_filter(gso(g, GsoKind::normalized_loaded_adjacency), taps, w);
    }
    if (noise_sd != 0.0) linalg::axpy(noise_sd, standard_normal(g.num_nodes(), f_cols, rng), x);
    return x;
}

/// Column c carries `signal` on nodes of community c mod C, plus smooth noise.
inline Matrix community_features(const Graph& g, std::span<const int> communities, std::size_t num_classes,
                                 std::size_t f_cols, double signal, double noise_sd, std::uint64_t seed) {
    Matrix x = noise_sd != 0.0 ? gen_smooth_signal(g, 2, f_cols, 0.0, seed) : Matrix(g.num_nodes(), f_cols);
    if (noise_sd != 0.0) x = linalg::scale(noise_sd, x);
    for (std::size_t i = 0; i < g.num_nodes(); ++i)
        for (std::size_t c = 0; c < f_cols; ++c)
            if (c % num_classes == static_cast<std::size_t>(communities[i])) x(i, c) += signal;
    return x;
}

inline std::size_t count_classes(std::span<const int> labels) {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return static_cast<std::size_t>(mx + 1);
}

// ---------------------------------------------------------------------------
// Subgraph task

struct SubgraphTaskParams {
    SbmParams parent{};
    std::uint64_t parent_seed = 1;
    std::size_t k_hops = 1;
    double feature_signal = 1.0;
    double feature_noise = 0.5;
    double train_ratio = 0.3;
    double val_ratio = 0.2;
    std::optional<std::size_t> root_x, root_y;
    std::size_t min_nodes = 3;
    std::size_t max_retries = 100;
};

struct SubgraphTask {
    Graph parent;
    std::vector<int> parent_labels;
    std::size_t num_classes = 0;
    std::size_t root_x = 0, root_y = 0;
    Graph g_x, g_y;
    std::vector<std::size_t> map_x, map_y; // local id -> parent id
    NodeMap common;
    Matrix x;                // one-hot community plus smooth noise, on G_X
    std::vector<int> labels; // communities on G_Y
    NodeSplit split;         // over G_Y
};

/// Two snowball subgraphs of an SBM parent. Roots are distinct and drawn
/// uniformly; a root whose subgraph has fewer than `min_nodes` nodes is
/// redrawn (unless it was given explicitly).
inline SubgraphTask gen_subgraph_task(const SubgraphTaskParams& p, std::uint64_t seed) {
    if (p.k_hops == 0) throw ParameterError("subgraph task: k must be >= 1");
    GeneratedGraph parent = gen_sbm(p.parent, p.parent_seed);
    const std::size_t n = parent.graph.num_nodes();
    if (n < 2) throw ParameterError("subgraph task: parent needs at least two nodes");

    std::mt19937_64 rng(derive_seed(seed, 0));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    auto choose = [&](std::optional<std::size_t> fixed, std::optional<std::size_t> avoid, const char* side) {
        if (fixed) {
            if (*fixed >= n) throw ParameterError(std::string("subgraph task: root_") + side + " out of range");
            Subgraph s = snowball_subgraph(parent.graph, *fixed, p.k_hops);
            if (s.graph.num_nodes() < p.min_nodes) {
                throw ValidationError(std::string("subgraph task: root_") + side + " yields fewer than " +
                                      std::to_string(p.min_nodes) + " nodes");
            }
            return std::make_pair(*fixed, std::move(s));
        }
        for (std::size_t attempt = 0; attempt <= p.max_retries; ++attempt) {
            const std::size_t r = pick(rng);
            if (avoid && r == *avoid) continue;
            Subgraph s = snowball_subgraph(parent.graph, r, p.k_hops);
            if (s.graph.num_nodes() >= p.min_nodes) return std::make_pair(r, std::move(s));
        }
        throw ValidationError("subgraph task: no root with at least " + std::to_string(p.min_nodes) + " nodes after " +
                              std::to_string(p.max_retries) + " retries");
    };
    auto [rx, sx] = choose(p.root_x, p.root_y, "x");
    auto [ry, sy] = choose(p.root_y, rx, "y");
    if (rx == ry) throw ParameterError("subgraph task: roots must be distinct");

    SubgraphTask t;
    t.num_classes = count_classes(parent.communities);
    const Matrix feats = community_features(parent.graph, parent.communities, t.num_classes, t.num_classes,
                                            p.feature_signal, p.feature_noise, derive_seed(seed, 1));
    t.root_x = rx;
    t.root_y = ry;
    t.g_x = std::move(sx.graph);
    t.g_y = std::move(sy.graph);
    t.map_x = std::move(sx.parent_ids);
    t.map_y = std::move(sy.parent_ids);
    t.common = common_node_map(t.map_x, t.map_y);
    t.x = linalg::gather_rows(feats, t.map_x);
    for (std::size_t id : t.map_y) t.labels.push_back(parent.communities[id]);
    t.split = make_split(t.g_y.num_nodes(), p.train_ratio, p.val_ratio, derive_seed(seed, 2));
    t.parent = std::move(parent.graph);
    t.parent_labels = std::move(parent.communities);
    return t;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine task

struct CoarseFineParams {
    std::size_t coarse_rows = 6, coarse_cols = 6;
    std::size_t refine_factor = 2;
    std::size_t filter_order = 4;
    std::size_t f_cols = 1;
    double noise_sd = 0.0;
    double train_ratio = 0.3;
    double val_ratio = 0.2;
};

struct CoarseFineTask {
    Graph g_coarse, g_fine;
    Matrix coarse_coords, fine_coords;   // cell centres in fine-lattice units
    std::vector<std::size_t> membership; // fine node -> coarse node
    Matrix x;                            // coarse signal: membership mean of y
    Matrix y;                            // fine target
    std::vector<double> weights;         // per fine node
    NodeSplit split;                     // over fine nodes
};

/// Membership-wise mean, accumulated in ascending fine id.
inline Matrix membership_mean(const Matrix& y, std::span<const std::size_t> membership, std::size_t n_coarse) {
    Matrix x(n_coarse, y.cols());
    std::vector<double> count(n_coarse, 0.0);
    for (std::size_t i = 0; i < membership.size(); ++i) {
        count[membership[i]] += 1.0;
        for (std::size_t j = 0; j < y.cols(); ++j) x(membership[i], j) += y(i, j);
    }
    for (std::size_t c = 0; c < n_coarse; ++c) {
        if (count[c] == 0.0) throw ValidationError("membership is not surjective");
        for (std::size_t j = 0; j < y.cols(); ++j) x(c, j) /= count[c];
    }
    return x;
}

inline CoarseFineTask gen_coarse_fine_task(const CoarseFineParams& p, std::uint64_t seed) {
    if (p.refine_factor == 0) throw ParameterError("coarse_fine: refine factor must be >= 1");
    const std::size_t r = p.refine_factor;
    GeneratedGraph coarse = gen_grid(p.coarse_rows, p.coarse_cols);
    GeneratedGraph fine = gen_grid(p.coarse_rows * r, p.coarse_cols * r);
    CoarseFineTask t;
    const std::size_t fine_cols = p.coarse_cols * r;
    t.membership.resize(fine.graph.num_nodes());
    for (std::size_t i = 0; i < t.membership.size(); ++i) {
        const std::size_t fr = i / fine_cols, fc = i % fine_cols;
        t.membership[i] = (fr / r) * p.coarse_cols + fc / r;
    }
    t.coarse_coords = coarse.coords;
    const double offset = static_cast<double>(r - 1) / 2.0;
    for (double& v : t.coarse_coords.values()) v = v * static_cast<double>(r) + offset;
    t.fine_coords = fine.coords;
    t.y = gen_smooth_signal(fine.graph, p.filter_order, p.f_cols, p.noise_sd, derive_seed(seed, 0));
    t.x = membership_mean(t.y, t.membership, coarse.graph.num_nodes());
    t.weights.assign(fine.graph.num_nodes(), 1.0);
    t.split = make_split(fine.graph.num_nodes(), p.train_ratio, p.val_ratio, derive_seed(seed, 1));
    t.g_coarse = std::move(coarse.graph);
    t.g_fine = std::move(fine.graph);
    return t;
}

// ---------------------------------------------------------------------------
// Two-view CCA data

struct TwoViewDataset {
    std::vector<Sample> samples; // x: 1 x n_x, y: 1 x n_y
    std::size_t d = 0;
    Matrix a; // n_x x d
    Matrix b; // n_y x d

    Matrix stacked_x() const { return stack([](const Sample& s) -> const Matrix& { return s.x; }); }
    Matrix stacked_y() const { return stack([](const Sample& s) -> const Matrix& { return s.y; }); }

private:
    template <class Get>
    Matrix stack(Get get) const {
        Matrix out(samples.size(), get(samples.front()).cols());
        for (std::size_t p = 0; p < samples.size(); ++p)
            for (std::size_t j = 0; j < out.cols(); ++j) out(p, j) = get(samples[p])(0, j);
        return out;
    }
};

/// x_p = A·s_p + σε, y_p = B·s_p + σε′ with s_p ~ N(0, I_d). A and B are
/// standard normal unless given.
inline TwoViewDataset gen_two_view_cca(std::size_t d, std::size_t n_x, std::size_t n_y, std::size_t p_count,
                                       double noise_sd, std::uint64_t seed, std::optional<Matrix> a = std::nullopt,
                                       std::optional<Matrix> b = std::nullopt) {
    if (d == 0 || d > std::min(n_x, n_y)) throw ParameterError("two_view: need 1 <= d <= min(n_x, n_y)");
    if (p_count < 2) throw ParameterError("two_view: need P >= 2");
    std::mt19937_64 rng(seed);
    TwoViewDataset ds;
    ds.d = d;
    ds.a = a ? *a : standard_normal(n_x, d, rng);
    ds.b = b ? *b : standard_normal(n_y, d, rng);
    if (ds.a.rows() != n_x || ds.a.cols() != d || ds.b.rows() != n_y || ds.b.cols() != d) {
        throw ShapeError("two_view: mixing matrices must be n_x x d and n_y x d");
    }
    std::normal_distribution<double> z(0.0, 1.0);
    ds.samples.reserve(p_count);
    std::vector<double> s(d);
    for (std::size_t p = 0; p < p_count; ++p) {
        for (double& v : s) v = z(rng);
        Sample smp{Matrix(1, n_x), Matrix(1, n_y), {}};
        for (std::size_t i = 0; i < n_x; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += ds.a(i, k) * s[k];
            smp.x(0, i) = acc + noise_sd * z(rng);
        }
        for (std::size_t i = 0; i < n_y; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += ds.b(i, k) * s[k];
            smp.y(0, i) = acc + noise_sd * z(rng);
        }
        ds.samples.push_back(std::move(smp));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Self-supervised task

struct SslParams {
    SbmParams parent{};
    std::optional<std::uint64_t> parent_seed; // derived from the task seed when unset
    std::size_t f_cols = 16;
    double feature_signal = 1.0;
    double feature_noise = 0.5;
    double drop_ratio = 0.0;
    double mask_ratio = 0.0;
    double node_ratio = 0.5;
    double train_ratio = 0.3;
    double val_ratio = 0.2;
};

struct SslTask {
    Graph parent;
    Matrix x; // clean attributes on the parent
    std::vector<int> parent_labels;
    std::size_t num_classes = 0;
    Graph g_prime;  // parent with dropped edges
    Matrix x_prime; // masked attributes
    Graph g_s;      // error-free subgraph
    SamplingMatrix c;
    Matrix y_s;              // C·X
    std::vector<int> labels; // communities on V_s
    NodeSplit split;         // over V_s
    NodeMap common;          // (parent id, subgraph id) pairs
};

inline SslTask gen_ssl_task(const SslParams& p, std::uint64_t seed) {
    check_ratio(p.drop_ratio, "ssl drop ratio");
    check_ratio(p.mask_ratio, "ssl mask ratio");
    GeneratedGraph parent = gen_sbm(p.parent, p.parent_seed ? *p.parent_seed : derive_seed(seed, 0));
    SslTask t;
    t.num_classes = count_classes(parent.communities);
    t.x = community_features(parent.graph, parent.communities, t.num_classes, p.f_cols, p.feature_signal,
                             p.feature_noise, derive_seed(seed, 1));
    t.g_prime = drop_edges(parent.graph, p.drop_ratio, derive_seed(seed, 2));
    t.x_prime = mask_features(t.x, p.mask_ratio, derive_seed(seed, 3)).x;
    NodeSample s = sample_nodes(parent.graph, t.x, p.node_ratio, derive_seed(seed, 4));
    t.g_s = std::move(s.graph);
    t.c = std::move(s.sampling);
    t.y_s = std::move(s.signal);
    for (std::size_t i = 0; i < t.c.selected.size(); ++i) {
        t.labels.push_back(parent.communities[t.c.selected[i]]);
        t.common.pairs.emplace_back(t.c.selected[i], i);
    }
    t.split = make_split(t.g_s.num_nodes(), p.train_ratio, p.val_ratio, derive_seed(seed, 5));
    t.parent = std::move(parent.graph);
    t.parent_labels = std::move(parent.communities);
    return t;
}

} // namespace iognn
