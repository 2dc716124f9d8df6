#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace iognn {

struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;
    double w = 1.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Weighted undirected graph. Self-loops are never stored; operators that
/// need diagonal loading add it themselves.
class Graph {
public:
    Graph() = default;

    Graph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
        if (n_ == 0) throw ValidationError("graph must have at least one node");
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const Edge& e : edges_) {
            if (e.u >= n_ || e.v >= n_) {
                throw ValidationError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                                      ") references a node outside [0, " + std::to_string(n_) + ")");
            }
            if (e.u == e.v) throw ValidationError("self-loop on node " + std::to_string(e.u));
            if (!std::isfinite(e.w) || !(e.w > 0.0)) {
                throw ValidationError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                                      ") has non-positive or non-finite weight");
            }
            if (!seen.emplace(std::min(e.u, e.v), std::max(e.u, e.v)).second) {
                throw ValidationError("duplicate undirected edge (" + std::to_string(e.u) + ", " +
                                      std::to_string(e.v) + ")");
            }
        }
    }

    std::size_t num_nodes() const noexcept { return n_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    static constexpr bool undirected() noexcept { return true; }

    /// Sorted neighbor lists, ignoring weights.
    std::vector<std::vector<std::size_t>> adjacency_lists() const {
        std::vector<std::vector<std::size_t>> adj(n_);
        for (const Edge& e : edges_) {
            adj[e.u].push_back(e.v);
            adj[e.v].push_back(e.u);
        }
        for (auto& a : adj) std::sort(a.begin(), a.end());
        return adj;
    }

    friend bool operator==(const Graph&, const Graph&) = default;

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
};

/// Partial correspondence (input node, output node) between two graphs.
struct NodeMap {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    void validate(std::size_t n_in, std::size_t n_out) const {
        std::set<std::size_t> a, b;
        for (auto [i, j] : pairs) {
            if (i >= n_in || j >= n_out) throw ValidationError("node map pair references a missing node");
            if (!a.insert(i).second || !b.insert(j).second) {
                throw ValidationError("node map uses a node twice on one side");
            }
        }
    }
};

/// Row selector C ∈ {0,1}^{Ns×N} in index form.
struct SamplingMatrix {
    std::vector<std::size_t> selected;
    std::size_t parent_nodes = 0;

    Matrix materialize() const {
        Matrix c(selected.size(), parent_nodes);
        for (std::size_t i = 0; i < selected.size(); ++i) c(i, selected[i]) = 1.0;
        return c;
    }

    Matrix apply(const Matrix& x) const { return linalg::gather_rows(x, selected); }
};

enum class GsoKind { adjacency, laplacian, normalized_loaded_adjacency };

inline std::string to_string(GsoKind k) {
    switch (k) {
    case GsoKind::adjacency: return "adjacency";
    case GsoKind::laplacian: return "laplacian";
    case GsoKind::normalized_loaded_adjacency: return "normalized_loaded_adjacency";
    }
    return "?";
}

inline GsoKind parse_gso_kind(const std::string& s) {
    if (s == "adjacency") return GsoKind::adjacency;
    if (s == "laplacian") return GsoKind::laplacian;
    if (s == "normalized_loaded_adjacency") return GsoKind::normalized_loaded_adjacency;
    throw ConfigError("unknown gso kind '" + s + "'");
}

/// Dense graph-shift operator.
inline Matrix gso(const Graph& g, GsoKind kind) {
    const std::size_t n = g.num_nodes();
    Matrix a(n, n);
    for (const Edge& e : g.edges()) {
        a(e.u, e.v) = e.w;
        a(e.v, e.u) = e.w;
    }
    switch (kind) {
    case GsoKind::adjacency:
        return a;
    case GsoKind::laplacian: {
        Matrix l = linalg::scale(-1.0, a);
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < n; ++j) d += a(i, j);
            l(i, i) = d;
        }
        return l;
    }
    case GsoKind::normalized_loaded_adjacency: {
        // D̂ ≥ 1 on every node thanks to the loaded diagonal.
        std::vector<double> inv_sqrt(n);
        for (std::size_t i = 0; i < n; ++i) {
            a(i, i) = 1.0;
            double d = 0.0;
            for (std::size_t j = 0; j < n; ++j) d += a(i, j);
            inv_sqrt[i] = 1.0 / std::sqrt(d);
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt[i] * inv_sqrt[j];
        return a;
    }
    }
    return a;
}

/// (Σ_r h_r S^r)·x by repeated shifting.
inline Matrix graph_filter(const Matrix& s, std::span<const double> h, const Matrix& x) {
    if (s.rows() != s.cols()) throw ShapeError("graph_filter: shift operator " + s.shape() + " is not square");
    if (h.empty()) throw ParameterError("graph_filter: need at least one coefficient");
    if (x.rows() != s.rows()) throw ShapeError("graph_filter: signal " + x.shape() + " vs shift " + s.shape());
    Matrix shifted = x;
    Matrix out = linalg::scale(h[0], x);
    for (std::size_t r = 1; r < h.size(); ++r) {
        shifted = linalg::matmul(s, shifted);
        linalg::axpy(h[r], shifted, out);
    }
    return out;
}

/// Subgraph plus, for every new node id, the id it had in the parent graph.
struct Subgraph {
    Graph graph;
    std::vector<std::size_t> parent_ids;
};

/// Induced subgraph on `nodes`; new id i corresponds to parent id nodes[i].
inline Subgraph induced_subgraph(const Graph& g, std::span<const std::size_t> nodes) {
    std::vector<std::size_t> local(g.num_nodes(), SIZE_MAX);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] >= g.num_nodes()) throw ValidationError("induced_subgraph: node out of range");
        if (local[nodes[i]] != SIZE_MAX) throw ValidationError("induced_subgraph: node listed twice");
        local[nodes[i]] = i;
    }
    std::vector<Edge> edges;
    for (const Edge& e : g.edges()) {
        if (local[e.u] != SIZE_MAX && local[e.v] != SIZE_MAX) edges.push_back({local[e.u], local[e.v], e.w});
    }
    return {Graph(nodes.size(), std::move(edges)), std::vector<std::size_t>(nodes.begin(), nodes.end())};
}

/// Hop distance from `root` to every node (SIZE_MAX when unreachable).
inline std::vector<std::size_t> bfs_distances(const Graph& g, std::size_t root) {
    auto adj = g.adjacency_lists();
    std::vector<std::size_t> dist(g.num_nodes(), SIZE_MAX);
    std::vector<std::size_t> frontier{root};
    dist[root] = 0;
    for (std::size_t d = 1; !frontier.empty(); ++d) {
        std::vector<std::size_t> next;
        for (std::size_t u : frontier)
            for (std::size_t v : adj[u])
                if (dist[v] == SIZE_MAX) {
                    dist[v] = d;
                    next.push_back(v);
                }
        frontier = std::move(next);
    }
    return dist;
}

/// Snowball sample: every node within `k` hops of `root`, numbered level by
/// level, ascending parent id inside each level.
inline Subgraph snowball_subgraph(const Graph& g, std::size_t root, std::size_t k) {
    if (root >= g.num_nodes()) throw ValidationError("snowball_subgraph: root out of range");
    auto adj = g.adjacency_lists();
    std::vector<bool> seen(g.num_nodes(), false);
    std::vector<std::size_t> order{root};
    std::vector<std::size_t> frontier{root};
    seen[root] = true;
    for (std::size_t hop = 0; hop < k && !frontier.empty(); ++hop) {
        std::vector<std::size_t> next;
        for (std::size_t u : frontier)
            for (std::size_t v : adj[u])
                if (!seen[v]) {
                    seen[v] = true;
                    next.push_back(v);
                }
        std::sort(next.begin(), next.end());
        order.insert(order.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return induced_subgraph(g, order);
}

inline std::size_t count_from_ratio(double ratio, std::size_t total) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total)));
}

inline void check_ratio(double ratio, const char* op) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ParameterError(std::string(op) + ": ratio must lie in [0, 1]");
}

/// Removes exactly floor(ratio·|E|) uniformly chosen edges.
inline Graph drop_edges(const Graph& g, double ratio, std::uint64_t seed) {
    check_ratio(ratio, "drop_edges");
    const std::size_t m = g.num_edges();
    const std::size_t drop = count_from_ratio(ratio, m);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<bool> removed(m, false);
    for (std::size_t i = 0; i < drop; ++i) removed[idx[i]] = true;
    std::vector<Edge> kept;
    for (std::size_t i = 0; i < m; ++i)
        if (!removed[i]) kept.push_back(g.edges()[i]);
    return Graph(g.num_nodes(), std::move(kept));
}

struct MaskedFeatures {
    Matrix x;
    std::vector<std::size_t> masked_columns;
};

/// Zeroes exactly floor(ratio·F) uniformly chosen columns.
inline MaskedFeatures mask_features(const Matrix& x, double ratio, std::uint64_t seed) {
    check_ratio(ratio, "mask_features");
    const std::size_t f = x.cols();
    const std::size_t k = count_from_ratio(ratio, f);
    std::vector<std::size_t> cols(f);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(cols.begin(), cols.end(), rng);
    cols.resize(k);
    std::sort(cols.begin(), cols.end());
    MaskedFeatures out{x, cols};
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t c : cols) out.x(i, c) = 0.0;
    return out;
}

struct NodeSample {
    Graph graph;
    SamplingMatrix sampling;
    Matrix signal;
};

/// Induced subgraph on max(1, floor(ratio·N)) uniformly chosen nodes, listed
/// in ascending parent id, with the matching rows of `x`.
inline NodeSample sample_nodes(const Graph& g, const Matrix& x, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ParameterError("sample_nodes: ratio must lie in (0, 1]");
    if (x.rows() != g.num_nodes()) throw ShapeError("sample_nodes: signal rows do not match node count");
    const std::size_t n = g.num_nodes();
    const std::size_t ns = std::max<std::size_t>(1, count_from_ratio(ratio, n));
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(ns);
    std::sort(ids.begin(), ids.end());
    SamplingMatrix c{ids, n};
    Subgraph sub = induced_subgraph(g, ids);
    return {std::move(sub.graph), c, c.apply(x)};
}

/// Pairs (i, j) with map_x[i] == map_y[j], ordered by i.
inline NodeMap common_node_map(std::span<const std::size_t> map_x, std::span<const std::size_t> map_y) {
    std::vector<std::pair<std::size_t, std::size_t>> by_parent;
    by_parent.reserve(map_y.size());
    for (std::size_t j = 0; j < map_y.size(); ++j) by_parent.emplace_back(map_y[j], j);
    std::sort(by_parent.begin(), by_parent.end());
    NodeMap m;
    for (std::size_t i = 0; i < map_x.size(); ++i) {
        auto it = std::lower_bound(by_parent.begin(), by_parent.end(), std::make_pair(map_x[i], std::size_t{0}));
        if (it != by_parent.end() && it->first == map_x[i]) m.pairs.emplace_back(i, it->second);
    }
    return m;
}

} // namespace iognn
