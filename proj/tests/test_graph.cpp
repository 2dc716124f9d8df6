#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "iognn/cca.hpp"
#include "iognn/graph.hpp"

using namespace iognn;
using Catch::Approx;

namespace {

Graph path(std::size_t n) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i + 1 < n; ++i) e.push_back({i, i + 1, 1.0});
    return Graph(n, e);
}

Graph star(std::size_t leaves) {
    std::vector<Edge> e;
    for (std::size_t i = 1; i <= leaves; ++i) e.push_back({0, i, 1.0});
    return Graph(leaves + 1, e);
}

} // namespace

TEST_CASE("graph construction invariants", "[graph]") {
    CHECK_THROWS_AS(Graph(0, {}), ValidationError);
    CHECK_THROWS_AS(Graph(2, {{0, 2, 1.0}}), ValidationError);
    CHECK_THROWS_AS(Graph(2, {{1, 1, 1.0}}), ValidationError);
    CHECK_THROWS_AS(Graph(2, {{0, 1, 0.0}}), ValidationError);
    CHECK_THROWS_AS(Graph(2, {{0, 1, -1.0}}), ValidationError);
    CHECK_THROWS_AS(Graph(2, {{0, 1, 1.0}, {1, 0, 2.0}}), ValidationError);
    Graph g(3, {{0, 1, 2.0}});
    CHECK(g.num_nodes() == 3);
    CHECK(g.num_edges() == 1);
}

TEST_CASE("gso examples", "[graph]") {
    CHECK(gso(Graph(1, {}), GsoKind::normalized_loaded_adjacency) == Matrix{{1.0}});
    const Matrix two = gso(Graph(2, {{0, 1, 1.0}}), GsoKind::normalized_loaded_adjacency);
    for (double v : two.values()) CHECK(v == Approx(0.5).epsilon(1e-15));

    const Matrix p = gso(path(3), GsoKind::normalized_loaded_adjacency);
    CHECK(p(0, 0) == Approx(0.5));
    CHECK(p(1, 1) == Approx(1.0 / 3.0));
    CHECK(p(2, 2) == Approx(0.5));
    CHECK(p(0, 1) == Approx(1.0 / std::sqrt(6.0)));
    CHECK(p(0, 2) == 0.0);

    const Graph w(3, {{0, 1, 2.0}, {1, 2, 0.5}});
    const Matrix a = gso(w, GsoKind::adjacency);
    CHECK(a == Matrix{{0, 2, 0}, {2, 0, 0.5}, {0, 0.5, 0}});
    CHECK(gso(w, GsoKind::laplacian) == Matrix{{2, -2, 0}, {-2, 2.5, -0.5}, {0, -0.5, 0.5}});
}

TEST_CASE("gso kind names", "[graph]") {
    for (GsoKind k : {GsoKind::adjacency, GsoKind::laplacian, GsoKind::normalized_loaded_adjacency})
        CHECK(parse_gso_kind(to_string(k)) == k);
    CHECK_THROWS(parse_gso_kind("random_walk"));
}

TEST_CASE("normalized loaded adjacency spectrum", "[graph][property]") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        const Graph g = testutil::random_graph(n, 0.3, rng);
        const Matrix s = gso(g, GsoKind::normalized_loaded_adjacency);
        // Row sums of Â itself can exceed 1 on irregular graphs: a star with
        // L leaves has center row 1/(L+1) + L/sqrt(2(L+1)), above 1 for L ≥ 2.
        // The similar matrix D̂⁻¹(A+I) = D̂^{-1/2}·Â·D̂^{1/2} is row-stochastic,
        // which is what bounds the spectrum.
        std::vector<double> d(n, 1.0);
        for (const Edge& e : g.edges()) d[e.u] += e.w, d[e.v] += e.w;
        for (std::size_t i = 0; i < n; ++i) {
            double walk = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(s(i, j) == s(j, i));
                walk += s(i, j) * std::sqrt(d[j]) / std::sqrt(d[i]);
            }
            CHECK(walk == Approx(1.0).epsilon(1e-12));
        }
        for (double ev : sym_eig(s).values) {
            CHECK(ev <= 1.0 + 1e-10);
            CHECK(ev >= -1.0 - 1e-10);
        }
    }
}

TEST_CASE("normalized loaded adjacency rows on regular graphs", "[graph]") {
    // Cycle: every node has degree 2, so each row of Â sums to exactly 1.
    std::vector<Edge> e;
    for (std::size_t i = 0; i < 6; ++i) e.push_back({i, (i + 1) % 6, 1.0});
    const Matrix s = gso(Graph(6, e), GsoKind::normalized_loaded_adjacency);
    for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 6; ++j) row += s(i, j);
        CHECK(row == Approx(1.0).epsilon(1e-14));
    }
    // Star with 4 leaves: center row is 1/5 + 4/sqrt(10).
    const Matrix st = gso(star(4), GsoKind::normalized_loaded_adjacency);
    double center = 0.0;
    for (std::size_t j = 0; j < 5; ++j) center += st(0, j);
    CHECK(center == Approx(0.2 + 4.0 / std::sqrt(10.0)).epsilon(1e-14));
}

TEST_CASE("graph_filter against explicit powers", "[graph]") {
    std::mt19937_64 rng(43);
    const Matrix x = testutil::random_matrix(5, 2, rng);
    const Matrix s = testutil::random_matrix(5, 5, rng);
    std::vector<double> h1{1.0};
    CHECK(graph_filter(s, h1, x) == x);
    std::vector<double> h01{0.0, 1.0};
    CHECK(testutil::max_abs_diff(graph_filter(s, h01, x), testutil::naive_matmul(s, x)) < 1e-14);

    std::vector<double> h{1.0, 2.0, 3.0};
    Matrix brute(5, 2);
    for (std::size_t r = 0; r < 3; ++r) {
        const Matrix sx = testutil::naive_matmul(testutil::naive_power(s, r), x);
        for (std::size_t i = 0; i < brute.size(); ++i) brute.values()[i] += h[r] * sx.values()[i];
    }
    CHECK(testutil::max_abs_diff(graph_filter(s, h, x), brute) < 1e-12);

    std::vector<double> empty;
    CHECK_THROWS(graph_filter(s, empty, x));
    CHECK_THROWS_AS(graph_filter(s, h, Matrix(4, 2)), ShapeError);
    CHECK_THROWS_AS(graph_filter(Matrix(5, 4), h, x), ShapeError);
}

TEST_CASE("snowball examples", "[graph]") {
    const Subgraph a = snowball_subgraph(path(5), 2, 1);
    CHECK(a.parent_ids == std::vector<std::size_t>{2, 1, 3});
    CHECK(a.graph.num_edges() == 2);
    CHECK(a.graph.num_nodes() == 3);

    // Path with an extra component {5, 6}.
    Graph g(7, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {5, 6}});
    const Subgraph whole = snowball_subgraph(g, 0, 10);
    CHECK(std::set<std::size_t>(whole.parent_ids.begin(), whole.parent_ids.end()) ==
          std::set<std::size_t>{0, 1, 2, 3, 4});

    const Subgraph s = snowball_subgraph(star(6), 0, 1);
    CHECK(s.graph.num_nodes() == 7);
    CHECK(s.graph.num_edges() == 6);

    const Subgraph k0 = snowball_subgraph(path(4), 1, 0);
    CHECK(k0.parent_ids == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(snowball_subgraph(path(4), 4, 1), ValidationError);
}

TEST_CASE("snowball matches brute-force BFS distance sets", "[graph][property]") {
    std::mt19937_64 rng(47);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 1 + rng() % 50;
        const Graph g = testutil::random_graph(n, 2.0 / static_cast<double>(n + 1), rng);
        const std::size_t root = rng() % n, k = rng() % 4;

        // Distances by Floyd-Warshall, independent of the BFS helper.
        const std::size_t inf = 1000; // larger than any hop budget
        std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
        for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
        for (const Edge& e : g.edges()) d[e.u][e.v] = d[e.v][e.u] = 1;
        for (std::size_t m = 0; m < n; ++m)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][m] + d[m][j]);

        std::set<std::size_t> expect;
        for (std::size_t v = 0; v < n; ++v)
            if (d[root][v] <= k) expect.insert(v);
        const Subgraph sub = snowball_subgraph(g, root, k);
        CHECK(std::set<std::size_t>(sub.parent_ids.begin(), sub.parent_ids.end()) == expect);
        CHECK(sub.parent_ids.front() == root);
        // Level order, ascending parent id within a level.
        for (std::size_t i = 1; i + 1 < sub.parent_ids.size(); ++i) {
            const std::size_t a = sub.parent_ids[i], b = sub.parent_ids[i + 1];
            CHECK((d[root][a] < d[root][b] || (d[root][a] == d[root][b] && a < b)));
        }
        // Induced: every parent edge between kept nodes survives.
        std::size_t induced = 0;
        for (const Edge& e : g.edges())
            if (expect.count(e.u) && expect.count(e.v)) ++induced;
        CHECK(sub.graph.num_edges() == induced);

        const auto bfs = bfs_distances(g, root);
        for (std::size_t v = 0; v < n; ++v) CHECK(bfs[v] == (d[root][v] == inf ? SIZE_MAX : d[root][v]));
    }
}

TEST_CASE("drop_edges", "[graph]") {
    std::vector<Edge> e;
    for (std::size_t i = 0; i < 10; ++i) e.push_back({i, i + 1, 1.0});
    const Graph g(11, e);
    CHECK(drop_edges(g, 0.0, 1).edges() == g.edges());
    const Graph none = drop_edges(g, 1.0, 1);
    CHECK(none.num_edges() == 0);
    CHECK(none.num_nodes() == 11);
    const Graph half = drop_edges(g, 0.5, 1);
    CHECK(half.num_edges() == 5);
    for (const Edge& kept : half.edges()) CHECK(std::find(e.begin(), e.end(), kept) != e.end());
    CHECK(drop_edges(g, 0.33, 1).num_edges() == 7);
    CHECK(drop_edges(g, 0.5, 9).edges() == drop_edges(g, 0.5, 9).edges());
    CHECK_THROWS_AS(drop_edges(g, 1.5, 1), ParameterError);
    CHECK_THROWS_AS(drop_edges(g, -0.1, 1), ParameterError);
}

TEST_CASE("mask_features", "[graph]") {
    std::mt19937_64 rng(53);
    const Matrix x = testutil::random_matrix(6, 4, rng, 1.0, 2.0);
    CHECK(mask_features(x, 0.0, 1).x == x);
    CHECK(mask_features(x, 1.0, 1).x == Matrix(6, 4));
    const MaskedFeatures m = mask_features(x, 0.5, 3);
    CHECK(m.masked_columns.size() == 2);
    std::size_t zero_cols = 0;
    for (std::size_t j = 0; j < 4; ++j) {
        bool all_zero = true, same = true;
        for (std::size_t i = 0; i < 6; ++i) {
            all_zero = all_zero && m.x(i, j) == 0.0;
            same = same && m.x(i, j) == x(i, j);
        }
        CHECK((all_zero || same));
        zero_cols += all_zero;
    }
    CHECK(zero_cols == 2);
    CHECK(mask_features(x, 0.5, 3).masked_columns == m.masked_columns);
}

TEST_CASE("sample_nodes", "[graph]") {
    std::mt19937_64 rng(59);
    const Graph g = testutil::random_graph(12, 0.3, rng);
    const Matrix x = testutil::random_matrix(12, 3, rng);

    const NodeSample full = sample_nodes(g, x, 1.0, 1);
    CHECK(full.signal == x);
    CHECK(full.graph.edges() == g.edges());

    const NodeSample one = sample_nodes(g, x, 0.01, 2);
    CHECK(one.graph.num_nodes() == 1);
    CHECK(one.signal.rows() == 1);
    const std::size_t chosen = one.sampling.selected[0];
    for (std::size_t j = 0; j < 3; ++j) CHECK(one.signal(0, j) == x(chosen, j));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const NodeSample s = sample_nodes(g, x, 0.5, seed);
        CHECK(s.graph.num_nodes() == 6);
        const Matrix c = s.sampling.materialize();
        for (std::size_t i = 0; i < c.rows(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < c.cols(); ++j) row += c(i, j);
            CHECK(row == 1.0);
        }
        CHECK(linalg::matmul(c, x) == s.signal);
        const NodeSample again = sample_nodes(g, x, 0.5, seed);
        CHECK(again.sampling.selected == s.sampling.selected);
        CHECK(again.graph.edges() == s.graph.edges());
    }
    CHECK_THROWS_AS(sample_nodes(g, x, 0.0, 1), ParameterError);
    CHECK_THROWS_AS(sample_nodes(g, Matrix(3, 3), 0.5, 1), ShapeError);
}

TEST_CASE("common_node_map", "[graph]") {
    std::vector<std::size_t> a{5, 7, 9}, b{7, 9, 11}, c{1, 2}, d{3, 4};
    const NodeMap m = common_node_map(a, b);
    CHECK(m.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {2, 1}});
    CHECK(common_node_map(c, d).pairs.empty());
    const NodeMap id = common_node_map(a, a);
    CHECK(id.pairs.size() == 3);
    for (auto [i, j] : id.pairs) CHECK(i == j);
    m.validate(3, 3);
    CHECK_THROWS_AS(m.validate(2, 3), ValidationError);
    NodeMap dup{{{0, 0}, {0, 1}}};
    CHECK_THROWS_AS(dup.validate(3, 3), ValidationError);
}

TEST_CASE("operators are deterministic by seed", "[graph][property]") {
    std::mt19937_64 rng(61);
    const Graph g = testutil::random_graph(20, 0.3, rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CHECK(drop_edges(g, 0.4, seed).edges() == drop_edges(g, 0.4, seed).edges());
    }
}
