#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "grassnet/error.hpp"
#include "grassnet/rng.hpp"
#include "grassnet/tensor.hpp"

namespace grassnet {

/// Undirected edge stored with u < v.
struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline Edge make_edge(std::size_t a, std::size_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

/// Attributed, labelled, unweighted simple graph. Edges are kept sorted.
struct Graph {
    std::string name;
    std::size_t n = 0;
    std::vector<Edge> edges;
    Tensor features;  // n x d
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t feature_dim() const { return features.cols(); }

    friend bool operator==(const Graph&, const Graph&) = default;
};

/// Throws on any broken invariant: self-loops, duplicates, out-of-range
/// endpoints or labels, non-finite features, size mismatches.
inline void validate(const Graph& g) {
    require(g.features.rank() == 2 && g.features.rows() == g.n, "dimension_mismatch",
            "features have " + std::to_string(g.features.rows()) + " rows, expected " + std::to_string(g.n));
    require(g.labels.size() == g.n, "dimension_mismatch",
            "labels have " + std::to_string(g.labels.size()) + " entries, expected " + std::to_string(g.n));
    require(all_finite(g.features), "nan_feature", "features contain NaN or Inf");
    for (std::size_t i = 0; i < g.n; ++i)
        require(g.labels[i] >= 0 && static_cast<std::size_t>(g.labels[i]) < g.num_classes, "label_out_of_range",
                "label out of range at node " + std::to_string(i) + ": " + std::to_string(g.labels[i]));
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const Edge& e = g.edges[i];
        require(e.u != e.v, "self_loop", "self-loop at node " + std::to_string(e.u));
        require(e.u < e.v && e.v < g.n, "edge_out_of_range",
                "edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ") out of range");
        require(i == 0 || g.edges[i - 1] < e, "duplicate_edge",
                "duplicate edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
    }
}

inline std::vector<std::size_t> degrees(const Graph& g) {
    std::vector<std::size_t> deg(g.n, 0);
    for (const Edge& e : g.edges) {
        ++deg[e.u];
        ++deg[e.v];
    }
    return deg;
}

inline std::vector<std::vector<std::size_t>> adjacency_lists(const Graph& g) {
    std::vector<std::vector<std::size_t>> adj(g.n);
    for (const Edge& e : g.edges) {
        adj[e.u].push_back(e.v);
        adj[e.v].push_back(e.u);
    }
    return adj;
}

/// Component id per node, numbered by smallest member.
inline std::vector<std::size_t> connected_components(const Graph& g, std::size_t* count = nullptr) {
    const auto adj = adjacency_lists(g);
    constexpr auto unset = static_cast<std::size_t>(-1);
    std::vector<std::size_t> comp(g.n, unset);
    std::size_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < g.n; ++s) {
        if (comp[s] != unset) continue;
        comp[s] = next;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t v : adj[u])
                if (comp[v] == unset) {
                    comp[v] = next;
                    stack.push_back(v);
                }
        }
        ++next;
    }
    if (count) *count = next;
    return comp;
}

inline std::size_t count_components(const Graph& g) {
    std::size_t c = 0;
    connected_components(g, &c);
    return c;
}

/// L = I - D^{-1/2} A D^{-1/2}, unweighted, no self-loops added. Isolated
/// nodes use D^{-1/2} = 0, so their row is the unit row. Built so that
/// L(u,v) and L(v,u) come from the same expression and are bit-identical.
inline Tensor build_normalized_laplacian(const Graph& g) {
    const auto deg = degrees(g);
    std::vector<double> inv_sqrt(g.n, 0.0);
    for (std::size_t i = 0; i < g.n; ++i)
        if (deg[i] > 0) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(deg[i]));
    Tensor lap = Tensor::identity(g.n);
    for (const Edge& e : g.edges) {
        const double w = -(inv_sqrt[e.u] * inv_sqrt[e.v]);
        lap(e.u, e.v) = w;
        lap(e.v, e.u) = w;
    }
    return lap;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "missing_file", "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        lines.push_back(line);
    }
    return lines;
}

inline double parse_double(const std::string& tok, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        require(tok.find_first_not_of(" \t", pos) == std::string::npos, "parse_error", "bad number in " + where);
        return v;
    } catch (const std::invalid_argument&) {
        fail("parse_error", "bad number '" + tok + "' in " + where);
    } catch (const std::out_of_range&) {
        fail("nan_feature", "feature value out of double range in " + where);
    }
}

inline long long parse_int(const std::string& tok, const std::string& where) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(tok, &pos);
        require(tok.find_first_not_of(" \t", pos) == std::string::npos, "parse_error", "bad integer in " + where);
        return v;
    } catch (const std::logic_error&) {
        fail("parse_error", "bad integer '" + tok + "' in " + where);
    }
}

}  // namespace detail

/// Reads manifest.json plus the edges/features/labels files it references
/// (paths relative to the manifest directory). Rejects duplicates and
/// self-loops rather than dropping them.
inline Graph load_graph(const std::filesystem::path& manifest_path) {
    std::filesystem::path manifest = manifest_path;
    if (std::filesystem::is_directory(manifest)) manifest /= "manifest.json";
    std::ifstream in(manifest);
    require(static_cast<bool>(in), "missing_file", "cannot open " + manifest.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("parse_error", manifest.string() + ": " + e.what());
    }
    const auto base = manifest.parent_path();

    Graph g;
    std::size_t d = 0;
    std::string edges_file, features_file, labels_file;
    try {
        g.name = m.value("name", std::string{});
        g.n = m.at("n").get<std::size_t>();
        d = m.at("d").get<std::size_t>();
        g.num_classes = m.at("num_classes").get<std::size_t>();
        edges_file = m.at("edges").get<std::string>();
        features_file = m.at("features").get<std::string>();
        labels_file = m.at("labels").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail("parse_error", manifest.string() + ": " + e.what());
    }

    std::set<Edge> seen;
    for (const auto& line : detail::read_lines(base / edges_file)) {
        std::istringstream ls(line);
        std::string a, b, extra;
        require(static_cast<bool>(std::getline(ls, a, '\t')) && static_cast<bool>(std::getline(ls, b, '\t')) &&
                    !std::getline(ls, extra, '\t'),
                "parse_error", "edges.tsv line must be 'u<TAB>v': " + line);
        const long long u = detail::parse_int(a, "edges.tsv");
        const long long v = detail::parse_int(b, "edges.tsv");
        require(u >= 0 && v >= 0 && static_cast<std::size_t>(u) < g.n && static_cast<std::size_t>(v) < g.n,
                "edge_out_of_range", "edge endpoint out of range: " + line);
        require(u != v, "self_loop", "self-loop in edges.tsv: " + line);
        const Edge e = make_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
        require(seen.insert(e).second, "duplicate_edge", "duplicate edge in edges.tsv: " + line);
    }
    g.edges.assign(seen.begin(), seen.end());

    const auto feature_lines = detail::read_lines(base / features_file);
    require(feature_lines.size() == g.n, "dimension_mismatch",
            "features.csv has " + std::to_string(feature_lines.size()) + " rows, manifest says n=" +
                std::to_string(g.n));
    g.features = Tensor::matrix(g.n, d);
    for (std::size_t i = 0; i < g.n; ++i) {
        std::istringstream ls(feature_lines[i]);
        std::string tok;
        std::size_t j = 0;
        while (std::getline(ls, tok, ',')) {
            require(j < d, "dimension_mismatch", "features.csv row " + std::to_string(i) + " has more than d columns");
            const double v = detail::parse_double(tok, "features.csv");
            require(std::isfinite(v), "nan_feature", "non-finite feature at row " + std::to_string(i));
            g.features(i, j++) = v;
        }
        require(j == d, "dimension_mismatch",
                "features.csv row " + std::to_string(i) + " has " + std::to_string(j) + " columns, expected " +
                    std::to_string(d));
    }

    const auto label_lines = detail::read_lines(base / labels_file);
    require(label_lines.size() == g.n, "dimension_mismatch",
            "labels.csv has " + std::to_string(label_lines.size()) + " rows, manifest says n=" + std::to_string(g.n));
    g.labels.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const long long y = detail::parse_int(label_lines[i], "labels.csv");
        require(y >= 0 && static_cast<std::size_t>(y) < g.num_classes, "label_out_of_range",
                "label out of range at row " + std::to_string(i) + ": " + std::to_string(y));
        g.labels[i] = static_cast<int>(y);
    }
    validate(g);
    return g;
}

/// Writes a dataset directory in the ingestion format; returns the manifest path.
inline std::filesystem::path save_graph(const Graph& g, const std::filesystem::path& dir) {
    validate(g);
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "edges.tsv");
        for (const Edge& e : g.edges) out << e.u << '\t' << e.v << '\n';
    }
    {
        std::ofstream out(dir / "features.csv");
        out.precision(17);
        for (std::size_t i = 0; i < g.n; ++i) {
            for (std::size_t j = 0; j < g.feature_dim(); ++j) out << (j ? "," : "") << g.features(i, j);
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "labels.csv");
        for (int y : g.labels) out << y << '\n';
    }
    const nlohmann::ordered_json manifest = {{"name", g.name},
                                             {"n", g.n},
                                             {"d", g.feature_dim()},
                                             {"num_classes", g.num_classes},
                                             {"edges", "edges.tsv"},
                                             {"features", "features.csv"},
                                             {"labels", "labels.csv"}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    return dir / "manifest.json";
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
    std::uint64_t seed = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    friend bool operator==(const Split&, const Split&) = default;
};

/// Uniform (unstratified) 60/20/20 split: SplitMix64(seed) Fisher-Yates
/// permutation of 0..n-1, first floor(0.6n) train, next floor(0.2n) val,
/// rest test. Each list is returned sorted.
inline Split make_splits(std::size_t n, std::uint64_t seed) {
    require(n >= 5, "too_small", "need at least 5 nodes for a 60/20/20 split, got " + std::to_string(n));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 rng(seed);
    rng.shuffle(perm);
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    Split s;
    s.seed = seed;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

inline nlohmann::ordered_json split_to_json(const Split& s) {
    return {{"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline Split split_from_json(const nlohmann::json& j) {
    Split s;
    try {
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train = j.at("train").get<std::vector<std::size_t>>();
        s.val = j.at("val").get<std::vector<std::size_t>>();
        s.test = j.at("test").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        fail("parse_error", std::string("splits.json: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Perturbations

/// Copy of g with m edges removed, chosen by a SplitMix64(seed) shuffle of
/// the sorted edge list (the first m shuffled edges go).
inline Graph remove_edges_random(const Graph& g, std::size_t m, std::uint64_t seed) {
    require(m <= g.edges.size(), "too_many_edges",
            "cannot remove " + std::to_string(m) + " of " + std::to_string(g.edges.size()) + " edges");
    std::vector<std::size_t> order(g.edges.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    rng.shuffle(order);
    std::vector<char> drop(g.edges.size(), 0);
    for (std::size_t i = 0; i < m; ++i) drop[order[i]] = 1;
    Graph out = g;
    out.edges.clear();
    for (std::size_t i = 0; i < g.edges.size(); ++i)
        if (!drop[i]) out.edges.push_back(g.edges[i]);
    return out;
}

/// Keeps only edges whose endpoints share a part label.
inline Graph keep_intra_part_edges(const Graph& g, const std::vector<std::size_t>& part) {
    Graph out = g;
    out.edges.clear();
    for (const Edge& e : g.edges)
        if (part[e.u] == part[e.v]) out.edges.push_back(e);
    return out;
}

/// Induced subgraph on `nodes` (local index = position in `nodes`);
/// features and labels are not carried.
inline Graph induced_subgraph(const Graph& g, const std::vector<std::size_t>& nodes) {
    std::vector<std::size_t> local(g.n, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;
    Graph sub;
    sub.n = nodes.size();
    sub.features = Tensor::matrix(sub.n, 0);
    sub.labels.assign(sub.n, 0);
    sub.num_classes = 1;
    for (const Edge& e : g.edges) {
        const std::size_t a = local[e.u], b = local[e.v];
        if (a != static_cast<std::size_t>(-1) && b != static_cast<std::size_t>(-1)) sub.edges.push_back(make_edge(a, b));
    }
    std::sort(sub.edges.begin(), sub.edges.end());
    return sub;
}

}  // namespace grassnet
