#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "grassnet/graph.hpp"

namespace fixtures {

using grassnet::Edge;
using grassnet::Graph;
using grassnet::Tensor;

inline Graph make_graph(std::size_t n, std::vector<Edge> edges, std::size_t d = 1) {
    Graph g;
    g.name = "fixture";
    g.n = n;
    std::sort(edges.begin(), edges.end());
    g.edges = std::move(edges);
    g.features = Tensor::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g.features(i, j) = static_cast<double>(i) - 0.5 * static_cast<double>(j);
    g.labels.assign(n, 0);
    g.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) g.labels[i] = static_cast<int>(i % 2);
    return g;
}

/// Two disjoint triangles {0,1,2} and {3,4,5}.
inline Graph two_triangles() { return make_graph(6, {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}}); }

inline Graph path_graph(std::size_t n) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
    return make_graph(n, e);
}

/// Erdos-Renyi style graph from a std::mt19937_64 stream (independent of the
/// library's generator).
inline Graph random_graph(std::size_t n, double p, std::uint64_t seed, std::size_t d = 3) {
    std::mt19937_64 gen(seed);
    std::bernoulli_distribution coin(p);
    std::vector<Edge> e;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(gen)) e.push_back({i, j});
    return make_graph(n, e, d);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("grassnet_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixtures
