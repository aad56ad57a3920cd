#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "grassnet/graph.hpp"
#include "grassnet/spectral.hpp"

namespace grassnet {

/// Splits a node set in two using the Fiedler vector (second column of the
/// sorted eigendecomposition) of the induced subgraph's normalized Laplacian.
/// Nodes strictly above the median value form one side. When that leaves a
/// side empty, the upper half by stable rank is used instead.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fiedler_bisect(
    const Graph& g, const std::vector<std::size_t>& nodes) {
    const std::size_t m = nodes.size();
    require(m >= 2, "too_small", "cannot bisect fewer than 2 nodes");
    const Graph sub = induced_subgraph(g, nodes);
    const SpectralDecomposition sd = eig_sym(build_normalized_laplacian(sub));
    std::vector<double> f(m);
    for (std::size_t i = 0; i < m; ++i) f[i] = sd.eigenvectors(i, 1);

    std::vector<double> sorted = f;
    std::sort(sorted.begin(), sorted.end());
    const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

    std::vector<std::size_t> low, high;
    if (count_components(sub) > 1) {
        // A disconnected part has a repeated zero eigenvalue and the solver
        // returns component-local vectors for it; peel off the support.
        for (std::size_t i = 0; i < m; ++i) (f[i] != 0.0 ? high : low).push_back(nodes[i]);
    }
    if (low.empty() || high.empty()) {
        low.clear();
        high.clear();
        for (std::size_t i = 0; i < m; ++i) (f[i] > median ? high : low).push_back(nodes[i]);
    }
    if (low.empty() || high.empty()) {
        std::vector<std::size_t> rank(m);
        std::iota(rank.begin(), rank.end(), 0);
        std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
        low.clear();
        high.clear();
        for (std::size_t r = 0; r < m; ++r) (r < m / 2 ? low : high).push_back(nodes[rank[r]]);
        std::sort(low.begin(), low.end());
        std::sort(high.begin(), high.end());
    }
    return {std::move(low), std::move(high)};
}

/// Recursive bisection that grows one part at a time: each step splits the
/// largest current part (ties: the part with the smallest member). Parts for
/// k are therefore a refinement of parts for k-1, and the number of cut edges
/// is non-decreasing in k.
class RecursiveBisection {
public:
    explicit RecursiveBisection(const Graph& g) : g_(g), part_(g.n, 0) {
        std::vector<std::size_t> all(g.n);
        std::iota(all.begin(), all.end(), 0);
        parts_.push_back(std::move(all));
    }

    std::size_t part_count() const noexcept { return parts_.size(); }
    const std::vector<std::size_t>& assignment() const noexcept { return part_; }

    std::size_t cut_edges() const {
        std::size_t c = 0;
        for (const Edge& e : g_.edges) c += part_[e.u] != part_[e.v];
        return c;
    }

    /// Performs one more bisection; false once every part is a single node.
    bool split_next() {
        std::size_t best = parts_.size();
        for (std::size_t i = 0; i < parts_.size(); ++i) {
            if (parts_[i].size() < 2) continue;
            if (best == parts_.size() || parts_[i].size() > parts_[best].size() ||
                (parts_[i].size() == parts_[best].size() && parts_[i].front() < parts_[best].front()))
                best = i;
        }
        if (best == parts_.size()) return false;
        auto [low, high] = fiedler_bisect(g_, parts_[best]);
        const std::size_t new_id = parts_.size();
        for (std::size_t v : high) part_[v] = new_id;
        parts_[best] = std::move(low);
        parts_.push_back(std::move(high));
        return true;
    }

private:
    const Graph& g_;
    std::vector<std::size_t> part_;
    std::vector<std::vector<std::size_t>> parts_;
};

struct PartitionCut {
    Graph graph;
    std::size_t removed = 0;
    std::vector<std::size_t> parts;
};

/// Partitions into k parts by recursive Fiedler bisection and drops every
/// edge that crosses a part boundary.
inline PartitionCut partition_cut_removal(const Graph& g, std::size_t k) {
    require(k >= 2 && k <= g.n, "bad_part_count",
            "part count must be in [2, n]; got k=" + std::to_string(k) + ", n=" + std::to_string(g.n));
    RecursiveBisection rb(g);
    while (rb.part_count() < k) rb.split_next();
    PartitionCut out;
    out.parts = rb.assignment();
    out.graph = keep_intra_part_edges(g, out.parts);
    out.removed = g.edges.size() - out.graph.edges.size();
    return out;
}

/// Largest part count whose cut stays within `target` edges, found by
/// growing the (nested) partition until the next split would overshoot.
inline PartitionCut partition_cut_within(const Graph& g, std::size_t target) {
    RecursiveBisection rb(g);
    std::vector<std::size_t> best = rb.assignment();
    while (rb.split_next()) {
        if (rb.cut_edges() > target) break;
        best = rb.assignment();
    }
    PartitionCut out;
    out.parts = std::move(best);
    out.graph = keep_intra_part_edges(g, out.parts);
    out.removed = g.edges.size() - out.graph.edges.size();
    return out;
}

}  // namespace grassnet
