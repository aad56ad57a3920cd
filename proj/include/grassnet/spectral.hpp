#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "grassnet/error.hpp"
#include "grassnet/tensor.hpp"

namespace grassnet {

/// Ascending eigenvalues with column j of `eigenvectors` paired to eigenvalue j.
struct SpectralDecomposition {
    std::vector<double> eigenvalues;
    Tensor eigenvectors;

    std::size_t size() const noexcept { return eigenvalues.size(); }

    friend bool operator==(const SpectralDecomposition&, const SpectralDecomposition&) = default;
};

struct EigOptions {
    std::size_t max_sweeps = 100;
    double relative_tolerance = 1e-11;
};

/// Cyclic Jacobi on a dense symmetric matrix.
///
/// Rotations with an exactly zero pivot are skipped, so the block structure
/// of a disconnected graph's Laplacian is preserved: every eigenvector is
/// supported on a single connected component, and identical components
/// produce bit-identical eigenvalues. Output is stable-sorted ascending;
/// each column is sign-flipped so its first largest-magnitude entry is
/// positive.
inline SpectralDecomposition eig_sym(const Tensor& sym, const EigOptions& opt = {}) {
    require(sym.rank() == 2 && sym.rows() == sym.cols() && sym.rows() >= 1, "shape_mismatch",
            "eig_sym needs a non-empty square matrix, got " + shape_str(sym.shape()));
    const std::size_t n = sym.rows();
    Tensor a = sym;
    Tensor vt = Tensor::identity(n);  // row j holds eigenvector j while iterating

    const double target = opt.relative_tolerance * frobenius_norm(sym);
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    double off = off_norm();
    std::size_t sweep = 0;
    while (off > target) {
        if (sweep == opt.max_sweeps)
            fail("eig_no_convergence", "Jacobi did not converge in " + std::to_string(opt.max_sweeps) +
                                           " sweeps; off-diagonal norm " + std::to_string(off));
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150)
                    t = 0.5 / theta;
                else
                    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                double* row_p = &a(p, 0);
                double* row_q = &a(q, 0);
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = row_p[r], arq = row_q[r];
                    const double nrp = c * arp - s * arq;
                    const double nrq = s * arp + c * arq;
                    row_p[r] = nrp;
                    row_q[r] = nrq;
                    a(r, p) = nrp;
                    a(r, q) = nrq;
                }
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;

                double* vp = &vt(p, 0);
                double* vq = &vt(q, 0);
                for (std::size_t r = 0; r < n; ++r) {
                    const double x = vp[r], y = vq[r];
                    vp[r] = c * x - s * y;
                    vq[r] = s * x + c * y;
                }
            }
        }
        off = off_norm();
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

    SpectralDecomposition sd;
    sd.eigenvalues.resize(n);
    sd.eigenvectors = Tensor::matrix(n, n);
    for (std::size_t col = 0; col < n; ++col) {
        const std::size_t src = order[col];
        sd.eigenvalues[col] = a(src, src);
        std::size_t arg = 0;
        for (std::size_t r = 1; r < n; ++r)
            if (std::abs(vt(src, r)) > std::abs(vt(src, arg))) arg = r;
        const double sign = vt(src, arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < n; ++r) sd.eigenvectors(r, col) = sign * vt(src, r);
    }
    return sd;
}

/// Spectral signal U^T X.
inline Tensor gft(const Tensor& u, const Tensor& x) {
    require(u.rank() == 2 && x.rank() == 2 && u.rows() == x.rows(), "shape_mismatch",
            "gft: U " + shape_str(u.shape()) + " vs X " + shape_str(x.shape()));
    return matmul_tn(u, x);
}

/// Node-domain signal U X'.
inline Tensor igft(const Tensor& u, const Tensor& xp) {
    require(u.rank() == 2 && xp.rank() == 2 && u.cols() == xp.rows(), "shape_mismatch",
            "igft: U " + shape_str(u.shape()) + " vs X' " + shape_str(xp.shape()));
    return matmul(u, xp);
}

// ---------------------------------------------------------------------------
// Spectrum density

struct KdeCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

namespace detail {

/// Linear-interpolation quantile of sorted data (numpy's default).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Silverman's rule 0.9 * min(sd, IQR/1.34) * n^(-1/5). A zero IQR falls
/// back to sd alone.
inline double silverman_bandwidth(std::span<const double> values) {
    const auto n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = detail::quantile_sorted(sorted, 0.75) - detail::quantile_sorted(sorted, 0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(n, -0.2);
}

/// Gaussian KDE of a normalized-Laplacian spectrum on a uniform grid over
/// [0, 2], with the kernels reflected at both ends of the support so the
/// curve integrates to one over [0, 2]. Degenerate spectra (zero bandwidth)
/// use max(1e-3, grid spacing).
inline KdeCurve spectrum_kde(std::span<const double> eigenvalues, std::size_t grid_size) {
    require(eigenvalues.size() >= 2, "too_small", "spectrum_kde needs at least 2 eigenvalues");
    require(grid_size >= 2, "too_small", "spectrum_kde needs a grid of at least 2 points");
    constexpr double lo = 0.0, hi = 2.0;
    const double spacing = (hi - lo) / static_cast<double>(grid_size - 1);

    KdeCurve curve;
    curve.bandwidth = silverman_bandwidth(eigenvalues);
    if (!(curve.bandwidth > 0.0)) curve.bandwidth = std::max(1e-3, spacing);
    const double h = curve.bandwidth;
    const double norm = 1.0 / (static_cast<double>(eigenvalues.size()) * h * std::sqrt(2.0 * std::numbers::pi));

    curve.grid.resize(grid_size);
    curve.density.assign(grid_size, 0.0);
    for (std::size_t g = 0; g < grid_size; ++g) {
        const double x = g + 1 == grid_size ? hi : lo + spacing * static_cast<double>(g);
        curve.grid[g] = x;
        double acc = 0.0;
        for (double lam : eigenvalues) {
            for (double centre : {lam, 2.0 * lo - lam, 2.0 * hi - lam}) {
                const double z = (x - centre) / h;
                acc += std::exp(-0.5 * z * z);
            }
        }
        curve.density[g] = acc * norm;
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Eigencache: "GRSP" 0x01, u64 LE n, n f64 LE eigenvalues, n*n f64 LE
// eigenvector entries in column-major order.

inline void write_eigencache(const SpectralDecomposition& sd, const std::filesystem::path& path) {
    const std::size_t n = sd.size();
    require(sd.eigenvectors.rows() == n && sd.eigenvectors.cols() == n, "shape_mismatch",
            "eigenvector matrix does not match eigenvalue count");
    std::string out = "GRSP";
    out.push_back('\x01');
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * b)) & 0xFF));
    auto put = [&](double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    };
    out.reserve(out.size() + 8 * (n + n * n));
    for (double v : sd.eigenvalues) put(v);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) put(sd.eigenvectors(i, j));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), "io", "cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(static_cast<bool>(f), "io", "write failed for " + path.string());
}

inline SpectralDecomposition read_eigencache(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "io", "cannot open " + path.string());
    const std::string bytes(std::istreambuf_iterator<char>(f), {});
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    constexpr std::size_t header = 5 + 8;
    require(bytes.size() >= 5 && bytes.compare(0, 4, "GRSP") == 0, "bad_magic", "bad magic in " + path.string());
    require(p[4] == 0x01, "bad_version", "unsupported eigencache version " + std::to_string(p[4]));
    require(bytes.size() >= header, "truncated", "eigencache truncated in header");
    std::uint64_t n = 0;
    for (int b = 0; b < 8; ++b) n |= static_cast<std::uint64_t>(p[5 + b]) << (8 * b);
    // 8 * (n + n^2) must fit in the address space.
    require(n < (std::uint64_t{1} << 28), "n_overflow", "eigencache n=" + std::to_string(n) + " is too large");
    const std::size_t expected = header + 8 * (n + n * n);
    require(bytes.size() >= expected, "truncated",
            "eigencache truncated: " + std::to_string(bytes.size()) + " of " + std::to_string(expected) + " bytes");
    require(bytes.size() == expected, "trailing_bytes", "eigencache has trailing bytes");

    auto get = [&](std::size_t offset) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[offset + b]) << (8 * b);
        return std::bit_cast<double>(bits);
    };
    SpectralDecomposition sd;
    sd.eigenvalues.resize(n);
    sd.eigenvectors = Tensor::matrix(n, n);
    std::size_t off = header;
    for (std::size_t i = 0; i < n; ++i, off += 8) sd.eigenvalues[i] = get(off);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i, off += 8) sd.eigenvectors(i, j) = get(off);
    return sd;
}

/// Groups eigenvalues that agree within `tol` into (value, multiplicity).
inline std::vector<std::pair<double, std::size_t>> multiplicities(std::span<const double> ascending, double tol = 1e-9) {
    std::vector<std::pair<double, std::size_t>> groups;
    for (double v : ascending) {
        if (!groups.empty() && std::abs(v - groups.back().first) <= tol)
            ++groups.back().second;
        else
            groups.emplace_back(v, 1);
    }
    return groups;
}

}  // namespace grassnet
