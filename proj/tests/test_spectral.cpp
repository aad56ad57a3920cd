#include <catch_amalgamated.hpp>

#include <cstring>

#include "fixtures.hpp"
#include "grassnet/spectral.hpp"

using namespace grassnet;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::string error_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

void check_decomposition(const Tensor& l, const SpectralDecomposition& sd) {
    const std::size_t n = l.rows();
    const Tensor& u = sd.eigenvectors;
    CHECK(max_abs_diff(matmul_tn(u, u), Tensor::identity(n)) < 1e-8);
    Tensor scaled = u;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= sd.eigenvalues[j];
    CHECK(max_abs_diff(matmul(scaled, transpose(u)), l) < 1e-8 * static_cast<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        CHECK(sd.eigenvalues[j] >= -1e-9);
        CHECK(sd.eigenvalues[j] <= 2.0 + 1e-9);
        if (j) CHECK(sd.eigenvalues[j - 1] <= sd.eigenvalues[j]);
    }
}

Tensor random_signal(std::size_t n, std::size_t d, std::uint64_t seed) {
    SplitMix64 r(seed);
    Tensor x = Tensor::matrix(n, d);
    for (double& v : x.values()) v = r.normal();
    return x;
}

}  // namespace

TEST_CASE("eig_sym on hand-checkable Laplacians") {
    SECTION("single edge") {
        const auto sd = eig_sym(build_normalized_laplacian(fixtures::make_graph(2, {{0, 1}})));
        CHECK_THAT(sd.eigenvalues[0], WithinAbs(0.0, 1e-12));
        CHECK_THAT(sd.eigenvalues[1], WithinAbs(2.0, 1e-12));
    }
    SECTION("two disjoint triangles") {
        const Tensor l = build_normalized_laplacian(fixtures::two_triangles());
        const auto sd = eig_sym(l);
        const double expected[] = {0, 0, 1.5, 1.5, 1.5, 1.5};
        for (std::size_t i = 0; i < 6; ++i) CHECK_THAT(sd.eigenvalues[i], WithinAbs(expected[i], 1e-9));
        check_decomposition(l, sd);
        // Identical blocks give bit-identical eigenvalues.
        CHECK(sd.eigenvalues[0] == sd.eigenvalues[1]);
        CHECK(sd.eigenvalues[2] == sd.eigenvalues[4]);
        const auto groups = multiplicities(sd.eigenvalues);
        REQUIRE(groups.size() == 2);
        CHECK(groups[0].second == 2);
        CHECK(groups[1].second == 4);
    }
    SECTION("identity") {
        const Tensor l = Tensor::identity(3);
        const auto sd = eig_sym(l);
        for (double v : sd.eigenvalues) CHECK(v == 1.0);
        check_decomposition(l, sd);
    }
}

TEST_CASE("eig_sym invariants on random graphs") {
    std::mt19937_64 gen(2024);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 5 + gen() % 120;
        const double p = 0.02 + 0.3 * static_cast<double>(gen() % 1000) / 1000.0;
        const Tensor l = build_normalized_laplacian(fixtures::random_graph(n, p, gen()));
        check_decomposition(l, eig_sym(l));
    }
}

TEST_CASE("eig_sym is reproducible and sign-canonical") {
    const Tensor l = build_normalized_laplacian(fixtures::random_graph(40, 0.1, 77));
    const auto a = eig_sym(l);
    const auto b = eig_sym(l);
    CHECK(a.eigenvalues == b.eigenvalues);
    CHECK(a.eigenvectors == b.eigenvectors);
    for (std::size_t j = 0; j < 40; ++j) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < 40; ++i)
            if (std::abs(a.eigenvectors(i, j)) > std::abs(a.eigenvectors(arg, j))) arg = i;
        CHECK(a.eigenvectors(arg, j) > 0.0);
    }
}

TEST_CASE("eig_sym reports non-convergence") {
    const Tensor l = build_normalized_laplacian(fixtures::random_graph(30, 0.3, 1));
    EigOptions opt;
    opt.max_sweeps = 1;
    CHECK(error_code([&] { eig_sym(l, opt); }) == "eig_no_convergence");
}

TEST_CASE("graph Fourier transform") {
    const Graph g = fixtures::random_graph(25, 0.25, 3);
    REQUIRE(count_components(g) == 1);
    const auto sd = eig_sym(build_normalized_laplacian(g));
    const Tensor& u = sd.eigenvectors;

    CHECK(max_abs_diff(gft(u, u), Tensor::identity(25)) < 1e-10);

    SECTION("D^1/2 1 sits on the zero frequency") {
        const auto deg = degrees(g);
        std::vector<double> x(25);
        double norm = 0.0;
        for (std::size_t i = 0; i < 25; ++i) norm += static_cast<double>(deg[i]);
        for (std::size_t i = 0; i < 25; ++i) x[i] = std::sqrt(static_cast<double>(deg[i]) / norm);
        const Tensor spec = gft(u, Tensor::column(x));
        CHECK_THAT(std::abs(spec(0, 0)), WithinAbs(1.0, 1e-10));
        for (std::size_t i = 1; i < 25; ++i) CHECK(std::abs(spec(i, 0)) < 1e-8);
    }
    SECTION("round trip and Parseval") {
        const Tensor x = random_signal(25, 4, 11);
        CHECK(max_abs_diff(igft(u, gft(u, x)), x) < 1e-10);
        CHECK_THAT(frobenius_norm(gft(u, x)), WithinRel(frobenius_norm(x), 1e-9));
    }
    SECTION("inverse of zeros and of a basis vector") {
        CHECK(igft(u, Tensor::matrix(25, 2)) == Tensor::matrix(25, 2));
        std::vector<double> e1(25, 0.0);
        e1[0] = 1.0;
        const Tensor col = igft(u, Tensor::column(e1));
        for (std::size_t i = 0; i < 25; ++i) CHECK(col(i, 0) == u(i, 0));
    }
    CHECK(error_code([&] { gft(u, Tensor::matrix(24, 1)); }) == "shape_mismatch");
}

TEST_CASE("spectrum_kde") {
    SECTION("Silverman bandwidth against a numpy evaluation") {
        const std::vector<double> e = {0, 0, 1.5, 1.5, 1.5, 1.5};
        const KdeCurve c = spectrum_kde(e, 201);
        CHECK_THAT(c.bandwidth, WithinRel(0.48717824271847904, 1e-12));
        CHECK_THAT(c.density[0], WithinRel(0.5554648653512609, 1e-12));
        CHECK_THAT(c.density[75], WithinRel(0.3347030016318472, 1e-12));
        CHECK_THAT(c.density[200], WithinRel(0.644991621089924, 1e-12));
        const double low_mode = *std::max_element(c.density.begin(), c.density.begin() + 50);
        const double high_mode = *std::max_element(c.density.begin() + 50, c.density.end());
        CHECK(high_mode > low_mode);
        CHECK_THAT(trapezoid(c.grid, c.density), WithinAbs(1.0, 0.05));
    }
    SECTION("degenerate spectrum") {
        const std::vector<double> e(10, 1.0);
        const KdeCurve c = spectrum_kde(e, 201);
        CHECK(c.grid.size() == 201);
        CHECK(c.grid.front() == 0.0);
        CHECK(c.grid.back() == 2.0);
        const auto peak = std::max_element(c.density.begin(), c.density.end()) - c.density.begin();
        CHECK(c.grid[static_cast<std::size_t>(peak)] == 1.0);
        CHECK_THAT(trapezoid(c.grid, c.density), WithinAbs(1.0, 0.05));
    }
    SECTION("symmetric endpoints") {
        const std::vector<double> e = {0.0, 2.0};
        const KdeCurve c = spectrum_kde(e, 512);
        for (std::size_t i = 0; i < 512; ++i) CHECK_THAT(c.density[i], WithinAbs(c.density[511 - i], 1e-9));
    }
    SECTION("integral on random spectra") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto sd = eig_sym(build_normalized_laplacian(fixtures::random_graph(40, 0.1, s)));
            const KdeCurve c = spectrum_kde(sd.eigenvalues, 512);
            CHECK_THAT(trapezoid(c.grid, c.density), WithinAbs(1.0, 0.05));
            for (double d : c.density) CHECK(d >= 0.0);
        }
    }
    CHECK(error_code([] { spectrum_kde(std::vector<double>{1.0}, 10); }) == "too_small");
}

TEST_CASE("eigencache") {
    const auto sd = eig_sym(build_normalized_laplacian(fixtures::random_graph(13, 0.3, 4)));
    const auto dir = fixtures::temp_dir("eig");
    const auto path = dir / "eig.bin";
    write_eigencache(sd, path);
    const std::string bytes = fixtures::read_text(path);
    CHECK(bytes.size() == 13 + 8 * (13 + 169));
    CHECK(bytes.substr(0, 4) == "GRSP");
    CHECK(bytes[4] == '\x01');
    CHECK(bytes[5] == 13);

    const auto back = read_eigencache(path);
    REQUIRE(back.eigenvalues.size() == 13);
    for (std::size_t i = 0; i < 13; ++i)
        CHECK(std::bit_cast<std::uint64_t>(back.eigenvalues[i]) == std::bit_cast<std::uint64_t>(sd.eigenvalues[i]));
    for (std::size_t i = 0; i < 13 * 13; ++i)
        CHECK(std::bit_cast<std::uint64_t>(back.eigenvectors.values()[i]) ==
              std::bit_cast<std::uint64_t>(sd.eigenvectors.values()[i]));
    // Column-major layout: the second stored matrix entry is U(1, 0).
    double u10 = 0.0;
    std::memcpy(&u10, bytes.data() + 13 + 8 * 13 + 8, 8);
    CHECK(u10 == sd.eigenvectors(1, 0));

    write_eigencache(sd, dir / "again.bin");
    CHECK(fixtures::read_text(dir / "again.bin") == bytes);

    auto corrupt = [&](std::string b) {
        fixtures::write_text(dir / "bad.bin", b);
        return error_code([&] { read_eigencache(dir / "bad.bin"); });
    };
    std::string b = bytes;
    b[0] = 'X';
    CHECK(corrupt(b) == "bad_magic");
    b = bytes;
    b[4] = 2;
    CHECK(corrupt(b) == "bad_version");
    CHECK(corrupt(bytes.substr(0, bytes.size() - 100)) == "truncated");
    CHECK(corrupt(bytes.substr(0, 9)) == "truncated");
    CHECK(corrupt(bytes + "x") == "trailing_bytes");
    b = bytes;
    b[12] = '\x7f';
    CHECK(corrupt(b) == "n_overflow");
}
