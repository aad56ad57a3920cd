// Acceptance run: one PASS/FAIL/SKIPPED line per criterion, then a tally.
// The verdicts are in the output; the exit status only says whether every
// criterion could be evaluated.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "grassnet/experiments.hpp"

using namespace grassnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    enum Kind { pass, fail, skipped } kind;
    std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

Graph random_graph(std::size_t n, double p, SplitMix64& rng) {
    Graph g;
    g.name = "random";
    g.n = n;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform(0.0, 1.0) < p) g.edges.push_back({i, j});
    g.features = Tensor::matrix(n, 4);
    for (double& v : g.features.values()) v = rng.normal();
    g.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.labels[i] = static_cast<int>(i % 3);
    g.num_classes = 3;
    return g;
}

Graph two_triangles() {
    return synth_dataset({{3, Motif::clique, true}, {3, Motif::clique, true}}, {.name = "triangles"});
}

Outcome spectral_correctness() {
    SplitMix64 rng(20240601);
    double worst_orth = 0.0, worst_recon = 0.0, lo = 0.0, hi = 0.0;
    bool ok = true;
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 5 + static_cast<std::size_t>(rng.next() % 196);
        const double p = rng.uniform(0.02, 0.3);
        const Tensor l = build_normalized_laplacian(random_graph(n, p, rng));
        const SpectralDecomposition sd = eig_sym(l);
        const Tensor& u = sd.eigenvectors;
        const double orth = max_abs_diff(matmul_tn(u, u), Tensor::identity(n));
        Tensor scaled = u;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= sd.eigenvalues[j];
        const double recon = max_abs_diff(matmul(scaled, transpose(u)), l);
        worst_orth = std::max(worst_orth, orth);
        worst_recon = std::max(worst_recon, recon / static_cast<double>(n));
        lo = std::min(lo, sd.eigenvalues.front());
        hi = std::max(hi, sd.eigenvalues.back());
        ok = ok && orth < 1e-8 && recon < 1e-8 * static_cast<double>(n) && sd.eigenvalues.front() >= -1e-9 &&
             sd.eigenvalues.back() <= 2.0 + 1e-9;
    }
    return verdict(ok, "max|U'U-I| " + fmt(worst_orth) + ", max recon/n " + fmt(worst_recon) + ", spectrum in [" +
                           fmt(lo) + ", " + fmt(hi, 12) + "]");
}

Outcome toy_spectrum() {
    const auto sd = eig_sym(build_normalized_laplacian(two_triangles()));
    const double expected[] = {0, 0, 1.5, 1.5, 1.5, 1.5};
    double err = 0.0;
    for (std::size_t i = 0; i < 6; ++i) err = std::max(err, std::abs(sd.eigenvalues[i] - expected[i]));
    return verdict(err <= 1e-9, "max deviation from {0 x2, 1.5 x4}: " + fmt(err));
}

double rk4(double a, double b, double x, double h0, double dt, int steps) {
    double h = h0;
    const double dtau = dt / steps;
    auto f = [&](double y) { return a * y + b * x; };
    for (int i = 0; i < steps; ++i) {
        const double k1 = f(h), k2 = f(h + 0.5 * dtau * k1), k3 = f(h + 0.5 * dtau * k2), k4 = f(h + dtau * k3);
        h += dtau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return h;
}

Outcome zoh_oracle() {
    SplitMix64 r(99);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const double delta = r.uniform(1e-4, 2.0), a = r.uniform(-5.0, -1e-3);
        const double b = r.uniform(-2.0, 2.0), x = r.uniform(-2.0, 2.0), h0 = r.uniform(-1.0, 1.0);
        ad::Tape tape;
        const auto z = ssm::discretize(tape.constant(Tensor::matrix({{delta}})), tape.constant(Tensor::matrix({{a}})),
                                       tape.constant(Tensor::matrix({{b}})));
        const double step = z.abar.value()[0] * h0 + z.bbar.value()[0] * x;
        const double exact = rk4(a, b, x, h0, delta, 2000);
        worst = std::max(worst, std::abs(step - exact) / std::max(std::abs(exact), 1e-300));
    }
    return verdict(worst <= 1e-6, "worst relative error over 100 draws " + fmt(worst));
}

Outcome gradient_suite() {
    SplitMix64 rng(12);
    Graph g = random_graph(12, 0.35, rng);
    const Precomputed pre(eig_sym(build_normalized_laplacian(g)));
    const std::vector<std::size_t> rows = {0, 1, 3, 4, 6, 8, 9, 11};
    double worst = 0.0;
    std::string where;
    for (FilterVariant variant : {FilterVariant::ssm_bi, FilterVariant::ssm_un, FilterVariant::fc}) {
        ModelConfig cfg;
        cfg.input_dim = 4;
        cfg.hidden = 5;
        cfg.fc_layers = 2;
        cfg.num_classes = 3;
        cfg.filter = {.variant = variant, .width = 4, .state = 3, .layers = 2, .gamma = 1.0};
        const ParamStore p = init_model(cfg, 3);
        const Objective f = [&](ad::Tape& tape, const VarMap& v) {
            return loss(forward(tape, pre, g.features, v, cfg).logits, rows, g.labels);
        };
        const GradCheckReport rep = finite_diff_check(f, p);
        if (rep.max_rel_error >= worst) {
            worst = rep.max_rel_error;
            where = to_string(variant) + " " + rep.worst_param;
        }
    }
    return verdict(worst < 1e-4, "worst relative error " + fmt(worst) + " (" + where + ")");
}

Outcome equal_frequency() {
    const std::vector<double> spectrum = {0, 0, 1.5, 1.5, 1.5, 1.5};
    auto randomized = [](const FilterConfig& cfg, std::uint64_t seed) {
        ParamStore p;
        SplitMix64 r(seed);
        init_filter_params(p, cfg, r);
        for (auto& [name, e] : p.entries())
            for (double& v : e.value.values()) v = r.uniform(-1.0, 1.0);
        return p;
    };
    const FilterConfig fc{.variant = FilterVariant::fc, .width = 8, .state = 4, .layers = 2};
    const auto a = filter_coefficients(spectrum, randomized(fc, 1), fc).values;
    const bool fc_equal = a[0] == a[1] && a[2] == a[3] && a[3] == a[4] && a[4] == a[5];

    const FilterConfig bi{.variant = FilterVariant::ssm_bi, .width = 8, .state = 4, .layers = 2};
    const auto c = filter_coefficients(spectrum, randomized(bi, 1), bi).values;
    double gap = std::abs(c[0] - c[1]);
    for (std::size_t i = 2; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j) gap = std::min(gap, std::abs(c[i] - c[j]));
    return verdict(fc_equal && gap > 1e-9, std::string("fc ties exact: ") + (fc_equal ? "yes" : "no") +
                                               ", ssm-bi smallest gap within a tie " + fmt(gap));
}

struct Benchmark {
    Graph graph = benchmark_dataset();
    SpectralDecomposition sd = eig_sym(build_normalized_laplacian(graph));
    RunResult fc, ssm_un, ssm_bi;
};

ExperimentConfig benchmark_config(FilterVariant v) {
    ExperimentConfig cfg;
    cfg.variant = v;
    return cfg;
}

Outcome ablation(Benchmark& b) {
    b.fc = run_seeds(benchmark_config(FilterVariant::fc), b.graph, b.sd, jobs());
    b.ssm_un = run_seeds(benchmark_config(FilterVariant::ssm_un), b.graph, b.sd, jobs());
    b.ssm_bi = run_seeds(benchmark_config(FilterVariant::ssm_bi), b.graph, b.sd, jobs());
    const bool ok = b.ssm_bi.mean >= b.fc.mean + 0.03 && b.ssm_bi.mean >= b.ssm_un.mean;
    return verdict(ok, "fc " + fmt(b.fc.mean) + ", ssm-un " + fmt(b.ssm_un.mean) + ", ssm-bi " + fmt(b.ssm_bi.mean) +
                           " (n=" + std::to_string(b.graph.n) + ", 10 seeds)");
}

Outcome texas() {
    fs::path dir;
    if (const char* env = std::getenv("GRASSNET_TEXAS")) dir = env;
    else dir = fs::path(GRASSNET_SOURCE_DIR) / "data" / "texas";
    if (!fs::exists(fs::is_directory(dir) ? dir / "manifest.json" : dir))
        return {Outcome::skipped, "no Texas dataset at " + dir.string() + " (set GRASSNET_TEXAS)"};
    const Graph g = load_graph(dir);
    ExperimentConfig cfg;
    cfg.gamma = 5.0;
    cfg.lr = 0.1;
    cfg.hidden_units = 8;
    cfg.fc_layers = 1;
    cfg.weight_decay = 5e-4;
    cfg.epochs = 1000;
    const RunResult r = run_seeds(cfg, g, eig_sym(build_normalized_laplacian(g)), jobs());
    return verdict(r.mean >= 0.85, "mean " + fmt(r.mean) + " +/- " + fmt(r.ci_halfwidth.value_or(0.0)) + " on n=" +
                                       std::to_string(g.n));
}

Outcome robustness(const Benchmark& b) {
    constexpr std::size_t target = 32;
    auto perturbed = [&](FilterVariant v, PerturbMode m) {
        return robustness_experiment(benchmark_config(v), b.graph, m, target, jobs()).run.mean;
    };
    const double fc_rand = b.fc.mean - perturbed(FilterVariant::fc, PerturbMode::rand);
    const double fc_part = b.fc.mean - perturbed(FilterVariant::fc, PerturbMode::partition);
    const double bi_part = b.ssm_bi.mean - perturbed(FilterVariant::ssm_bi, PerturbMode::partition);
    const bool ok = fc_part >= fc_rand && bi_part < fc_part;
    return verdict(ok, "accuracy drop with " + std::to_string(target) + " of " + std::to_string(b.graph.edges.size()) +
                           " edges removed (baselines fc " + fmt(b.fc.mean) + ", ssm-bi " + fmt(b.ssm_bi.mean) +
                           "): fc rand " + fmt(fc_rand) + ", fc partition " + fmt(fc_part) + ", ssm-bi partition " +
                           fmt(bi_part));
}

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(GRASSNET_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / ("grassnet_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path data = root / "data";
    if (run("synth --preset benchmark --out '" + data.string() + "'", root / "synth.log") != 0)
        return {Outcome::fail, "synth failed: " + bytes(root / "synth.log")};
    {
        std::ofstream cfg(root / "config.json");
        cfg << R"({"dataset": "data", "eigencache": "eig.bin", "epochs": 30, "seeds": [0, 1, 2]})";
    }
    std::vector<std::string> compared;
    bool same = true;
    auto compare_trees = [&](const fs::path& a, const fs::path& b) {
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
            const fs::path rel = fs::relative(e.path(), a);
            same = same && fs::exists(b / rel) && bytes(e.path()) == bytes(b / rel);
            compared.push_back(rel.string());
        }
    };
    const std::string cfg = "--config '" + (root / "config.json").string() + "'";
    for (const char* tag : {"a", "b"})
        if (run("train " + cfg + " --out '" + (root / "train" / tag).string() + "'", root / "train.log") != 0)
            return {Outcome::fail, "train failed: " + bytes(root / "train.log")};
    if (run("train " + cfg + " --jobs 3 --out '" + (root / "train" / "c").string() + "'", root / "train.log") != 0)
        return {Outcome::fail, "train --jobs failed: " + bytes(root / "train.log")};
    compare_trees(root / "train" / "a", root / "train" / "b");
    compare_trees(root / "train" / "a", root / "train" / "c");
    for (const char* tag : {"a", "b"})
        if (run("perturb " + cfg + " --mode partition --removed 12 --out '" + (root / "perturb" / tag).string() + "'",
                root / "perturb.log") != 0)
            return {Outcome::fail, "perturb failed: " + bytes(root / "perturb.log")};
    compare_trees(root / "perturb" / "a", root / "perturb" / "b");
    const std::string eig_a = bytes(root / "eig.bin");
    if (run("prep --data '" + data.string() + "' --out '" + (root / "eig2.bin").string() + "'", root / "prep.log") != 0)
        return {Outcome::fail, "prep failed: " + bytes(root / "prep.log")};
    same = same && eig_a == bytes(root / "eig2.bin");
    fs::remove_all(root);
    return verdict(same && !compared.empty(), std::to_string(compared.size() + 1) +
                                                  " output files compared byte for byte across reruns and --jobs");
}

}  // namespace

int main() {
    Benchmark bench;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"spectral correctness on 20 random graphs", spectral_correctness},
        {"two-triangle spectrum", toy_spectrum},
        {"ZOH step against RK4", zoh_oracle},
        {"end-to-end gradient check", gradient_suite},
        {"equal-frequency discrimination", equal_frequency},
        {"ablation ordering on the synthetic benchmark", [&] { return ablation(bench); }},
        {"Texas accuracy", texas},
        {"robustness to partition-style edge removal", [&] { return robustness(bench); }},
        {"bit-identical reruns", determinism},
    };
    const double limits[] = {30, 1, 5, 60, 1, 600, 300, 900, 600};

    int passed = 0, failed = 0, skipped = 0, crashed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Outcome::fail, std::string("threw: ") + e.what()};
            ++crashed;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (o.kind == Outcome::pass && secs > limits[i]) {
            o.kind = Outcome::fail;
            o.detail += "; over the " + fmt(limits[i]) + " s budget";
        }
        const char* word = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIPPED";
        passed += o.kind == Outcome::pass;
        failed += o.kind == Outcome::fail;
        skipped += o.kind == Outcome::skipped;
        std::printf("criterion %zu: %s  %s: %s (%.1f s)\n", i + 1, word, criteria[i].first.c_str(), o.detail.c_str(),
                    secs);
        std::fflush(stdout);
    }
    std::printf("%d passed, %d failed, %d skipped\n", passed, failed, skipped);
    return crashed ? 1 : 0;
}
