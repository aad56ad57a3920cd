#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "grassnet/experiments.hpp"

using namespace grassnet;
namespace fs = std::filesystem;

namespace {

std::string short_number(double v) {
    if (std::abs(v) < 1e-9) v = 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), "io", "cannot write " + path.string());
    out << j.dump(2) << '\n';
    require(static_cast<bool>(out), "io", "write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "missing_file", "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("parse_error", path.string() + ": " + e.what());
    }
}

ExperimentConfig config_from_args(const std::string& path, const std::vector<std::string>& sets) {
    ExperimentConfig cfg = load_config(path, sets);
    require(!cfg.dataset.empty(), "bad_config", "config needs a dataset");
    return cfg;
}

/// Reads the configured eigencache when it exists, otherwise decomposes the
/// Laplacian and (if a cache path was given) writes it.
SpectralDecomposition spectrum_for(const ExperimentConfig& cfg, const Graph& g) {
    if (!cfg.eigencache.empty() && fs::exists(cfg.eigencache)) {
        SpectralDecomposition sd = read_eigencache(cfg.eigencache);
        require(sd.eigenvalues.size() == g.n, "shape_mismatch",
                "eigencache has " + std::to_string(sd.eigenvalues.size()) + " eigenvalues but the graph has " +
                    std::to_string(g.n) + " nodes");
        return sd;
    }
    SpectralDecomposition sd = eig_sym(build_normalized_laplacian(g));
    if (!cfg.eigencache.empty()) write_eigencache(sd, cfg.eigencache);
    return sd;
}

void write_run(const fs::path& out, const ExperimentConfig& cfg, const Graph& g, const RunResult& r, double seconds) {
    fs::create_directories(out);
    write_json(out / "results.json", results_json(cfg, r));
    write_json(out / "timing.json", {{"wall_clock_seconds", seconds}});
    const ModelConfig mcfg = model_config(cfg, g);
    for (const auto& run : r.runs) {
        const std::string tag = "seed_" + std::to_string(run.seed);
        write_history_csv(run.train.history, out / ("history_" + tag + ".csv"));
        const fs::path ckpt = out / "checkpoints" / tag;
        save_checkpoint(run.train.params, ckpt);
        write_json(ckpt / "meta.json", {{"seed", run.seed},
                                        {"best_epoch", run.train.best_epoch},
                                        {"model", model_config_json(mcfg)}});
    }
}

void print_summary(const RunResult& r) {
    for (const auto& run : r.runs)
        std::cout << "seed " << run.seed << " test_acc " << short_number(run.test_acc) << " best_epoch "
                  << run.train.best_epoch << '\n';
    std::cout << "mean " << short_number(r.mean);
    if (r.ci_halfwidth) std::cout << " ci_halfwidth " << short_number(*r.ci_halfwidth);
    std::cout << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ComponentSpec parse_component(const std::string& s) {
    // motif:size:homo|het
    const auto a = s.find(':');
    const auto b = a == std::string::npos ? a : s.find(':', a + 1);
    require(b != std::string::npos, "bad_synth", "component must look like motif:size:homo|het, got '" + s + "'");
    ComponentSpec c;
    c.motif = parse_motif(s.substr(0, a));
    try {
        c.size = std::stoul(s.substr(a + 1, b - a - 1));
    } catch (const std::exception&) {
        fail("bad_synth", "bad component size in '" + s + "'");
    }
    const std::string kind = s.substr(b + 1);
    require(kind == "homo" || kind == "het", "bad_synth", "component kind must be homo or het, got '" + kind + "'");
    c.homophilic = kind == "homo";
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral graph network with a selective state-space filter"};
    app.require_subcommand(1);

    std::string data, out, config, eigencache, checkpoint, mode = "rand", split_name = "test", splits_file, preset;
    std::vector<std::string> sets, components;
    std::size_t jobs = 1, grid = 512, removed = 0, n = 0, feature_dim = 8;
    std::uint64_t seed = 0;
    double separation = 1.0, noise = 1.0;

    auto* prep = app.add_subcommand("prep", "Eigendecompose a dataset's Laplacian into an eigencache");
    prep->add_option("--data", data, "dataset directory or manifest.json")->required();
    prep->add_option("--out", out, "eigencache file")->required();

    auto* train_cmd = app.add_subcommand("train", "Train and test one model per configured seed");
    train_cmd->add_option("--config", config)->required();
    train_cmd->add_option("--set", sets, "key=value override (repeatable)");
    train_cmd->add_option("--out", out, "output directory")->required();
    train_cmd->add_option("--jobs", jobs, "seeds trained in parallel")->check(CLI::PositiveNumber);

    auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on one split");
    eval_cmd->add_option("--config", config)->required();
    eval_cmd->add_option("--set", sets);
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_option("--splits", splits_file, "splits.json (default: the checkpoint's seed)");

    auto* dump = app.add_subcommand("filter-dump", "Per-eigenvalue filter coefficients of a checkpoint");
    dump->add_option("--checkpoint", checkpoint)->required();
    dump->add_option("--eigencache", eigencache)->required();
    dump->add_option("--out", out)->required();

    auto* kde = app.add_subcommand("kde", "Kernel density of an eigencache's spectrum over [0, 2]");
    kde->add_option("--eigencache", eigencache)->required();
    kde->add_option("--out", out)->required();
    kde->add_option("--grid", grid)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));

    auto* perturb = app.add_subcommand("perturb", "Train after removing edges");
    perturb->add_option("--config", config)->required();
    perturb->add_option("--set", sets);
    perturb->add_option("--mode", mode)->required();
    perturb->add_option("--removed", removed)->required();
    perturb->add_option("--out", out)->required();
    perturb->add_option("--jobs", jobs)->check(CLI::PositiveNumber);

    auto* splits = app.add_subcommand("splits", "Write the 60/20/20 split for a seed");
    auto* n_opt = splits->add_option("--n", n, "node count");
    splits->add_option("--data", data, "dataset (node count taken from it)")->excludes(n_opt);
    splits->add_option("--seed", seed);
    splits->add_option("--out", out)->required();

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset of disjoint motifs");
    auto* comp_opt = synth->add_option("--component", components, "motif:size:homo|het (repeatable)");
    synth->add_option("--preset", preset)->check(CLI::IsMember({"benchmark"}))->excludes(comp_opt);
    synth->add_option("--d", feature_dim)->check(CLI::PositiveNumber);
    synth->add_option("--separation", separation);
    synth->add_option("--noise", noise);
    auto* synth_seed = synth->add_option("--seed", seed, "feature seed (benchmark preset default: 7)");
    synth->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*prep) {
            const Graph g = load_graph(data);
            const SpectralDecomposition sd = eig_sym(build_normalized_laplacian(g));
            write_eigencache(sd, out);
            std::cout << "n " << g.n << '\n';
            if (g.n) std::cout << "range " << short_number(sd.eigenvalues.front()) << ' ' << short_number(sd.eigenvalues.back()) << '\n';
            std::cout << "multiplicities ";
            bool first = true;
            for (const auto& [value, count] : multiplicities(sd.eigenvalues)) {
                std::cout << (first ? "" : ", ") << short_number(value) << "(×" << count << ')';
                first = false;
            }
            std::cout << '\n';
        } else if (*train_cmd) {
            const auto t0 = std::chrono::steady_clock::now();
            const ExperimentConfig cfg = config_from_args(config, sets);
            const Graph g = load_graph(cfg.dataset);
            const RunResult r = run_seeds(cfg, g, spectrum_for(cfg, g), jobs);
            write_run(out, cfg, g, r, seconds_since(t0));
            print_summary(r);
        } else if (*eval_cmd) {
            const ExperimentConfig cfg = config_from_args(config, sets);
            const Graph g = load_graph(cfg.dataset);
            const auto meta = read_json(fs::path(checkpoint) / "meta.json");
            const ModelConfig mcfg = model_config_from_json(meta.at("model"));
            require(mcfg.input_dim == g.feature_dim() && mcfg.num_classes == g.num_classes, "shape_mismatch",
                    "checkpoint does not fit the dataset");
            const ParamStore params = load_checkpoint(checkpoint);
            const Split split = splits_file.empty() ? make_splits(g.n, meta.at("seed").get<std::uint64_t>())
                                                    : split_from_json(read_json(splits_file));
            const auto& rows = split_name == "train" ? split.train : split_name == "val" ? split.val : split.test;
            for (std::size_t i : rows) require(i < g.n, "bad_split", "split index out of range");
            const Precomputed pre(spectrum_for(cfg, g));
            const double acc = evaluate(params, mcfg, g, pre, rows);
            std::cout << nlohmann::ordered_json{{"split", split_name}, {"seed", split.seed}, {"accuracy", acc}}.dump()
                      << '\n';
        } else if (*dump) {
            const auto meta = read_json(fs::path(checkpoint) / "meta.json");
            const ModelConfig mcfg = model_config_from_json(meta.at("model"));
            const ParamStore params = load_checkpoint(checkpoint);
            const SpectralDecomposition sd = read_eigencache(eigencache);
            const Coefficients c = filter_coefficients(sd.eigenvalues, params, mcfg.filter);
            write_filter_dump(sd.eigenvalues, c.values, out);
            if (c.zero_output) std::cout << "warning: filter output is identically zero\n";
            std::cout << "rows " << c.values.size() << '\n';
        } else if (*kde) {
            const SpectralDecomposition sd = read_eigencache(eigencache);
            const KdeCurve curve = spectrum_kde(sd.eigenvalues, grid);
            std::ofstream f(out, std::ios::trunc);
            require(static_cast<bool>(f), "io", "cannot write " + out);
            f.precision(17);
            f << "lambda,density\n";
            for (std::size_t i = 0; i < curve.grid.size(); ++i) f << curve.grid[i] << ',' << curve.density[i] << '\n';
            require(static_cast<bool>(f), "io", "write failed for " + out);
            std::cout << "bandwidth " << short_number(curve.bandwidth) << "\nintegral "
                      << short_number(trapezoid(curve.grid, curve.density)) << '\n';
        } else if (*perturb) {
            const auto t0 = std::chrono::steady_clock::now();
            const ExperimentConfig cfg = config_from_args(config, sets);
            const Graph g = load_graph(cfg.dataset);
            const PerturbMode pm = parse_perturb_mode(mode);
            const RobustnessResult r = robustness_experiment(cfg, g, pm, removed, jobs);
            write_run(out, cfg, r.perturbation.graph, r.run, seconds_since(t0));
            write_json(fs::path(out) / "perturbation.json",
                       {{"mode", mode},
                        {"target", removed},
                        {"removed", r.perturbation.removed},
                        {"partition_removed", r.perturbation.partition_removed},
                        {"parts", r.perturbation.parts},
                        {"components", count_components(r.perturbation.graph)}});
            std::cout << "removed " << r.perturbation.removed << " of " << g.edges.size() << " edges\n";
            print_summary(r.run);
        } else if (*splits) {
            std::size_t count = n;
            if (!data.empty()) count = load_graph(data).n;
            const Split s = make_splits(count, seed);
            write_json(out, split_to_json(s));
            std::cout << "train " << s.train.size() << " val " << s.val.size() << " test " << s.test.size() << '\n';
        } else if (*synth) {
            Graph g;
            if (preset == "benchmark") {
                g = synth_seed->count() ? benchmark_dataset(seed) : benchmark_dataset();
            } else {
                require(!components.empty(), "bad_synth", "give --component at least once or --preset");
                std::vector<ComponentSpec> spec;
                for (const auto& c : components) spec.push_back(parse_component(c));
                g = synth_dataset(spec, {.feature_dim = feature_dim, .class_separation = separation, .noise = noise, .seed = seed});
            }
            save_graph(g, out);
            std::cout << "n " << g.n << " edges " << g.edges.size() << " components " << count_components(g) << '\n';
        }
    } catch (const Error& e) {
        std::string msg = e.what();
        for (char& ch : msg)
            if (ch == '\n') ch = ' ';
        std::cerr << "error: " << e.code() << ": " << msg << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: parse_error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
