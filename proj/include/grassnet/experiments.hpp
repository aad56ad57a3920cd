#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "grassnet/config.hpp"
#include "grassnet/graph.hpp"
#include "grassnet/model.hpp"
#include "grassnet/partition.hpp"
#include "grassnet/spectral.hpp"

namespace grassnet {

inline ModelConfig model_config(const ExperimentConfig& cfg, const Graph& g) {
    ModelConfig m;
    m.input_dim = g.feature_dim();
    m.hidden = cfg.hidden_units;
    m.fc_layers = cfg.fc_layers;
    m.num_classes = g.num_classes;
    m.filter.variant = cfg.variant;
    m.filter.width = cfg.effective_filter_width();
    m.filter.state = cfg.d_state;
    m.filter.layers = cfg.ssm_layers;
    m.filter.gamma = cfg.gamma;
    return m;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    ParamStore params;  // parameters of the selected epoch
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1.0;
};

/// Full-batch training. Each epoch runs one forward pass, records the
/// validation accuracy of the parameters used in that pass, keeps them if the
/// accuracy beats every earlier epoch (ties keep the earlier one), then
/// takes one Adam step on the training loss.
inline TrainResult train(const ModelConfig& mcfg, const ExperimentConfig& cfg, const Graph& g, const Precomputed& pre,
                         const Split& split, std::uint64_t seed) {
    cfg.validate();
    require(pre.size() == g.n, "shape_mismatch", "spectral decomposition does not match the graph");
    ParamStore params = init_model(mcfg, seed);
    const AdamOptions adam{.lr = cfg.lr, .weight_decay = cfg.weight_decay};

    TrainResult result;
    result.history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ad::Tape tape;
        const VarMap vars = bind(tape, params);
        ForwardResult fwd;
        try {
            fwd = forward(tape, pre, g.features, vars, mcfg);
        } catch (const Error& e) {
            // A NaN step size means the parameters have blown up.
            if (e.code() != "nonpositive_delta" || epoch == 0) throw;
            fail("diverged", "filter step size is not finite at epoch " + std::to_string(epoch));
        }
        const ad::Var l = loss(fwd.logits, split.train, g.labels);
        const double train_loss = l.value()[0];
        if (!std::isfinite(train_loss))
            fail("diverged", "training loss is not finite at epoch " + std::to_string(epoch));
        const double val_acc = accuracy(fwd.logits.value(), g.labels, split.val);
        result.history.push_back({epoch, train_loss, val_acc});
        if (val_acc > result.best_val_acc) {
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
            result.params = params;
        }
        tape.backward(l);
        adam_step(params, collect_grads(tape, vars), adam);
    }
    return result;
}

inline double evaluate(const ParamStore& params, const ModelConfig& mcfg, const Graph& g, const Precomputed& pre,
                       std::span<const std::size_t> rows) {
    require(!rows.empty(), "empty_split", "evaluation set is empty");
    return accuracy(predict_logits(pre, g.features, params, mcfg), g.labels, rows);
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation

/// t_{0.975, k-1} * sd / sqrt(k); nullopt for fewer than two values.
inline std::optional<double> ci_halfwidth(std::span<const double> values) {
    const std::size_t k = values.size();
    if (k < 2) return std::nullopt;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(k - 1));
    const boost::math::students_t dist(static_cast<double>(k - 1));
    const double t = boost::math::quantile(dist, 0.975);
    return t * sd / std::sqrt(static_cast<double>(k));
}

struct SeedRun {
    std::uint64_t seed = 0;
    double test_acc = 0.0;
    TrainResult train;
};

struct RunResult {
    std::vector<SeedRun> runs;  // in config seed order
    double mean = 0.0;
    std::optional<double> ci_halfwidth;

    std::vector<double> accuracies() const {
        std::vector<double> a;
        for (const auto& r : runs) a.push_back(r.test_acc);
        return a;
    }
};

inline RunResult aggregate(std::vector<SeedRun> runs) {
    RunResult out;
    out.runs = std::move(runs);
    const auto acc = out.accuracies();
    double s = 0.0;
    for (double a : acc) s += a;
    out.mean = acc.empty() ? 0.0 : s / static_cast<double>(acc.size());
    out.ci_halfwidth = ci_halfwidth(acc);
    return out;
}

/// Trains and tests one model per seed on make_splits(n, seed). `jobs` > 1
/// runs seeds on worker threads; every seed owns its tape and parameters and
/// results are stored by seed position, so the output does not depend on
/// scheduling.
inline RunResult run_seeds(const ExperimentConfig& cfg, const Graph& g, const SpectralDecomposition& sd,
                           std::size_t jobs = 1) {
    cfg.validate();
    const ModelConfig mcfg = model_config(cfg, g);
    const Precomputed pre(sd);
    std::vector<SeedRun> runs(cfg.seeds.size());
    std::vector<std::exception_ptr> errors(cfg.seeds.size());

    auto run_one = [&](std::size_t i) {
        try {
            const std::uint64_t seed = cfg.seeds[i];
            const Split split = make_splits(g.n, seed);
            runs[i].seed = seed;
            runs[i].train = train(mcfg, cfg, g, pre, split, seed);
            runs[i].test_acc = evaluate(runs[i].train.params, mcfg, g, pre, split.test);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    jobs = std::clamp<std::size_t>(jobs, 1, cfg.seeds.size());
    if (jobs == 1) {
        for (std::size_t i = 0; i < runs.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w)
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < runs.size(); i = next++) run_one(i);
            });
        for (auto& t : workers) t.join();
    }
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            throw Error(e.code(), "seed " + std::to_string(cfg.seeds[i]) + ": " + e.what());
        }
    }
    return aggregate(std::move(runs));
}

// ---------------------------------------------------------------------------
// Topology perturbation

enum class PerturbMode { rand, partition };

inline PerturbMode parse_perturb_mode(const std::string& s) {
    if (s == "rand") return PerturbMode::rand;
    if (s == "partition") return PerturbMode::partition;
    fail("bad_mode", "unknown perturbation mode '" + s + "' (expected rand or partition)");
}

struct Perturbation {
    Graph graph;
    std::size_t removed = 0;
    std::size_t partition_removed = 0;  // partition mode: edges cut by the bisection itself
    std::size_t parts = 1;
};

/// rand: `target` uniformly sampled edges. partition: the finest nested
/// Fiedler partition whose cut is <= target, then random removal tops the
/// count up to exactly `target`.
inline Perturbation perturb_graph(const Graph& g, PerturbMode mode, std::size_t target, std::uint64_t seed) {
    require(target <= g.edges.size(), "unreachable_target",
            "cannot remove " + std::to_string(target) + " edges from a graph with " + std::to_string(g.edges.size()));
    Perturbation p;
    if (mode == PerturbMode::rand) {
        p.graph = remove_edges_random(g, target, seed);
    } else {
        PartitionCut cut = partition_cut_within(g, target);
        p.partition_removed = cut.removed;
        p.parts = cut.parts.empty() ? 1 : *std::max_element(cut.parts.begin(), cut.parts.end()) + 1;
        p.graph = remove_edges_random(cut.graph, target - cut.removed, seed);
    }
    p.removed = g.edges.size() - p.graph.edges.size();
    return p;
}

struct RobustnessResult {
    Perturbation perturbation;
    RunResult run;
};

inline RobustnessResult robustness_experiment(const ExperimentConfig& cfg, const Graph& g, PerturbMode mode,
                                              std::size_t target, std::size_t jobs = 1) {
    RobustnessResult r;
    r.perturbation = perturb_graph(g, mode, target, cfg.perturb_seed);
    const SpectralDecomposition sd = eig_sym(build_normalized_laplacian(r.perturbation.graph));
    r.run = run_seeds(cfg, r.perturbation.graph, sd, jobs);
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark graphs

enum class Motif { clique, cycle };

inline Motif parse_motif(const std::string& s) {
    if (s == "clique") return Motif::clique;
    if (s == "cycle") return Motif::cycle;
    fail("bad_motif", "unknown motif '" + s + "' (expected clique or cycle)");
}

struct ComponentSpec {
    std::size_t size = 3;
    Motif motif = Motif::clique;
    bool homophilic = true;
};

struct SynthOptions {
    std::string name = "synth";
    std::size_t feature_dim = 8;
    std::size_t num_classes = 2;
    double class_separation = 1.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
};

/// Disjoint union of motifs, nodes numbered component by component.
/// Homophilic components take one class each (cycling through classes in
/// list order) with features = class mean + noise. Heterophilic components
/// alternate classes 0,1,0,1,... along their node order. The first half of
/// them (in list order) give each node its own class mean, the second half
/// give it the other class's mean, so over all heterophilic nodes both
/// classes see the same feature distribution and only the component a node
/// sits in tells the two readings apart.
inline Graph synth_dataset(const std::vector<ComponentSpec>& components, const SynthOptions& opt) {
    require(!components.empty(), "bad_synth", "need at least one component");
    require(opt.num_classes >= 2, "bad_synth", "need at least two classes");
    require(opt.feature_dim >= 1, "bad_synth", "need at least one feature");
    SplitMix64 rng(opt.seed);

    Tensor means = Tensor::matrix(opt.num_classes, opt.feature_dim);
    for (double& v : means.values()) v = opt.class_separation * rng.normal();

    Graph g;
    g.name = opt.name;
    g.num_classes = opt.num_classes;
    for (const auto& c : components) {
        require(c.size >= 3, "bad_synth", "component sizes must be >= 3");
        g.n += c.size;
    }
    g.features = Tensor::matrix(g.n, opt.feature_dim);
    g.labels.assign(g.n, 0);

    const auto het_total = static_cast<std::size_t>(
        std::count_if(components.begin(), components.end(), [](const ComponentSpec& c) { return !c.homophilic; }));
    std::size_t base = 0;
    std::size_t homophilic_index = 0;
    std::size_t het_index = 0;
    for (const auto& c : components) {
        if (c.motif == Motif::clique) {
            for (std::size_t a = 0; a < c.size; ++a)
                for (std::size_t b = a + 1; b < c.size; ++b) g.edges.push_back({base + a, base + b});
        } else {
            for (std::size_t a = 0; a + 1 < c.size; ++a) g.edges.push_back({base + a, base + a + 1});
            g.edges.push_back({base, base + c.size - 1});
        }
        const int comp_class = static_cast<int>(homophilic_index % opt.num_classes);
        const bool swapped = !c.homophilic && 2 * het_index >= het_total;
        (c.homophilic ? homophilic_index : het_index)++;
        for (std::size_t a = 0; a < c.size; ++a) {
            const std::size_t v = base + a;
            const int label = c.homophilic ? comp_class : static_cast<int>(a % 2);
            const auto source = static_cast<std::size_t>(swapped ? 1 - label : label);
            g.labels[v] = label;
            for (std::size_t j = 0; j < opt.feature_dim; ++j) g.features(v, j) = means(source, j) + opt.noise * rng.normal();
        }
        base += c.size;
    }
    std::sort(g.edges.begin(), g.edges.end());
    validate(g);
    return g;
}

/// The mixed benchmark: four homophilic 16-cycles then four heterophilic
/// 16-cycles (128 nodes, 8 features, 2 classes).
inline Graph benchmark_dataset(std::uint64_t seed = 7) {
    std::vector<ComponentSpec> comps;
    for (int i = 0; i < 4; ++i) comps.push_back({16, Motif::cycle, true});
    for (int i = 0; i < 4; ++i) comps.push_back({16, Motif::cycle, false});
    return synth_dataset(comps, {.name = "synth-benchmark", .seed = seed});
}

// ---------------------------------------------------------------------------
// Output files

inline nlohmann::ordered_json results_json(const ExperimentConfig& cfg, const RunResult& r) {
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& run : r.runs)
        per_seed.push_back({{"seed", run.seed},
                            {"test_acc", run.test_acc},
                            {"best_epoch", run.train.best_epoch},
                            {"best_val_acc", run.train.best_val_acc}});
    nlohmann::ordered_json j;
    j["config"] = to_json(cfg);
    j["per_seed"] = per_seed;
    j["accuracies"] = r.accuracies();
    j["mean"] = r.mean;
    if (r.ci_halfwidth) {
        j["ci_halfwidth"] = *r.ci_halfwidth;
        j["ci_low"] = std::clamp(r.mean - *r.ci_halfwidth, 0.0, 1.0);
        j["ci_high"] = std::clamp(r.mean + *r.ci_halfwidth, 0.0, 1.0);
    } else {
        j["ci_halfwidth"] = nullptr;
    }
    return j;
}

/// Everything needed to rebuild a model around a checkpoint.
inline nlohmann::ordered_json model_config_json(const ModelConfig& m) {
    return {{"input_dim", m.input_dim},
            {"hidden", m.hidden},
            {"fc_layers", m.fc_layers},
            {"num_classes", m.num_classes},
            {"variant", to_string(m.filter.variant)},
            {"width", m.filter.width},
            {"state", m.filter.state},
            {"layers", m.filter.layers},
            {"psi_layers", m.filter.psi_layers},
            {"gamma", m.filter.gamma}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    try {
        m.input_dim = j.at("input_dim").get<std::size_t>();
        m.hidden = j.at("hidden").get<std::size_t>();
        m.fc_layers = j.at("fc_layers").get<std::size_t>();
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.filter.variant = parse_variant(j.at("variant").get<std::string>());
        m.filter.width = j.at("width").get<std::size_t>();
        m.filter.state = j.at("state").get<std::size_t>();
        m.filter.layers = j.at("layers").get<std::size_t>();
        m.filter.psi_layers = j.at("psi_layers").get<std::size_t>();
        m.filter.gamma = j.at("gamma").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail("bad_checkpoint", std::string("model description: ") + e.what());
    }
    m.validate();
    return m;
}

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), "io", "cannot write " + path.string());
    out.precision(17);
    out << "epoch,train_loss,val_acc\n";
    for (const auto& h : history) out << h.epoch << ',' << h.train_loss << ',' << h.val_acc << '\n';
}

}  // namespace grassnet
