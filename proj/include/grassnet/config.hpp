#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grassnet/error.hpp"
#include "grassnet/ssm_filter.hpp"

namespace grassnet {

/// Every knob of a training run. Loaded from JSON with exactly these keys.
struct ExperimentConfig {
    std::string dataset;     // manifest.json (or its directory)
    std::string eigencache;  // optional; computed and written when absent
    double gamma = 1.0;
    double lr = 0.01;
    std::size_t hidden_units = 16;
    std::size_t fc_layers = 1;
    double weight_decay = 5e-4;
    std::size_t epochs = 1000;
    std::size_t d_state = 16;
    std::size_t ssm_layers = 2;
    FilterVariant variant = FilterVariant::ssm_bi;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::size_t filter_width = 0;  // 0: same as hidden_units
    std::uint64_t perturb_seed = 0;

    std::size_t effective_filter_width() const { return filter_width ? filter_width : hidden_units; }

    void validate() const {
        require(epochs >= 1, "bad_config", "epochs must be >= 1");
        require(!seeds.empty(), "bad_config", "seeds must not be empty");
        require(gamma > 0.0, "bad_config", "gamma must be > 0");
        require(lr > 0.0, "bad_config", "lr must be > 0");
        require(weight_decay >= 0.0, "bad_config", "weight_decay must be >= 0");
        require(hidden_units >= 1 && fc_layers >= 1 && d_state >= 1 && ssm_layers >= 1, "bad_config",
                "hidden_units, fc_layers, d_state and ssm_layers must be >= 1");
    }
};

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "dataset", "eigencache", "gamma",   "lr",    "hidden_units", "fc_layers",    "weight_decay",
        "epochs",  "d_state",    "ssm_layers", "variant", "seeds",   "filter_width", "perturb_seed"};
    return keys;
}

/// Published per-dataset settings (gamma, lr, hidden units, FC layers,
/// weight decay, epochs), keyed by lower-case dataset name.
inline std::optional<nlohmann::json> published_defaults(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    struct Row {
        const char* name;
        double gamma, lr;
        int hidden, fc_layers;
    };
    static constexpr Row rows[] = {
        {"cora", 1, 0.1, 16, 1},      {"citeseer", 1, 0.1, 16, 1},  {"pubmed", 5, 0.1, 32, 1},
        {"photo", 5, 0.01, 32, 1},    {"chameleon", 1, 0.01, 16, 2}, {"squirrel", 1, 0.01, 32, 2},
        {"actor", 0.1, 0.01, 16, 1},  {"texas", 5, 0.1, 8, 1},       {"cornell", 0.5, 0.1, 8, 1},
    };
    for (const Row& r : rows)
        if (name == r.name)
            return nlohmann::json{{"gamma", r.gamma},         {"lr", r.lr},          {"hidden_units", r.hidden},
                                  {"fc_layers", r.fc_layers}, {"weight_decay", 5e-4}, {"epochs", 1000}};
    return std::nullopt;
}

/// Applies the keys present in `j` on top of `cfg`; unknown keys and type
/// errors are rejected.
inline void apply_json(ExperimentConfig& cfg, const nlohmann::json& j) {
    require(j.is_object(), "bad_config", "config must be a JSON object");
    const auto& keys = config_keys();
    for (const auto& [key, value] : j.items()) {
        require(std::find(keys.begin(), keys.end(), key) != keys.end(), "bad_config", "unknown config key '" + key + "'");
        try {
            if (key == "dataset") cfg.dataset = value.get<std::string>();
            else if (key == "eigencache") cfg.eigencache = value.get<std::string>();
            else if (key == "gamma") cfg.gamma = value.get<double>();
            else if (key == "lr") cfg.lr = value.get<double>();
            else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
            else if (key == "variant") cfg.variant = parse_variant(value.get<std::string>());
            else if (key == "seeds") cfg.seeds = value.get<std::vector<std::uint64_t>>();
            else if (key == "perturb_seed") cfg.perturb_seed = value.get<std::uint64_t>();
            else {
                require(value.is_number_integer() || value.is_number_unsigned(), "bad_config",
                        "config key '" + key + "' must be a non-negative integer");
                require(value.get<long long>() >= 0, "bad_config", "config key '" + key + "' must be non-negative");
                const auto v = value.get<std::size_t>();
                if (key == "hidden_units") cfg.hidden_units = v;
                else if (key == "fc_layers") cfg.fc_layers = v;
                else if (key == "epochs") cfg.epochs = v;
                else if (key == "d_state") cfg.d_state = v;
                else if (key == "ssm_layers") cfg.ssm_layers = v;
                else if (key == "filter_width") cfg.filter_width = v;
            }
        } catch (const nlohmann::json::exception& e) {
            fail("bad_config", "config key '" + key + "': " + e.what());
        }
    }
}

/// `key=value` with value parsed as JSON when possible, else as a string.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, "bad_config", "override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    apply_json(cfg, nlohmann::json{{key, value}});
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
    return {{"dataset", cfg.dataset},
            {"eigencache", cfg.eigencache},
            {"gamma", cfg.gamma},
            {"lr", cfg.lr},
            {"hidden_units", cfg.hidden_units},
            {"fc_layers", cfg.fc_layers},
            {"weight_decay", cfg.weight_decay},
            {"epochs", cfg.epochs},
            {"d_state", cfg.d_state},
            {"ssm_layers", cfg.ssm_layers},
            {"variant", to_string(cfg.variant)},
            {"seeds", cfg.seeds},
            {"filter_width", cfg.filter_width},
            {"perturb_seed", cfg.perturb_seed}};
}

/// Built-in defaults, then the published row for the dataset's manifest
/// name (if recognised), then the file, then the overrides.
inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "missing_file", "cannot open config " + path.string());
    nlohmann::json file;
    try {
        file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("bad_config", path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    apply_json(cfg, file);
    for (const auto& o : overrides) apply_override(cfg, o);

    if (!cfg.dataset.empty()) {
        std::filesystem::path ds = cfg.dataset;
        if (ds.is_relative()) ds = path.parent_path() / ds;
        cfg.dataset = ds.string();
        if (!cfg.eigencache.empty() && std::filesystem::path(cfg.eigencache).is_relative())
            cfg.eigencache = (path.parent_path() / cfg.eigencache).string();
        std::filesystem::path manifest = ds;
        if (std::filesystem::is_directory(manifest)) manifest /= "manifest.json";
        std::ifstream m(manifest);
        if (m) {
            const auto mj = nlohmann::json::parse(m, nullptr, false);
            if (mj.is_object() && mj.contains("name") && mj["name"].is_string())
                if (auto defaults = published_defaults(mj["name"].get<std::string>())) {
                    ExperimentConfig merged;
                    merged.dataset = cfg.dataset;
                    merged.eigencache = cfg.eigencache;
                    apply_json(merged, *defaults);
                    apply_json(merged, file);
                    for (const auto& o : overrides) apply_override(merged, o);
                    merged.dataset = cfg.dataset;
                    merged.eigencache = cfg.eigencache;
                    cfg = merged;
                }
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace grassnet
