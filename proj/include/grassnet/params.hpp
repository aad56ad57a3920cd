#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "grassnet/autodiff.hpp"
#include "grassnet/tensor.hpp"

namespace grassnet {

/// Named trainable tensors plus Adam moments. std::map keeps every pass in
/// sorted-name order, so updates never depend on insertion order.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor first_moment;
        Tensor second_moment;
    };

    void add(const std::string& name, Tensor value) {
        require(!entries_.contains(name), "duplicate_param", "parameter '" + name + "' already exists");
        Entry e;
        e.first_moment = Tensor(value.shape(), 0.0);
        e.second_moment = Tensor(value.shape(), 0.0);
        e.value = std::move(value);
        entries_.emplace(name, std::move(e));
    }

    bool contains(const std::string& name) const { return entries_.contains(name); }

    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        require(it != entries_.end(), "missing_param", "no parameter named '" + name + "'");
        return it->second.value;
    }

    Tensor& at(const std::string& name) {
        auto it = entries_.find(name);
        require(it != entries_.end(), "missing_param", "no parameter named '" + name + "'");
        return it->second.value;
    }

    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
    std::map<std::string, Entry>& entries() noexcept { return entries_; }

    std::size_t step_count() const noexcept { return steps_; }
    void set_step_count(std::size_t s) noexcept { steps_ = s; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    /// Values only; moments and the step counter are not compared.
    bool same_values(const ParamStore& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b)
            if (a->first != b->first || !(a->second.value == b->second.value)) return false;
        return true;
    }

private:
    std::map<std::string, Entry> entries_;
    std::size_t steps_ = 0;
};

using VarMap = std::map<std::string, ad::Var>;
using GradMap = std::map<std::string, Tensor>;

/// Puts every parameter on the tape as a gradient-carrying leaf.
inline VarMap bind(ad::Tape& tape, const ParamStore& store) {
    VarMap vars;
    for (const auto& [name, e] : store.entries()) vars.emplace(name, tape.variable(e.value));
    return vars;
}

inline GradMap collect_grads(const ad::Tape& tape, const VarMap& vars) {
    GradMap grads;
    for (const auto& [name, v] : vars) grads.emplace(name, tape.grad(v));
    return grads;
}

struct AdamOptions {
    double lr = 0.01;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Weight decay is coupled L2: g += wd * theta
/// before the moment updates.
inline void adam_step(ParamStore& store, const GradMap& grads, const AdamOptions& opt) {
    const std::size_t t = store.step_count() + 1;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    for (auto& [name, e] : store.entries()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        require(g.same_shape(e.value), "shape_mismatch", "gradient shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i] + opt.weight_decay * e.value[i];
            e.first_moment[i] = opt.beta1 * e.first_moment[i] + (1.0 - opt.beta1) * gi;
            e.second_moment[i] = opt.beta2 * e.second_moment[i] + (1.0 - opt.beta2) * gi * gi;
            const double m_hat = e.first_moment[i] / c1;
            const double v_hat = e.second_moment[i] / c2;
            e.value[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
        }
    }
    store.set_step_count(t);
}

/// Scalar objective built on a fresh tape from bound parameters.
using Objective = std::function<ad::Var(ad::Tape&, const VarMap&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
};

/// Central differences against reverse mode over every coordinate of every
/// parameter (or only those accepted by `filter`). Relative error uses
/// max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckReport finite_diff_check(const Objective& f, const ParamStore& theta, double h = 1e-5,
                                         const std::function<bool(const std::string&)>& filter = {}) {
    GradMap analytic;
    {
        ad::Tape tape;
        VarMap vars = bind(tape, theta);
        ad::Var loss = f(tape, vars);
        tape.backward(loss);
        analytic = collect_grads(tape, vars);
    }
    auto evaluate = [&](const ParamStore& p) {
        ad::Tape tape;
        VarMap vars;
        for (const auto& [name, e] : p.entries()) vars.emplace(name, tape.constant(e.value));
        return f(tape, vars).value()[0];
    };

    GradCheckReport report;
    ParamStore probe = theta;
    for (auto& [name, e] : probe.entries()) {
        if (filter && !filter(name)) continue;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double saved = e.value[i];
            e.value[i] = saved + h;
            const double fp = evaluate(probe);
            e.value[i] = saved - h;
            const double fm = evaluate(probe);
            e.value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double exact = analytic.at(name)[i];
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            const double rel = std::abs(exact - numeric) / denom;
            ++report.coordinates;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/index.json maps name -> {shape, offset, length} with
// offset and length in bytes into <dir>/params.bin (little-endian f64).

namespace detail {

inline void put_f64_le(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "io", "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "io", "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), "io", "write failed for " + path.string());
}

}  // namespace detail

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string blob;
    nlohmann::ordered_json index = nlohmann::ordered_json::object();
    for (const auto& [name, e] : store.entries()) {
        const std::size_t offset = blob.size();
        for (double v : e.value.values()) detail::put_f64_le(blob, v);
        index[name] = {{"shape", e.value.shape()}, {"offset", offset}, {"length", blob.size() - offset}};
    }
    detail::write_file_bytes(dir / "params.bin", blob);
    detail::write_file_bytes(dir / "index.json", index.dump(2) + "\n");
}

inline ParamStore load_checkpoint(const std::filesystem::path& dir) {
    const std::string blob = detail::read_file_bytes(dir / "params.bin");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(detail::read_file_bytes(dir / "index.json"));
    } catch (const nlohmann::json::exception& e) {
        fail("bad_checkpoint", std::string("index.json: ") + e.what());
    }
    ParamStore store;
    for (const auto& [name, meta] : index.items()) {
        try {
            const auto shape = meta.at("shape").get<Shape>();
            const auto offset = meta.at("offset").get<std::size_t>();
            const auto length = meta.at("length").get<std::size_t>();
            require(length == 8 * shape_size(shape), "bad_checkpoint", "length/shape mismatch for '" + name + "'");
            require(offset <= blob.size() && length <= blob.size() - offset, "bad_checkpoint",
                    "params.bin truncated at '" + name + "'");
            std::vector<double> data(shape_size(shape));
            const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
            for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::get_f64_le(p + 8 * i);
            store.add(name, Tensor(shape, std::move(data)));
        } catch (const nlohmann::json::exception& e) {
            fail("bad_checkpoint", "index entry '" + name + "': " + e.what());
        }
    }
    return store;
}

}  // namespace grassnet
