#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grassnet/autodiff.hpp"
#include "grassnet/params.hpp"
#include "grassnet/rng.hpp"
#include "grassnet/spectral.hpp"
#include "grassnet/ssm_filter.hpp"

namespace grassnet {

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden = 16;
    std::size_t fc_layers = 1;
    std::size_t num_classes = 2;
    FilterConfig filter;

    void validate() const {
        require(input_dim >= 1, "bad_config", "input dimension must be >= 1");
        require(hidden >= 1, "bad_config", "hidden_units must be >= 1");
        require(fc_layers >= 1, "bad_config", "fc_layers must be >= 1");
        require(num_classes >= 1, "bad_config", "num_classes must be >= 1");
        filter.validate();
    }
};

/// Spectrum as an n x 1 column plus U and U^T, computed once per graph.
struct Precomputed {
    Tensor lambdas;
    Tensor u;
    Tensor ut;

    explicit Precomputed(const SpectralDecomposition& sd)
        : lambdas(Tensor::column(sd.eigenvalues)), u(sd.eigenvectors), ut(transpose(sd.eigenvectors)) {}

    std::size_t size() const { return lambdas.rows(); }
};

namespace model {

inline Tensor uniform_fan_in(std::size_t fan_in, std::size_t fan_out, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return ssm::uniform_tensor({fan_in, fan_out}, bound, rng);
}

inline Tensor uniform_bias(std::size_t fan_in, std::size_t fan_out, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return ssm::uniform_tensor({1, fan_out}, bound, rng);
}

}  // namespace model

/// Encoder, filter and classifier parameters; deterministic in `seed`.
inline ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore store;
    SplitMix64 rng(derive_seed(seed, 0x1D17));
    for (std::size_t i = 0; i < cfg.fc_layers; ++i) {
        const std::size_t fan_in = i == 0 ? cfg.input_dim : cfg.hidden;
        const std::string p = "encoder." + std::to_string(i);
        store.add(p + ".weight", model::uniform_fan_in(fan_in, cfg.hidden, rng));
        store.add(p + ".bias", model::uniform_bias(fan_in, cfg.hidden, rng));
    }
    init_filter_params(store, cfg.filter, rng);
    store.add("classifier.weight", model::uniform_fan_in(cfg.hidden, cfg.num_classes, rng));
    store.add("classifier.bias", model::uniform_bias(cfg.hidden, cfg.num_classes, rng));
    return store;
}

/// Affine layers with ReLU in between; the last layer stays linear.
inline ad::Var encode(ad::Var x, const VarMap& vars, std::size_t fc_layers) {
    ad::Var h = x;
    for (std::size_t i = 0; i < fc_layers; ++i) {
        const std::string p = "encoder." + std::to_string(i);
        h = ad::add(ad::matmul(h, vars.at(p + ".weight")), vars.at(p + ".bias"));
        if (i + 1 < fc_layers) h = ad::relu(h);
    }
    return h;
}

/// U diag(s) U^T X as two n x n by n x h products; the filtered n x n
/// operator is never formed.
inline ad::Var spectral_convolve(ad::Var u, ad::Var ut, ad::Var coeffs, ad::Var xhat) {
    require(coeffs.value().rows() == u.value().cols(), "shape_mismatch",
            "coefficient count " + std::to_string(coeffs.value().rows()) + " does not match U " +
                shape_str(u.value().shape()));
    return ad::matmul(u, ad::mul(ad::matmul(ut, xhat), coeffs));
}

/// Plain-tensor version of spectral_convolve: igft(s * gft(X)).
inline Tensor spectral_convolve(const Tensor& u, std::span<const double> coeffs, const Tensor& xhat) {
    require(coeffs.size() == u.cols(), "shape_mismatch", "coefficient count does not match U");
    Tensor spec = gft(u, xhat);
    for (std::size_t i = 0; i < spec.rows(); ++i)
        for (std::size_t j = 0; j < spec.cols(); ++j) spec(i, j) *= coeffs[i];
    return igft(u, spec);
}

inline ad::Var classify(ad::Var xt, const VarMap& vars) {
    return ad::add(ad::matmul(xt, vars.at("classifier.weight")), vars.at("classifier.bias"));
}

/// Mean softmax cross-entropy over the given rows.
inline ad::Var loss(ad::Var logits, std::span<const std::size_t> rows, std::span<const int> all_labels) {
    require(!rows.empty(), "empty_labels", "loss over an empty labelled set");
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = all_labels[rows[i]];
    return ad::softmax_cross_entropy(ad::gather_rows(logits, rows), y);
}

struct ForwardResult {
    ad::Var logits;
    FilterOutput filter;
};

/// Filter coefficients from the ordered spectrum, then encode, convolve,
/// classify.
inline ForwardResult forward(ad::Tape& tape, const Precomputed& pre, const Tensor& features, const VarMap& vars,
                             const ModelConfig& cfg) {
    require(features.rows() == pre.size(), "shape_mismatch", "feature rows do not match the spectrum size");
    require(features.cols() == cfg.input_dim, "shape_mismatch",
            "feature width " + std::to_string(features.cols()) + " does not match model input " +
                std::to_string(cfg.input_dim));
    ForwardResult out;
    out.filter = filter_forward(tape.constant(pre.lambdas), vars, cfg.filter);
    const ad::Var xhat = encode(tape.constant(features), vars, cfg.fc_layers);
    const ad::Var xt = spectral_convolve(tape.constant(pre.u), tape.constant(pre.ut), out.filter.coefficients, xhat);
    out.logits = classify(xt, vars);
    return out;
}

/// Tape-free logits.
inline Tensor predict_logits(const Precomputed& pre, const Tensor& features, const ParamStore& params,
                             const ModelConfig& cfg) {
    ad::Tape tape;
    VarMap vars;
    for (const auto& [name, e] : params.entries()) vars.emplace(name, tape.constant(e.value));
    return forward(tape, pre, features, vars, cfg).logits.value();
}

/// Argmax per row, smallest class index on ties.
inline std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

inline double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::size_t> rows) {
    require(!rows.empty(), "empty_split", "accuracy over an empty index set");
    const auto pred = argmax_rows(logits);
    std::size_t hit = 0;
    for (std::size_t r : rows) hit += pred[r] == labels[r];
    return static_cast<double>(hit) / static_cast<double>(rows.size());
}

}  // namespace grassnet
