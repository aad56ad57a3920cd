#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "grassnet/error.hpp"

namespace grassnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

/// Dense row-major array of doubles. Rank 1 and 2 cover almost everything;
/// the discretized SSM tensors are rank 3 (sequence x channel x state).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == shape_size(shape_), "shape_mismatch",
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_str(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        Tensor t = matrix(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            require(row.size() == c, "shape_mismatch", "ragged matrix literal");
            std::copy(row.begin(), row.end(), t.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
            ++i;
        }
        return t;
    }

    static Tensor column(std::span<const double> values) {
        return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
    }

    static Tensor row(std::span<const double> values) {
        return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
    }

    static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

    static Tensor identity(std::size_t n) {
        Tensor t = matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    std::span<double> row_span(std::size_t i) noexcept {
        return std::span<double>(data_).subspan(i * cols(), cols());
    }
    std::span<const double> row_span(std::size_t i) const noexcept {
        return std::span<const double>(data_).subspan(i * cols(), cols());
    }

    void fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

inline Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "shape_mismatch", "transpose expects a matrix");
    Tensor t = Tensor::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Plain C = A * B for rank-2 operands.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), "shape_mismatch",
            "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double* out = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            const double* brow = &b.storage()[p * n];
            for (std::size_t j = 0; j < n; ++j) out[j] += aip * brow[j];
        }
    }
    return c;
}

/// C = A^T * B without materializing A^T.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(), "shape_mismatch",
            "matmul_tn " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor c = Tensor::matrix(m, n);
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = &b.storage()[p * n];
        for (std::size_t i = 0; i < m; ++i) {
            const double api = a(p, i);
            if (api == 0.0) continue;
            double* out = &c(i, 0);
            for (std::size_t j = 0; j < n; ++j) out[j] += api * brow[j];
        }
    }
    return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "shape_mismatch", "max_abs_diff size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double frobenius_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

inline bool all_finite(const Tensor& a) {
    return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace grassnet
