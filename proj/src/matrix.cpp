#include "moepath/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moepath/error.hpp"

namespace moepath {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul_transpose(const Matrix& h, const Matrix& w) {
    if (h.cols() != w.cols()) {
        throw ShapeError("matmul_transpose: inner dimensions disagree: " + h.shape_string() +
                         " * (" + w.shape_string() + ")^T");
    }
    Matrix out(h.rows(), w.rows());
    for (std::size_t k = 0; k < h.rows(); ++k) {
        const auto hk = h.row(k);
        for (std::size_t o = 0; o < w.rows(); ++o) {
            const auto wo = w.row(o);
            double acc = 0.0;
            for (std::size_t j = 0; j < hk.size(); ++j) {
                acc += hk[j] * wo[j];
            }
            out(k, o) = acc;
        }
    }
    return out;
}

std::vector<double> apply_transposed(std::span<const double> v, const Matrix& w) {
    if (v.size() != w.cols()) {
        throw ShapeError("apply_transposed: vector of length " + std::to_string(v.size()) +
                         " against matrix " + w.shape_string());
    }
    std::vector<double> out(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
        const auto wo = w.row(o);
        double acc = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            acc += v[j] * wo[j];
        }
        out[o] = acc;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) {
        throw ArgumentError("softmax of an empty vector");
    }
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        // exp(-inf - mx) == 0 handles masked logits.
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) {
        x /= sum;
    }
    return out;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return std::sqrt(acc);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace moepath
