#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace moepath {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// "RxC", used in diagnostics.
    std::string shape_string() const;

    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Returns h * w^T. Throws ShapeError when h.cols() != w.cols().
Matrix matmul_transpose(const Matrix& h, const Matrix& w);

/// w * v for a single row vector v (i.e. one row of matmul_transpose).
std::vector<double> apply_transposed(std::span<const double> v, const Matrix& w);

/// Numerically stable softmax (max-subtracted). Throws ArgumentError on empty input.
std::vector<double> softmax(std::span<const double> v);

double l2_norm(std::span<const double> v);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace moepath
