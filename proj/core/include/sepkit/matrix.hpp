#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

/// Row-major dense matrix of 64-bit floats. All numerics in this project run
/// in double precision; dimensions are desk-scale.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw std::invalid_argument("Matrix: data length does not match dimensions");
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    bool operator==(const Matrix& other) const = default;

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// Throws std::invalid_argument naming `what` if any entry is NaN/Inf.
    void require_finite(const std::string& what) const {
        if (!all_finite()) {
            throw std::invalid_argument(what + ": non-finite entries rejected");
        }
    }
};

}  // namespace sepkit
