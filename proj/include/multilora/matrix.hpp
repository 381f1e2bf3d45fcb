// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "multilora/error.hpp"

namespace multilora {

/// Dense row-major matrix of 32-bit floats. Constructors reject non-finite
/// entries; products accumulate in 64-bit and round once on store.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw Error(ErrorKind::ShapeMismatch,
                        "matrix data length " + std::to_string(data_.size()) + " does not match " +
                            shape_string());
        }
        check_finite();
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<float> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw Error(ErrorKind::ShapeMismatch, "ragged row in matrix literal");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return Matrix(r, c, std::move(data));
    }

    /// Column vector from a flat list; the one vector convention used throughout.
    static Matrix column(std::initializer_list<float> values) {
        return Matrix(values.size(), 1, std::vector<float>(values));
    }

    static Matrix column(const std::vector<float>& values) {
        return Matrix(values.size(), 1, values);
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    float at(std::size_t r, std::size_t c) const {
        if (r >= rows_ || c >= cols_) {
            throw Error(ErrorKind::DomainError, "index out of range for " + shape_string());
        }
        return data_[r * cols_ + c];
    }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    const float* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }
    float* row_ptr(std::size_t r) { return data_.data() + r * cols_; }

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ &&
               (data_.empty() ||
                std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
    }

    Matrix transposed() const {
        Matrix out(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t c = 0; c < cols_; ++c) {
                out(c, r) = (*this)(r, c);
            }
        }
        return out;
    }

private:
    void check_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) {
                throw Error(ErrorKind::Validation, "non-finite entry in " + shape_string());
            }
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline Matrix matmul(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.cols() != rhs.rows()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "matmul " + lhs.shape_string() + " x " + rhs.shape_string());
    }
    Matrix out(lhs.rows(), rhs.cols());
    for (std::size_t i = 0; i < lhs.rows(); ++i) {
        for (std::size_t j = 0; j < rhs.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < lhs.cols(); ++k) {
                acc += static_cast<double>(lhs(i, k)) * static_cast<double>(rhs(k, j));
            }
            out(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

}  // namespace multilora
