// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "multilora/error.hpp"
#include "multilora/matrix.hpp"

namespace multilora {

/// One layer's low-rank delta: W gains scale * B * A with scale = alpha / rank.
struct LoraLayerDelta {
    Matrix a;     // rank x d_in
    Matrix b;     // d_out x rank
    float alpha = 1.0f;
    std::uint32_t rank = 1;

    LoraLayerDelta() = default;

    LoraLayerDelta(Matrix a_in, Matrix b_in, float alpha_in, std::uint32_t rank_in)
        : a(std::move(a_in)), b(std::move(b_in)), alpha(alpha_in), rank(rank_in) {
        validate();
    }

    std::size_t d_in() const { return a.cols(); }
    std::size_t d_out() const { return b.rows(); }

    double scale() const { return static_cast<double>(alpha) / static_cast<double>(rank); }

    void validate() const {
        if (rank < 1) {
            throw Error(ErrorKind::DomainError, "rank must be >= 1");
        }
        if (a.rows() != rank) {
            throw Error(ErrorKind::ShapeMismatch,
                        "A has " + std::to_string(a.rows()) + " rows, expected rank " +
                            std::to_string(rank));
        }
        if (b.cols() != rank) {
            throw Error(ErrorKind::ShapeMismatch,
                        "B has " + std::to_string(b.cols()) + " cols, expected rank " +
                            std::to_string(rank));
        }
        if (rank > a.cols() || rank > b.rows()) {
            throw Error(ErrorKind::DomainError,
                        "rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = min(" +
                            std::to_string(a.cols()) + ", " + std::to_string(b.rows()) + ")");
        }
        if (!(alpha > 0.0f) || !std::isfinite(alpha)) {
            throw Error(ErrorKind::DomainError, "alpha must be a positive finite float");
        }
    }

    bool operator==(const LoraLayerDelta& other) const {
        return rank == other.rank && alpha == other.alpha && a == other.a && b == other.b;
    }
};

/// Delta contribution only: (alpha/rank) * B * (A * x), as two rank-sized
/// matvecs. The dense d_out x d_in product never materializes.
inline Matrix lora_delta_apply(const Matrix& x, const LoraLayerDelta& delta) {
    if (x.cols() != 1 || x.rows() != delta.d_in()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "lora_delta_apply expects " + std::to_string(delta.d_in()) + "x1 input, got " +
                        x.shape_string());
    }
    const std::size_t r = delta.rank;
    const std::size_t d_in = delta.d_in();
    const std::size_t d_out = delta.d_out();
    std::vector<float> t(r, 0.0f);
    for (std::size_t k = 0; k < r; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d_in; ++j) {
            acc += static_cast<double>(delta.a(k, j)) * static_cast<double>(x(j, 0));
        }
        t[k] = static_cast<float>(acc);
    }
    const double scale = delta.scale();
    Matrix y(d_out, 1);
    for (std::size_t i = 0; i < d_out; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) {
            acc += static_cast<double>(delta.b(i, k)) * static_cast<double>(t[k]);
        }
        y(i, 0) = static_cast<float>(scale * acc);
    }
    return y;
}

/// Non-merged forward: W*x plus the explicit delta pathway. An exactly-zero
/// delta element leaves the base element's bits untouched.
inline Matrix lora_forward(const Matrix& x, const Matrix& w, const LoraLayerDelta& delta) {
    if (w.rows() != delta.d_out() || w.cols() != delta.d_in()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "weight " + w.shape_string() + " does not match delta " +
                        std::to_string(delta.d_out()) + "x" + std::to_string(delta.d_in()));
    }
    Matrix base = matmul(w, x);
    Matrix d = lora_delta_apply(x, delta);
    for (std::size_t i = 0; i < base.rows(); ++i) {
        if (d(i, 0) != 0.0f) {
            base(i, 0) = static_cast<float>(static_cast<double>(base(i, 0)) +
                                            static_cast<double>(d(i, 0)));
        }
    }
    return base;
}

/// W' = W + (alpha/rank) * B * A, accumulated in 64-bit. Zero-B deltas return
/// W bit-for-bit.
inline Matrix merge_weights(const Matrix& w, const LoraLayerDelta& delta) {
    if (w.rows() != delta.d_out() || w.cols() != delta.d_in()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "weight " + w.shape_string() + " does not match delta " +
                        std::to_string(delta.d_out()) + "x" + std::to_string(delta.d_in()));
    }
    const double scale = delta.scale();
    Matrix out = w;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < delta.rank; ++k) {
                acc += static_cast<double>(delta.b(i, k)) * static_cast<double>(delta.a(k, j));
            }
            const double d = scale * acc;
            if (d != 0.0) {
                out(i, j) = static_cast<float>(static_cast<double>(w(i, j)) + d);
            }
        }
    }
    return out;
}

/// Inverse of merge_weights at full precision; quantifies how lossy a merge
/// round trip is.
inline Matrix unmerge_weights(const Matrix& w_merged, const LoraLayerDelta& delta) {
    if (w_merged.rows() != delta.d_out() || w_merged.cols() != delta.d_in()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "weight " + w_merged.shape_string() + " does not match delta " +
                        std::to_string(delta.d_out()) + "x" + std::to_string(delta.d_in()));
    }
    const double scale = delta.scale();
    Matrix out = w_merged;
    for (std::size_t i = 0; i < w_merged.rows(); ++i) {
        for (std::size_t j = 0; j < w_merged.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < delta.rank; ++k) {
                acc += static_cast<double>(delta.b(i, k)) * static_cast<double>(delta.a(k, j));
            }
            const double d = scale * acc;
            if (d != 0.0) {
                out(i, j) = static_cast<float>(static_cast<double>(w_merged(i, j)) - d);
            }
        }
    }
    return out;
}

}  // namespace multilora
