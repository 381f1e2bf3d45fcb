// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded random inputs for property tests. Oracles stay in the test files
// that use them, independent of the library paths they check.

#include <cstdint>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/lora.hpp"
#include "multilora/matrix.hpp"
#include "multilora/rng.hpp"

namespace testutil {

using multilora::LoraAdapter;
using multilora::LoraLayerDelta;
using multilora::Matrix;
using multilora::SplitMix64;

inline Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols,
                            double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) {
        m.data()[k] = static_cast<float>(rng.next_in(lo, hi));
    }
    return m;
}

inline LoraLayerDelta random_delta(SplitMix64& rng, std::size_t d_in, std::size_t d_out,
                                   std::uint32_t rank, float alpha) {
    return LoraLayerDelta(random_matrix(rng, rank, d_in), random_matrix(rng, d_out, rank), alpha,
                          rank);
}

/// Adapter with 1..4 random layers, dims <= 16, rank <= 4.
inline LoraAdapter random_adapter(SplitMix64& rng, const std::string& id) {
    LoraAdapter adapter;
    adapter.adapter_id = id;
    std::size_t n_layers = 1 + rng.next_below(4);
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::size_t d_in = 1 + rng.next_below(16);
        std::size_t d_out = 1 + rng.next_below(16);
        std::uint32_t max_rank = static_cast<std::uint32_t>(std::min({d_in, d_out, std::size_t{4}}));
        std::uint32_t rank = 1 + static_cast<std::uint32_t>(rng.next_below(max_rank));
        float alpha = static_cast<float>(0.25 + rng.next_unit() * 3.75);
        adapter.entries.emplace("layer" + std::to_string(l),
                                random_delta(rng, d_in, d_out, rank, alpha));
    }
    return adapter;
}

}  // namespace testutil
