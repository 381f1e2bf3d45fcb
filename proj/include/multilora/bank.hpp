// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/error.hpp"
#include "multilora/matrix.hpp"

namespace multilora {

/// batch x slots {0,1} matrix. Row i selects request i's adapter slot; an
/// all-zero row means base-only. Construction is unchecked so tests can build
/// invalid masks; batched_masked_forward validates row sums.
struct RoutingMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    RoutingMask() = default;
    RoutingMask(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

    std::uint8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::uint8_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

/// Per-layer stacked A/B tensors over fixed capacity slots, zero-padded to a
/// uniform r_max so heterogeneous-rank adapters batch with one shape. Slots
/// are recycled lowest-index-first, so a register/evict log replays to the
/// same slot map everywhere.
class AdapterBank {
public:
    struct LayerShape {
        std::size_t d_out = 0;
        std::size_t d_in = 0;
    };

    struct Layer {
        std::size_t d_out = 0;
        std::size_t d_in = 0;
        std::vector<float> a;          // n_slots * r_max * d_in
        std::vector<float> b;          // n_slots * d_out * r_max
        std::vector<float> scale;      // per slot, alpha/rank of the occupant entry, 0 if none
        std::vector<std::uint32_t> rank;  // per slot occupant rank at this layer, 0 if none

        const float* a_plane(std::size_t slot, std::size_t r_max) const {
            return a.data() + slot * r_max * d_in;
        }
        const float* b_plane(std::size_t slot, std::size_t r_max) const {
            return b.data() + slot * d_out * r_max;
        }
    };

    AdapterBank(const std::map<std::string, LayerShape>& shapes, std::size_t n_slots,
                std::size_t r_max)
        : n_slots_(n_slots), r_max_(r_max) {
        if (n_slots_ < 1 || r_max_ < 1) {
            throw Error(ErrorKind::DomainError, "bank needs n_slots >= 1 and r_max >= 1");
        }
        if (shapes.empty()) {
            throw Error(ErrorKind::DomainError, "bank needs at least one layer");
        }
        for (const auto& [id, shape] : shapes) {
            if (shape.d_in == 0 || shape.d_out == 0) {
                throw Error(ErrorKind::DomainError, "layer '" + id + "' has zero dimension");
            }
            Layer layer;
            layer.d_out = shape.d_out;
            layer.d_in = shape.d_in;
            layer.a.assign(n_slots_ * r_max_ * shape.d_in, 0.0f);
            layer.b.assign(n_slots_ * shape.d_out * r_max_, 0.0f);
            layer.scale.assign(n_slots_, 0.0f);
            layer.rank.assign(n_slots_, 0);
            layers_.emplace(id, std::move(layer));
        }
        for (std::size_t s = 0; s < n_slots_; ++s) {
            free_slots_.insert(s);
        }
    }

    std::size_t n_slots() const { return n_slots_; }
    std::size_t r_max() const { return r_max_; }
    std::size_t free_count() const { return free_slots_.size(); }

    bool has_layer(const std::string& layer_id) const { return layers_.count(layer_id) != 0; }

    const Layer& layer(const std::string& layer_id) const {
        auto it = layers_.find(layer_id);
        if (it == layers_.end()) {
            throw Error(ErrorKind::LayerMismatch, "bank has no layer '" + layer_id + "'");
        }
        return it->second;
    }

    bool contains(const std::string& adapter_id) const {
        return slot_map_.count(adapter_id) != 0;
    }

    std::optional<std::size_t> slot_of(const std::string& adapter_id) const {
        auto it = slot_map_.find(adapter_id);
        if (it == slot_map_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    const std::map<std::string, std::size_t>& slot_map() const { return slot_map_; }

    /// Writes the adapter into the lowest free slot, zero-padded to r_max.
    /// Validates everything before touching any plane.
    std::size_t register_adapter(const LoraAdapter& adapter) {
        adapter.validate();
        if (slot_map_.count(adapter.adapter_id)) {
            throw Error(ErrorKind::DuplicateId,
                        "adapter '" + adapter.adapter_id + "' already registered");
        }
        for (const auto& [layer_id, delta] : adapter.entries) {
            auto it = layers_.find(layer_id);
            if (it == layers_.end()) {
                throw Error(ErrorKind::LayerMismatch,
                            "adapter '" + adapter.adapter_id + "' targets layer '" + layer_id +
                                "' which the bank lacks");
            }
            if (delta.rank > r_max_) {
                throw Error(ErrorKind::RankOverflow,
                            "adapter '" + adapter.adapter_id + "' layer '" + layer_id + "' rank " +
                                std::to_string(delta.rank) + " exceeds bank r_max " +
                                std::to_string(r_max_));
            }
            if (delta.d_in() != it->second.d_in || delta.d_out() != it->second.d_out) {
                throw Error(ErrorKind::ShapeMismatch,
                            "adapter '" + adapter.adapter_id + "' layer '" + layer_id + "' is " +
                                std::to_string(delta.d_out()) + "x" + std::to_string(delta.d_in()) +
                                " but the bank layer is " + std::to_string(it->second.d_out) + "x" +
                                std::to_string(it->second.d_in));
            }
        }
        if (free_slots_.empty()) {
            throw Error(ErrorKind::CapacityExhausted,
                        "all " + std::to_string(n_slots_) + " slots occupied");
        }
        std::size_t slot = *free_slots_.begin();
        free_slots_.erase(free_slots_.begin());
        for (const auto& [layer_id, delta] : adapter.entries) {
            Layer& layer = layers_.at(layer_id);
            float* a = layer.a.data() + slot * r_max_ * layer.d_in;
            for (std::size_t k = 0; k < delta.rank; ++k) {
                for (std::size_t j = 0; j < layer.d_in; ++j) {
                    a[k * layer.d_in + j] = delta.a(k, j);
                }
            }
            float* b = layer.b.data() + slot * layer.d_out * r_max_;
            for (std::size_t i = 0; i < layer.d_out; ++i) {
                for (std::size_t k = 0; k < delta.rank; ++k) {
                    b[i * r_max_ + k] = delta.b(i, k);
                }
            }
            layer.scale[slot] = static_cast<float>(delta.scale());
            layer.rank[slot] = delta.rank;
        }
        slot_map_.emplace(adapter.adapter_id, slot);
        return slot;
    }

    /// Zeroes the slot's planes and returns it to the free set.
    void evict(const std::string& adapter_id) {
        auto it = slot_map_.find(adapter_id);
        if (it == slot_map_.end()) {
            throw Error(ErrorKind::UnknownId, "adapter '" + adapter_id + "' is not registered");
        }
        std::size_t slot = it->second;
        for (auto& [layer_id, layer] : layers_) {
            std::fill_n(layer.a.data() + slot * r_max_ * layer.d_in, r_max_ * layer.d_in, 0.0f);
            std::fill_n(layer.b.data() + slot * layer.d_out * r_max_, layer.d_out * r_max_, 0.0f);
            layer.scale[slot] = 0.0f;
            layer.rank[slot] = 0;
        }
        slot_map_.erase(it);
        free_slots_.insert(slot);
    }

    /// One-hot row per request id, all-zero row for base-only requests.
    RoutingMask build_routing_mask(const std::vector<std::optional<std::string>>& ids) const {
        RoutingMask mask(ids.size(), n_slots_);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!ids[i]) {
                continue;
            }
            auto it = slot_map_.find(*ids[i]);
            if (it == slot_map_.end()) {
                throw Error(ErrorKind::UnknownId,
                            "request " + std::to_string(i) + " names unregistered adapter '" +
                                *ids[i] + "'");
            }
            mask(i, it->second) = 1;
        }
        return mask;
    }

private:
    std::map<std::string, Layer> layers_;
    std::map<std::string, std::size_t> slot_map_;
    std::set<std::size_t> free_slots_;
    std::size_t n_slots_;
    std::size_t r_max_;
};

/// Batched forward over one bank layer: per row, gather the one-hot slot and
/// compute w*x + scale_s * B_s * (A_s * x); base matvec only for all-zero
/// rows. Gather semantics are the ground truth; the inner loops run over
/// the occupant's rank, which equals the padded formulation exactly because
/// padding rows and columns are zero.
inline Matrix batched_masked_forward(const Matrix& x_rows, const Matrix& w,
                                     const AdapterBank& bank, const std::string& layer_id,
                                     const RoutingMask& mask) {
    const AdapterBank::Layer& layer = bank.layer(layer_id);
    if (w.rows() != layer.d_out || w.cols() != layer.d_in) {
        throw Error(ErrorKind::ShapeMismatch,
                    "weight " + w.shape_string() + " does not match bank layer '" + layer_id +
                        "' " + std::to_string(layer.d_out) + "x" + std::to_string(layer.d_in));
    }
    if (x_rows.cols() != layer.d_in) {
        throw Error(ErrorKind::ShapeMismatch,
                    "input " + x_rows.shape_string() + " does not match layer d_in " +
                        std::to_string(layer.d_in));
    }
    if (mask.rows != x_rows.rows() || mask.cols != bank.n_slots()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                        " does not match batch " + std::to_string(x_rows.rows()) + " x slots " +
                        std::to_string(bank.n_slots()));
    }

    const std::size_t r_max = bank.r_max();
    Matrix out(x_rows.rows(), layer.d_out);
    std::vector<float> t(r_max, 0.0f);
    for (std::size_t row = 0; row < x_rows.rows(); ++row) {
        // Resolve the row's one-hot slot, rejecting anything but {0,1} weights.
        std::optional<std::size_t> slot;
        for (std::size_t s = 0; s < mask.cols; ++s) {
            std::uint8_t v = mask(row, s);
            if (v == 0) {
                continue;
            }
            if (v != 1 || slot.has_value()) {
                throw Error(ErrorKind::InvalidMask,
                            "mask row " + std::to_string(row) + " is not one-hot");
            }
            slot = s;
        }
        const float* x = x_rows.row_ptr(row);
        float* y = out.row_ptr(row);
        for (std::size_t i = 0; i < layer.d_out; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < layer.d_in; ++k) {
                acc += static_cast<double>(w(i, k)) * static_cast<double>(x[k]);
            }
            y[i] = static_cast<float>(acc);
        }
        if (!slot) {
            continue;
        }
        const std::uint32_t rank = layer.rank[*slot];
        if (rank == 0) {
            continue;  // slot carries no delta for this layer
        }
        const float* a = layer.a_plane(*slot, r_max);
        const float* b = layer.b_plane(*slot, r_max);
        const double scale = static_cast<double>(layer.scale[*slot]);
        for (std::uint32_t k = 0; k < rank; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < layer.d_in; ++j) {
                acc += static_cast<double>(a[k * layer.d_in + j]) * static_cast<double>(x[j]);
            }
            t[k] = static_cast<float>(acc);
        }
        for (std::size_t i = 0; i < layer.d_out; ++i) {
            double acc = 0.0;
            for (std::uint32_t k = 0; k < rank; ++k) {
                acc += static_cast<double>(b[i * r_max + k]) * static_cast<double>(t[k]);
            }
            const float d = static_cast<float>(scale * acc);
            if (d != 0.0f) {
                y[i] = static_cast<float>(static_cast<double>(y[i]) + static_cast<double>(d));
            }
        }
    }
    return out;
}

}  // namespace multilora
