// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/bank.hpp"
#include "multilora/error.hpp"
#include "multilora/toy_model.hpp"

namespace multilora {

enum class ServingMode { Merged, Swap, BatchedMulti };

inline const char* to_string(ServingMode mode) {
    switch (mode) {
        case ServingMode::Merged: return "merged";
        case ServingMode::Swap: return "swap";
        case ServingMode::BatchedMulti: return "batched";
    }
    return "unknown";
}

inline ServingMode parse_serving_mode(const std::string& name) {
    if (name == "merged") return ServingMode::Merged;
    if (name == "swap") return ServingMode::Swap;
    if (name == "batched") return ServingMode::BatchedMulti;
    throw Error(ErrorKind::ConfigError, "unknown serving mode '" + name + "'");
}

struct EngineRequest {
    std::optional<std::string> adapter_id;  // nullopt = base model
    std::vector<int> tokens;
};

/// Serving core over one base model and a fixed-capacity adapter bank.
/// The three modes compute the same logits over three different pathways:
/// Merged folds deltas into cached weights, Swap keeps one adapter's deltas
/// explicit, BatchedMulti gathers per-request slots from the stacked bank.
///
/// Forwards run concurrently; register/evict/swap and Swap-mode serving take
/// the writer side, since swapping repoints the shared delta pathway.
class MultiLoraEngine {
public:
    MultiLoraEngine(ToyModel model, std::size_t n_slots, std::size_t r_max)
        : model_(std::move(model)), bank_(make_bank_shapes(model_), n_slots, r_max) {}

    const ToyModel& model() const { return model_; }
    const AdapterBank& bank() const { return bank_; }

    std::size_t register_adapter(const LoraAdapter& adapter) {
        std::unique_lock lock(rw_);
        std::size_t slot = bank_.register_adapter(adapter);
        adapters_.emplace(adapter.adapter_id, adapter);
        return slot;
    }

    void evict_adapter(const std::string& id) {
        std::unique_lock lock(rw_);
        bank_.evict(id);  // throws UnknownId before anything changes
        adapters_.erase(id);
        if (swap_target_ == std::optional<std::string>(id)) {
            swap_target_.reset();
        }
        std::lock_guard cache_lock(cache_mu_);
        merged_cache_.erase(id);
    }

    bool has_adapter(const std::string& id) const {
        std::shared_lock lock(rw_);
        return adapters_.count(id) != 0;
    }

    /// Repoints the explicit delta pathway; nullopt restores the base model.
    void swap_adapter(const std::optional<std::string>& id) {
        std::unique_lock lock(rw_);
        swap_to_locked(id);
    }

    std::optional<std::string> swap_target() const {
        std::shared_lock lock(rw_);
        return swap_target_;
    }

    std::vector<Matrix> serve_batch(ServingMode mode, const std::vector<EngineRequest>& requests) {
        if (requests.empty()) {
            return {};
        }
        std::vector<Matrix> out;
        switch (mode) {
            case ServingMode::BatchedMulti: {
                std::shared_lock lock(rw_);
                out = serve_batched_locked(requests);
                break;
            }
            case ServingMode::Merged: {
                std::shared_lock lock(rw_);
                out = serve_merged_locked(requests);
                break;
            }
            case ServingMode::Swap: {
                std::unique_lock lock(rw_);
                out = serve_swap_locked(requests);
                break;
            }
        }
        {
            std::lock_guard count_lock(counter_mu_);
            batches_served_ += 1;
            requests_served_ += requests.size();
        }
        return out;
    }

    struct AdapterInfo {
        std::string id;
        std::size_t slot = 0;
        std::map<std::string, std::uint32_t> layer_ranks;
        std::uint64_t payload_bytes = 0;
        bool merged_cached = false;
    };

    std::vector<AdapterInfo> list_adapters() const {
        std::shared_lock lock(rw_);
        std::vector<AdapterInfo> out;
        for (const auto& [id, adapter] : adapters_) {
            AdapterInfo info;
            info.id = id;
            info.slot = *bank_.slot_of(id);
            for (const auto& [layer, delta] : adapter.entries) {
                info.layer_ranks[layer] = delta.rank;
            }
            info.payload_bytes = adapter.payload_bytes();
            {
                std::lock_guard cache_lock(cache_mu_);
                info.merged_cached = merged_cache_.count(id) != 0;
            }
            out.push_back(std::move(info));
        }
        return out;
    }

    struct Metrics {
        std::uint64_t swaps = 0;
        std::uint64_t batches_served = 0;
        std::uint64_t requests_served = 0;
        std::size_t merged_cache_entries = 0;
        std::uint64_t merged_cache_bytes = 0;
        std::size_t registered_adapters = 0;
        std::size_t free_slots = 0;
    };

    Metrics metrics() const {
        std::shared_lock lock(rw_);
        Metrics m;
        {
            std::lock_guard count_lock(counter_mu_);
            m.swaps = swaps_;
            m.batches_served = batches_served_;
            m.requests_served = requests_served_;
        }
        {
            std::lock_guard cache_lock(cache_mu_);
            m.merged_cache_entries = merged_cache_.size();
            for (const auto& [id, weights] : merged_cache_) {
                for (const auto& [layer, w] : weights) {
                    m.merged_cache_bytes += 4ull * w.size();
                }
            }
        }
        m.registered_adapters = adapters_.size();
        m.free_slots = bank_.free_count();
        return m;
    }

private:
    static std::map<std::string, AdapterBank::LayerShape> make_bank_shapes(const ToyModel& model) {
        std::map<std::string, AdapterBank::LayerShape> shapes;
        for (const auto& [id, shape] : model.layer_shapes()) {
            shapes[id] = AdapterBank::LayerShape{shape.first, shape.second};
        }
        return shapes;
    }

    const LoraAdapter& adapter_locked(const std::string& id) const {
        auto it = adapters_.find(id);
        if (it == adapters_.end()) {
            throw Error(ErrorKind::UnknownId, "adapter '" + id + "' is not registered");
        }
        return it->second;
    }

    void swap_to_locked(const std::optional<std::string>& id) {
        if (id) {
            adapter_locked(*id);  // reject before touching the pathway
        }
        swap_target_ = id;
        std::lock_guard count_lock(counter_mu_);
        swaps_ += 1;
    }

    std::vector<Matrix> serve_batched_locked(const std::vector<EngineRequest>& requests) const {
        std::vector<std::optional<std::string>> ids;
        std::vector<std::vector<int>> seqs;
        ids.reserve(requests.size());
        seqs.reserve(requests.size());
        for (const auto& r : requests) {
            ids.push_back(r.adapter_id);
            seqs.push_back(r.tokens);
        }
        RoutingMask request_mask = bank_.build_routing_mask(ids);
        // One mask row per stacked token position.
        std::size_t total = 0;
        for (const auto& s : seqs) {
            total += s.size();
        }
        RoutingMask position_mask(total, bank_.n_slots());
        std::size_t row = 0;
        for (std::size_t r = 0; r < requests.size(); ++r) {
            for (std::size_t i = 0; i < seqs[r].size(); ++i, ++row) {
                for (std::size_t s = 0; s < bank_.n_slots(); ++s) {
                    position_mask(row, s) = request_mask(r, s);
                }
            }
        }
        SiteFn site = [this, &position_mask](const std::string& layer_id, const Matrix& x_rows) {
            return batched_masked_forward(x_rows, model_.weight(layer_id), bank_, layer_id,
                                          position_mask);
        };
        return forward_sites(model_, seqs, site);
    }

    std::vector<Matrix> serve_swap_locked(const std::vector<EngineRequest>& requests) {
        std::optional<std::string> target = requests.front().adapter_id;
        for (const auto& r : requests) {
            if (r.adapter_id != target) {
                throw Error(ErrorKind::MixedBatch,
                            "swap mode cannot serve a batch that targets more than one adapter");
            }
        }
        if (target) {
            adapter_locked(*target);
        }
        if (swap_target_ != target) {
            swap_to_locked(target);
        }
        const LoraAdapter* active = swap_target_ ? &adapter_locked(*swap_target_) : nullptr;
        std::vector<std::vector<int>> seqs;
        seqs.reserve(requests.size());
        for (const auto& r : requests) {
            seqs.push_back(r.tokens);
        }
        return forward_sites(model_, seqs, make_adapter_site(model_, active));
    }

    std::vector<Matrix> serve_merged_locked(const std::vector<EngineRequest>& requests) const {
        std::vector<Matrix> out;
        out.reserve(requests.size());
        for (const auto& r : requests) {
            if (!r.adapter_id) {
                out.push_back(
                    forward_sites(model_, {r.tokens}, make_adapter_site(model_, nullptr))[0]);
                continue;
            }
            const std::map<std::string, Matrix>& weights = merged_weights_locked(*r.adapter_id);
            out.push_back(forward_sites(model_, {r.tokens}, make_weights_site(weights))[0]);
        }
        return out;
    }

    /// Lazily builds and caches one merged weight set per adapter. Population
    /// is serialized; cached entries are stable map nodes, safe to read after
    /// the lock drops.
    const std::map<std::string, Matrix>& merged_weights_locked(const std::string& id) const {
        const LoraAdapter& adapter = adapter_locked(id);
        std::lock_guard cache_lock(cache_mu_);
        auto it = merged_cache_.find(id);
        if (it != merged_cache_.end()) {
            return it->second;
        }
        std::map<std::string, Matrix> merged;
        for (const auto& layer_id : model_.layer_ids()) {
            const Matrix& w = model_.weight(layer_id);
            auto entry = adapter.entries.find(layer_id);
            merged.emplace(layer_id,
                           entry == adapter.entries.end() ? w : merge_weights(w, entry->second));
        }
        return merged_cache_.emplace(id, std::move(merged)).first->second;
    }

    ToyModel model_;
    AdapterBank bank_;
    std::map<std::string, LoraAdapter> adapters_;
    std::optional<std::string> swap_target_;
    mutable std::map<std::string, std::map<std::string, Matrix>> merged_cache_;

    mutable std::shared_mutex rw_;
    mutable std::mutex cache_mu_;
    mutable std::mutex counter_mu_;
    std::uint64_t swaps_ = 0;
    std::uint64_t batches_served_ = 0;
    std::uint64_t requests_served_ = 0;
};

}  // namespace multilora
