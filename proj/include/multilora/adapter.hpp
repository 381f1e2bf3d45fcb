// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "multilora/error.hpp"
#include "multilora/lora.hpp"

namespace multilora {

inline bool valid_adapter_id(const std::string& id) {
    if (id.empty() || id.size() > 128) {
        return false;
    }
    for (char c : id) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                  c == '.' || c == '_' || c == '-';
        if (!ok) {
            return false;
        }
    }
    return true;
}

/// A named bundle of per-layer deltas; the unit of registration, serialization
/// and sync. Entries are keyed by layer id, so duplicates cannot exist and
/// iteration order is the serialization order.
struct LoraAdapter {
    std::string adapter_id;
    std::map<std::string, LoraLayerDelta> entries;

    void validate() const {
        if (!valid_adapter_id(adapter_id)) {
            throw Error(ErrorKind::Validation,
                        "adapter id '" + adapter_id + "' is empty, too long or has characters "
                        "outside [a-zA-Z0-9._-]");
        }
        if (entries.empty()) {
            throw Error(ErrorKind::Validation, "adapter '" + adapter_id + "' has no entries");
        }
        for (const auto& [layer, delta] : entries) {
            if (layer.empty()) {
                throw Error(ErrorKind::Validation, "empty layer id in adapter '" + adapter_id + "'");
            }
            delta.validate();
        }
    }

    /// Serialized payload bytes (A and B tensors only, headers excluded).
    std::uint64_t payload_bytes() const {
        std::uint64_t total = 0;
        for (const auto& [layer, delta] : entries) {
            total += 4ull * delta.rank * (delta.d_in() + delta.d_out());
        }
        return total;
    }

    bool operator==(const LoraAdapter& other) const {
        return adapter_id == other.adapter_id && entries == other.entries;
    }
};

}  // namespace multilora
