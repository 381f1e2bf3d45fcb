// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/error.hpp"
#include "multilora/lora.hpp"
#include "multilora/matrix.hpp"
#include "multilora/rng.hpp"

namespace multilora {

struct ModelConfig {
    std::size_t vocab = 32;
    std::size_t d_model = 16;
    std::size_t n_layers = 2;
    std::size_t d_ff = 32;
    std::uint64_t seed = 42;

    void validate() const {
        if (vocab < 1 || d_model < 1 || n_layers < 1 || d_ff < 1) {
            throw Error(ErrorKind::DomainError, "model config counts must all be >= 1");
        }
    }
};

/// Single-head causal transformer, no norms, no biases: the smallest shape
/// that still owns one named matrix per attach-point class. Layer ids are
/// "L{i}.{wq|wk|wv|wo|wup|wdown}", "emb", "unemb"; weight() returns each
/// matrix in the orientation it multiplies activations with, which for "emb"
/// is the transposed lookup table acting on one-hot token columns.
class ToyModel {
public:
    explicit ToyModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        ids_ = canonical_layer_ids(cfg_);
        SplitMix64 rng(cfg_.seed);
        for (const auto& id : ids_) {
            auto [rows, cols] = field_shape(id, cfg_);
            Matrix m(rows, cols);
            for (std::size_t k = 0; k < m.size(); ++k) {
                m.data()[k] = static_cast<float>(rng.next_unit() * 0.2 - 0.1);
            }
            weights_.emplace(id, id == "emb" ? m.transposed() : std::move(m));
        }
    }

    const ModelConfig& config() const { return cfg_; }

    /// Canonical ids in bytewise order; also the weight init order.
    static std::vector<std::string> canonical_layer_ids(const ModelConfig& cfg) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < cfg.n_layers; ++i) {
            const std::string prefix = "L" + std::to_string(i) + ".";
            for (const char* name : {"wq", "wk", "wv", "wo", "wup", "wdown"}) {
                ids.push_back(prefix + name);
            }
        }
        ids.push_back("emb");
        ids.push_back("unemb");
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    /// The declared shape of each matrix (rows, cols); governs init order.
    static std::pair<std::size_t, std::size_t> field_shape(const std::string& id,
                                                           const ModelConfig& cfg) {
        if (id == "emb" || id == "unemb") {
            return {cfg.vocab, cfg.d_model};
        }
        auto dot = id.find('.');
        if (id.size() > 1 && id[0] == 'L' && dot != std::string::npos) {
            std::string name = id.substr(dot + 1);
            if (name == "wq" || name == "wk" || name == "wv" || name == "wo") {
                return {cfg.d_model, cfg.d_model};
            }
            if (name == "wup") {
                return {cfg.d_ff, cfg.d_model};
            }
            if (name == "wdown") {
                return {cfg.d_model, cfg.d_ff};
            }
        }
        throw Error(ErrorKind::UnknownId, "no such layer id '" + id + "'");
    }

    const std::vector<std::string>& layer_ids() const { return ids_; }

    bool has_layer(const std::string& id) const { return weights_.count(id) != 0; }

    /// Weight in apply orientation (d_out x d_in).
    const Matrix& weight(const std::string& id) const {
        auto it = weights_.find(id);
        if (it == weights_.end()) {
            throw Error(ErrorKind::UnknownId, "no such layer id '" + id + "'");
        }
        return it->second;
    }

    /// (d_out, d_in) per layer id, the shapes adapter banks are built from.
    std::map<std::string, std::pair<std::size_t, std::size_t>> layer_shapes() const {
        std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;
        for (const auto& [id, w] : weights_) {
            shapes.emplace(id, std::make_pair(w.rows(), w.cols()));
        }
        return shapes;
    }

private:
    ModelConfig cfg_;
    std::vector<std::string> ids_;
    std::map<std::string, Matrix> weights_;
};

inline ToyModel build_model(const ModelConfig& cfg) {
    return ToyModel(cfg);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Computes one linear attach point for a block of activation rows.
/// Implementations differ per serving mode (plain, explicit delta, bank
/// gather); everything around them is shared so modes disagree only where the
/// adapter math itself does.
using SiteFn = std::function<Matrix(const std::string& layer_id, const Matrix& x_rows)>;

/// Causal single-head attention over one request's rows [row_off, row_off+len).
inline Matrix attention_mix(const Matrix& q, const Matrix& k, const Matrix& v,
                            std::size_t row_off, std::size_t len) {
    const std::size_t d = q.cols();
    const double denom = std::sqrt(static_cast<double>(d));
    Matrix out(len, d);
    std::vector<double> probs;
    for (std::size_t i = 0; i < len; ++i) {
        probs.assign(i + 1, 0.0);
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                acc += static_cast<double>(q(row_off + i, c)) *
                       static_cast<double>(k(row_off + j, c));
            }
            probs[j] = acc / denom;
            max_score = std::max(max_score, probs[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            probs[j] = std::exp(probs[j] - max_score);
            z += probs[j];
        }
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                acc += (probs[j] / z) * static_cast<double>(v(row_off + j, c));
            }
            out(i, c) = static_cast<float>(acc);
        }
    }
    return out;
}

inline Matrix one_hot_rows(const std::vector<int>& tokens, std::size_t vocab) {
    Matrix x(tokens.size(), vocab);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        x(i, static_cast<std::size_t>(tokens[i])) = 1.0f;
    }
    return x;
}

/// Full forward for a batch of token sequences with all linear sites routed
/// through `site`. Rows of all requests are stacked; attention mixes only
/// within each request's own block. Returns one len x vocab logits matrix per
/// request.
inline std::vector<Matrix> forward_sites(const ToyModel& model,
                                         const std::vector<std::vector<int>>& seqs,
                                         const SiteFn& site) {
    const ModelConfig& cfg = model.config();
    std::size_t total = 0;
    for (std::size_t r = 0; r < seqs.size(); ++r) {
        for (int t : seqs[r]) {
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab) {
                throw Error(ErrorKind::OutOfVocab,
                            "request " + std::to_string(r) + " token " + std::to_string(t) +
                                " is outside vocab " + std::to_string(cfg.vocab));
            }
        }
        total += seqs[r].size();
    }

    std::vector<int> flat;
    flat.reserve(total);
    for (const auto& s : seqs) {
        flat.insert(flat.end(), s.begin(), s.end());
    }

    Matrix h = site("emb", one_hot_rows(flat, cfg.vocab));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "L" + std::to_string(l) + ".";
        Matrix q = site(p + "wq", h);
        Matrix k = site(p + "wk", h);
        Matrix v = site(p + "wv", h);
        Matrix mixed(total, cfg.d_model);
        std::size_t off = 0;
        for (const auto& s : seqs) {
            Matrix block = attention_mix(q, k, v, off, s.size());
            for (std::size_t i = 0; i < s.size(); ++i) {
                for (std::size_t c = 0; c < cfg.d_model; ++c) {
                    mixed(off + i, c) = block(i, c);
                }
            }
            off += s.size();
        }
        Matrix o = site(p + "wo", mixed);
        for (std::size_t i = 0; i < h.size(); ++i) {
            h.data()[i] += o.data()[i];
        }
        Matrix up = site(p + "wup", h);
        for (float& x : up.data()) {
            x = std::max(0.0f, x);
        }
        Matrix down = site(p + "wdown", up);
        for (std::size_t i = 0; i < h.size(); ++i) {
            h.data()[i] += down.data()[i];
        }
    }
    Matrix logits = site("unemb", h);

    std::vector<Matrix> out;
    out.reserve(seqs.size());
    std::size_t off = 0;
    for (const auto& s : seqs) {
        Matrix m(s.size(), cfg.vocab);
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (std::size_t c = 0; c < cfg.vocab; ++c) {
                m(i, c) = logits(off + i, c);
            }
        }
        out.push_back(std::move(m));
        off += s.size();
    }
    return out;
}

/// Site that feeds each row through lora_forward when the active adapter has
/// an entry for the layer, and the plain base product otherwise.
inline SiteFn make_adapter_site(const ToyModel& model, const LoraAdapter* active) {
    return [&model, active](const std::string& layer_id, const Matrix& x_rows) {
        const Matrix& w = model.weight(layer_id);
        const LoraLayerDelta* delta = nullptr;
        if (active != nullptr) {
            auto it = active->entries.find(layer_id);
            if (it != active->entries.end()) {
                delta = &it->second;
            }
        }
        Matrix out(x_rows.rows(), w.rows());
        Matrix col(x_rows.cols(), 1);
        for (std::size_t r = 0; r < x_rows.rows(); ++r) {
            for (std::size_t j = 0; j < x_rows.cols(); ++j) {
                col(j, 0) = x_rows(r, j);
            }
            Matrix y = delta ? lora_forward(col, w, *delta) : matmul(w, col);
            for (std::size_t i = 0; i < w.rows(); ++i) {
                out(r, i) = y(i, 0);
            }
        }
        return out;
    };
}

/// Site over an explicit weight set (merged serving).
inline SiteFn make_weights_site(const std::map<std::string, Matrix>& weights) {
    return [&weights](const std::string& layer_id, const Matrix& x_rows) {
        auto it = weights.find(layer_id);
        if (it == weights.end()) {
            throw Error(ErrorKind::UnknownId, "no weight for layer '" + layer_id + "'");
        }
        const Matrix& w = it->second;
        Matrix out(x_rows.rows(), w.rows());
        Matrix col(x_rows.cols(), 1);
        for (std::size_t r = 0; r < x_rows.rows(); ++r) {
            for (std::size_t j = 0; j < x_rows.cols(); ++j) {
                col(j, 0) = x_rows(r, j);
            }
            Matrix y = matmul(w, col);
            for (std::size_t i = 0; i < w.rows(); ++i) {
                out(r, i) = y(i, 0);
            }
        }
        return out;
    };
}

/// Single-request forward. `choice` picks the adapter whose deltas apply;
/// other attached adapters are inert and cannot change the output.
inline Matrix model_forward(const ToyModel& model, const std::vector<int>& tokens,
                            const std::map<std::string, LoraAdapter>& attached,
                            const std::optional<std::string>& choice) {
    const LoraAdapter* active = nullptr;
    if (choice) {
        auto it = attached.find(*choice);
        if (it == attached.end()) {
            throw Error(ErrorKind::UnknownId, "no attached adapter '" + *choice + "'");
        }
        active = &it->second;
    }
    return forward_sites(model, {tokens}, make_adapter_site(model, active))[0];
}

// ---------------------------------------------------------------------------
// Placement
// ---------------------------------------------------------------------------

enum class AttachPoint { AttentionQkv, AttentionOut, Embedding, Unembedding, Mlp };

/// Which base matrices carry deltas. shared_b reuses one B across W_Q, W_K
/// and W_V of each layer.
struct Placement {
    std::set<AttachPoint> points;
    bool shared_b = false;

    void validate() const {
        if (points.empty()) {
            throw Error(ErrorKind::Validation, "placement set is empty");
        }
        if (shared_b && points.count(AttachPoint::AttentionQkv) == 0) {
            throw Error(ErrorKind::Validation, "shared_b requires the AttentionQKV placement");
        }
    }
};

inline std::vector<std::string> placement_layer_ids(const Placement& placement,
                                                    const ModelConfig& cfg) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "L" + std::to_string(i) + ".";
        if (placement.points.count(AttachPoint::AttentionQkv)) {
            ids.insert(ids.end(), {p + "wq", p + "wk", p + "wv"});
        }
        if (placement.points.count(AttachPoint::AttentionOut)) {
            ids.push_back(p + "wo");
        }
        if (placement.points.count(AttachPoint::Mlp)) {
            ids.insert(ids.end(), {p + "wup", p + "wdown"});
        }
    }
    if (placement.points.count(AttachPoint::Embedding)) {
        ids.push_back("emb");
    }
    if (placement.points.count(AttachPoint::Unembedding)) {
        ids.push_back("unemb");
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline bool is_qkv_member(const std::string& id) {
    auto dot = id.find('.');
    if (dot == std::string::npos) {
        return false;
    }
    std::string name = id.substr(dot + 1);
    return name == "wq" || name == "wk" || name == "wv";
}

/// Builds an adapter covering exactly the placement's layer ids, entries drawn
/// from a seeded stream in canonical id order so equal inputs give equal
/// adapters. With shared_b the per-layer Q/K/V entries hold equal copies of
/// one drawn B; the footprint accounting counts that factor once.
inline LoraAdapter attach_placement(const ToyModel& model, const Placement& placement,
                                    std::uint32_t rank, float alpha,
                                    const std::string& adapter_id, std::uint64_t seed) {
    placement.validate();
    if (rank < 1) {
        throw Error(ErrorKind::DomainError, "rank must be >= 1");
    }
    if (!(alpha > 0.0f)) {
        throw Error(ErrorKind::DomainError, "alpha must be positive");
    }
    const ModelConfig& cfg = model.config();
    auto ids = placement_layer_ids(placement, cfg);
    for (const auto& id : ids) {
        const Matrix& w = model.weight(id);
        if (rank > std::min(w.rows(), w.cols())) {
            throw Error(ErrorKind::RankOverflow,
                        "rank " + std::to_string(rank) + " exceeds min dims of layer '" + id +
                            "' (" + w.shape_string() + ")");
        }
    }

    SplitMix64 rng(seed);
    auto draw = [&rng](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (std::size_t k = 0; k < m.size(); ++k) {
            m.data()[k] = static_cast<float>(rng.next_unit() * 0.2 - 0.1);
        }
        return m;
    };

    LoraAdapter adapter;
    adapter.adapter_id = adapter_id;
    std::map<std::string, Matrix> shared_b_by_layer;  // "L{i}." prefix -> B
    for (const auto& id : ids) {
        const Matrix& w = model.weight(id);
        Matrix a = draw(rank, w.cols());
        Matrix b;
        if (placement.shared_b && is_qkv_member(id)) {
            std::string prefix = id.substr(0, id.find('.') + 1);
            auto it = shared_b_by_layer.find(prefix);
            if (it == shared_b_by_layer.end()) {
                it = shared_b_by_layer.emplace(prefix, draw(w.rows(), rank)).first;
            }
            b = it->second;
        } else {
            b = draw(w.rows(), rank);
        }
        adapter.entries.emplace(id, LoraLayerDelta(std::move(a), std::move(b), alpha, rank));
    }
    adapter.validate();
    return adapter;
}

/// Total adapter parameter count for a placement; with shared_b the per-layer
/// Q/K/V B factor counts once.
inline std::uint64_t memory_footprint(const Placement& placement, std::uint32_t rank,
                                      const ModelConfig& cfg) {
    if (rank < 1) {
        throw Error(ErrorKind::DomainError, "rank must be >= 1");
    }
    cfg.validate();
    std::uint64_t total = 0;
    std::set<std::string> shared_counted;
    for (const auto& id : placement_layer_ids(placement, cfg)) {
        auto [d_out, d_in] = ToyModel::field_shape(id, cfg);
        if (id == "emb") {
            std::swap(d_out, d_in);  // applies to one-hot token columns
        }
        total += static_cast<std::uint64_t>(rank) * d_in;  // A
        if (placement.shared_b && is_qkv_member(id)) {
            std::string prefix = id.substr(0, id.find('.') + 1);
            if (shared_counted.insert(prefix).second) {
                total += static_cast<std::uint64_t>(rank) * d_out;  // one B per layer group
            }
        } else {
            total += static_cast<std::uint64_t>(rank) * d_out;
        }
    }
    return total;
}

}  // namespace multilora
