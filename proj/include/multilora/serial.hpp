// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/error.hpp"

namespace multilora {

// Adapter file format, all integers little-endian:
//   magic "LORA" | version u32 = 1 | n_entries u32
//   per entry: name_len u16 | name bytes | d_out u32 | d_in u32 | rank u32
//              | alpha f32 | A payload rank*d_in f32 row-major
//              | B payload d_out*rank f32 row-major
// Entries are written sorted by layer id bytewise, so equal adapters always
// produce identical bytes and digests. The adapter id itself travels out of
// band (file name, URL path).

inline constexpr char kAdapterMagic[4] = {'L', 'O', 'R', 'A'};
inline constexpr std::uint32_t kAdapterFormatVersion = 1;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

/// Cursor over a byte buffer that reports the offset of the first missing byte.
class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    void need(std::size_t n, const char* what) {
        if (size_ - pos_ < n) {
            throw Error(ErrorKind::Truncation,
                        std::string("payload ends before ") + what + " at offset " +
                            std::to_string(size_));
        }
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_]) |
                          static_cast<std::uint16_t>(data_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    float f32(const char* what) {
        return std::bit_cast<float>(u32(what));
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_adapter(const LoraAdapter& adapter) {
    adapter.validate();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kAdapterMagic, kAdapterMagic + 4);
    detail::put_u32(out, kAdapterFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(adapter.entries.size()));
    for (const auto& [name, delta] : adapter.entries) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw Error(ErrorKind::Validation, "layer id longer than 65535 bytes");
        }
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(delta.d_out()));
        detail::put_u32(out, static_cast<std::uint32_t>(delta.d_in()));
        detail::put_u32(out, delta.rank);
        detail::put_f32(out, delta.alpha);
        for (float v : delta.a.data()) {
            detail::put_f32(out, v);
        }
        for (float v : delta.b.data()) {
            detail::put_f32(out, v);
        }
    }
    return out;
}

/// Inverse of serialize_adapter. The format carries no adapter id, so the
/// caller supplies it (registry file name, PUT URL).
inline LoraAdapter deserialize_adapter(const std::uint8_t* data, std::size_t size,
                                       const std::string& adapter_id) {
    detail::Reader r(data, size);
    r.need(4, "magic");
    if (std::memcmp(data, kAdapterMagic, 4) != 0) {
        throw Error(ErrorKind::FormatError, "bad magic, expected \"LORA\"");
    }
    (void)r.bytes(4, "magic");
    std::uint32_t version = r.u32("version");
    if (version != kAdapterFormatVersion) {
        throw Error(ErrorKind::UnsupportedVersion, "version " + std::to_string(version));
    }
    std::uint32_t n_entries = r.u32("entry count");
    if (n_entries == 0) {
        throw Error(ErrorKind::Corruption, "adapter with zero entries");
    }

    LoraAdapter adapter;
    adapter.adapter_id = adapter_id;
    for (std::uint32_t e = 0; e < n_entries; ++e) {
        std::uint16_t name_len = r.u16("entry name length");
        std::string name = r.bytes(name_len, "entry name");
        if (name.empty()) {
            throw Error(ErrorKind::Corruption, "empty layer id in entry " + std::to_string(e));
        }
        std::uint32_t d_out = r.u32("d_out");
        std::uint32_t d_in = r.u32("d_in");
        std::uint32_t rank = r.u32("rank");
        float alpha = r.f32("alpha");
        if (d_out == 0 || d_in == 0 || rank == 0) {
            throw Error(ErrorKind::Corruption,
                        "entry '" + name + "' has zero dimension (d_out=" + std::to_string(d_out) +
                            " d_in=" + std::to_string(d_in) + " rank=" + std::to_string(rank) + ")");
        }
        if (rank > d_in || rank > d_out) {
            throw Error(ErrorKind::Corruption,
                        "entry '" + name + "' rank " + std::to_string(rank) +
                            " exceeds min(d_in, d_out)");
        }
        if (!(alpha > 0.0f) || !std::isfinite(alpha)) {
            throw Error(ErrorKind::Corruption, "entry '" + name + "' has invalid alpha");
        }
        const std::uint64_t a_count = static_cast<std::uint64_t>(rank) * d_in;
        const std::uint64_t b_count = static_cast<std::uint64_t>(d_out) * rank;
        const std::uint64_t avail_f32 = r.remaining() / 4;
        if (a_count > avail_f32 || b_count > avail_f32 - a_count) {
            throw Error(ErrorKind::Truncation,
                        "entry '" + name + "' payload exceeds the " +
                            std::to_string(r.remaining()) + " bytes remaining at offset " +
                            std::to_string(r.pos()));
        }
        std::vector<float> a_data(a_count);
        for (auto& v : a_data) {
            v = r.f32("A payload");
        }
        std::vector<float> b_data(b_count);
        for (auto& v : b_data) {
            v = r.f32("B payload");
        }
        LoraLayerDelta delta;
        try {
            delta = LoraLayerDelta(Matrix(rank, d_in, std::move(a_data)),
                                   Matrix(d_out, rank, std::move(b_data)), alpha, rank);
        } catch (const Error& err) {
            throw Error(ErrorKind::Corruption, "entry '" + name + "': " + err.what());
        }
        if (!adapter.entries.emplace(std::move(name), std::move(delta)).second) {
            throw Error(ErrorKind::Corruption, "duplicate layer id in entry " + std::to_string(e));
        }
    }
    if (r.remaining() != 0) {
        throw Error(ErrorKind::Corruption,
                    std::to_string(r.remaining()) + " trailing bytes after last entry");
    }
    adapter.validate();
    return adapter;
}

inline LoraAdapter deserialize_adapter(const std::vector<std::uint8_t>& bytes,
                                       const std::string& adapter_id) {
    return deserialize_adapter(bytes.data(), bytes.size(), adapter_id);
}

/// 64-bit FNV-1a over a byte buffer; the manifest's change-detection digest.
inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace multilora
