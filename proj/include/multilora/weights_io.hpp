// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "multilora/error.hpp"
#include "multilora/matrix.hpp"
#include "multilora/serial.hpp"

namespace multilora {

// Named-weights container for the merge pipeline, all integers little-endian:
//   magic "MLWT" | version u32 = 1 | n u32
//   per entry: name_len u16 | name bytes | rows u32 | cols u32
//              | rows*cols f32 row-major
// Entries sorted by name bytewise; same determinism contract as adapter files.

inline constexpr char kWeightsMagic[4] = {'M', 'L', 'W', 'T'};
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

inline std::vector<std::uint8_t> serialize_weights(const std::map<std::string, Matrix>& weights) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kWeightsMagic, kWeightsMagic + 4);
    detail::put_u32(out, kWeightsFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, w] : weights) {
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(w.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(w.cols()));
        for (float v : w.data()) {
            detail::put_f32(out, v);
        }
    }
    return out;
}

inline std::map<std::string, Matrix> deserialize_weights(const std::vector<std::uint8_t>& bytes) {
    detail::Reader r(bytes.data(), bytes.size());
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
        throw Error(ErrorKind::FormatError, "bad magic, expected \"MLWT\"");
    }
    (void)r.bytes(4, "magic");
    std::uint32_t version = r.u32("version");
    if (version != kWeightsFormatVersion) {
        throw Error(ErrorKind::UnsupportedVersion, "version " + std::to_string(version));
    }
    std::uint32_t n = r.u32("entry count");
    std::map<std::string, Matrix> weights;
    for (std::uint32_t e = 0; e < n; ++e) {
        std::uint16_t name_len = r.u16("entry name length");
        std::string name = r.bytes(name_len, "entry name");
        std::uint32_t rows = r.u32("rows");
        std::uint32_t cols = r.u32("cols");
        const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
        if (count > r.remaining() / 4) {
            throw Error(ErrorKind::Truncation,
                        "entry '" + name + "' payload exceeds the " +
                            std::to_string(r.remaining()) + " bytes remaining at offset " +
                            std::to_string(r.pos()));
        }
        std::vector<float> data(count);
        for (auto& v : data) {
            v = r.f32("weight payload");
        }
        Matrix m;
        try {
            m = Matrix(rows, cols, std::move(data));
        } catch (const Error& err) {
            throw Error(ErrorKind::Corruption, "entry '" + name + "': " + err.what());
        }
        if (!weights.emplace(std::move(name), std::move(m)).second) {
            throw Error(ErrorKind::Corruption, "duplicate weight name in entry " + std::to_string(e));
        }
    }
    if (r.remaining() != 0) {
        throw Error(ErrorKind::Corruption,
                    std::to_string(r.remaining()) + " trailing bytes after last entry");
    }
    return weights;
}

inline void write_bytes_file(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot read " + path.string());
    }
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

}  // namespace multilora
