// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "multilora/adapter.hpp"
#include "multilora/error.hpp"
#include "multilora/serial.hpp"

namespace multilora {

struct ManifestEntry {
    std::uint64_t digest = 0;
    std::uint64_t bytes = 0;

    bool operator==(const ManifestEntry&) const = default;
};

/// id -> (digest, size) listing; the input to delta-only sync planning.
/// Text form is one record per line: `adapter_id <space> hex digest <space> byte size`.
struct Manifest {
    std::map<std::string, ManifestEntry> entries;

    static std::string digest_hex(std::uint64_t digest) {
        static const char* hex = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i) {
            s[i] = hex[digest & 0xf];
            digest >>= 4;
        }
        return s;
    }

    std::string to_text() const {
        std::ostringstream out;
        for (const auto& [id, entry] : entries) {
            out << id << ' ' << digest_hex(entry.digest) << ' ' << entry.bytes << '\n';
        }
        return out.str();
    }

    static Manifest parse(const std::string& text) {
        Manifest m;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) {
                continue;
            }
            std::istringstream fields(line);
            std::string id, digest_str;
            std::uint64_t bytes = 0;
            if (!(fields >> id >> digest_str >> bytes)) {
                throw Error(ErrorKind::FormatError,
                            "manifest line " + std::to_string(lineno) + " is malformed");
            }
            if (!valid_adapter_id(id)) {
                throw Error(ErrorKind::FormatError,
                            "manifest line " + std::to_string(lineno) + " has invalid id '" + id +
                                "'");
            }
            if (digest_str.size() != 16 ||
                digest_str.find_first_not_of("0123456789abcdef") != std::string::npos) {
                throw Error(ErrorKind::FormatError,
                            "manifest line " + std::to_string(lineno) + " has invalid digest");
            }
            std::uint64_t digest = std::stoull(digest_str, nullptr, 16);
            if (!m.entries.emplace(id, ManifestEntry{digest, bytes}).second) {
                throw Error(ErrorKind::FormatError,
                            "manifest repeats adapter id '" + id + "'");
            }
        }
        return m;
    }

    static Manifest load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw Error(ErrorKind::IoError, "cannot read manifest " + path.string());
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot write manifest " + path.string());
        }
        out << to_text();
    }
};

/// Adapter ids worth fetching from `remote`: missing locally, or present with a
/// different digest. Base weights never appear; manifests only list adapters.
inline std::vector<std::string> diff_sync_plan(const Manifest& local, const Manifest& remote) {
    std::vector<std::string> plan;
    for (const auto& [id, entry] : remote.entries) {
        auto it = local.entries.find(id);
        if (it == local.entries.end() || it->second.digest != entry.digest) {
            plan.push_back(id);
        }
    }
    return plan;  // map iteration is already id-sorted
}

inline std::uint64_t estimate_full_checkpoint_bytes(std::uint64_t n_params,
                                                    std::uint64_t bytes_per_param) {
    if (n_params == 0 || bytes_per_param == 0) {
        throw Error(ErrorKind::DomainError, "parameter count and bytes per param must be positive");
    }
    if (n_params > UINT64_MAX / bytes_per_param) {
        throw Error(ErrorKind::DomainError, "checkpoint size overflows 64 bits");
    }
    return n_params * bytes_per_param;
}

inline std::uint64_t estimate_adapter_bytes(
    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& layers /* (d_in, d_out) */,
    std::uint64_t rank, std::uint64_t bytes_per_param) {
    if (rank == 0 || bytes_per_param == 0) {
        throw Error(ErrorKind::DomainError, "rank and bytes per param must be positive");
    }
    std::uint64_t total = 0;
    for (const auto& [d_in, d_out] : layers) {
        if (d_in == 0 || d_out == 0) {
            throw Error(ErrorKind::DomainError, "layer dimensions must be positive");
        }
        total += rank * (d_in + d_out) * bytes_per_param;
    }
    return total;
}

/// Durable adapter store: a directory of `<adapter_id>.lora` files plus a
/// `MANIFEST` file, kept inspectable on purpose. Store/remove are exclusive
/// per registry; loads only take the lock long enough to read the file.
class AdapterRegistry {
public:
    explicit AdapterRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) {
            throw Error(ErrorKind::IoError, "cannot create registry dir " + dir_.string());
        }
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path path_of(const std::string& id) const {
        return dir_ / (id + ".lora");
    }

    bool contains(const std::string& id) const {
        return std::filesystem::exists(path_of(id));
    }

    void store(const LoraAdapter& adapter) {
        adapter.validate();
        std::lock_guard<std::mutex> lock(mutex_);
        auto path = path_of(adapter.adapter_id);
        if (std::filesystem::exists(path)) {
            throw Error(ErrorKind::DuplicateId,
                        "adapter '" + adapter.adapter_id + "' already stored");
        }
        write_file(path, serialize_adapter(adapter));
        rewrite_manifest();
    }

    LoraAdapter load(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto bytes = read_file_checked(id);
        return deserialize_adapter(bytes, id);
    }

    void remove(const std::string& id) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto path = path_of(id);
        if (!std::filesystem::exists(path)) {
            throw Error(ErrorKind::UnknownId, "adapter '" + id + "' is not stored");
        }
        std::filesystem::remove(path);
        rewrite_manifest();
    }

    std::vector<std::string> list() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return list_ids();
    }

    /// Digests recomputed from the stored bytes.
    Manifest manifest() const {
        std::lock_guard<std::mutex> lock(mutex_);
        Manifest m;
        for (const auto& id : list_ids()) {
            auto bytes = read_file_checked(id);
            m.entries[id] = ManifestEntry{fnv1a64(bytes), bytes.size()};
        }
        return m;
    }

    std::filesystem::path manifest_path() const { return dir_ / "MANIFEST"; }

private:
    std::vector<std::string> list_ids() const {
        std::vector<std::string> ids;
        for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".lora") {
                continue;
            }
            std::string id = entry.path().stem().string();
            if (valid_adapter_id(id)) {
                ids.push_back(std::move(id));
            }
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::vector<std::uint8_t> read_file_checked(const std::string& id) const {
        std::ifstream in(path_of(id), std::ios::binary);
        if (!in) {
            throw Error(ErrorKind::UnknownId, "adapter '" + id + "' is not stored");
        }
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return bytes;
    }

    static void write_file(const std::filesystem::path& path,
                           const std::vector<std::uint8_t>& bytes) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot write " + path.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }

    void rewrite_manifest() {
        Manifest m;
        for (const auto& id : list_ids()) {
            auto bytes = read_file_checked(id);
            m.entries[id] = ManifestEntry{fnv1a64(bytes), bytes.size()};
        }
        m.save(manifest_path());
    }

    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

}  // namespace multilora
