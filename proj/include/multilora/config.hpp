// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "multilora/engine.hpp"
#include "multilora/error.hpp"
#include "multilora/scheduler.hpp"
#include "multilora/toy_model.hpp"

namespace multilora {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::ConfigError,
                        "line " + std::to_string(lineno) + " is not `key = value`");
        }
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw Error(ErrorKind::ConfigError,
                        "line " + std::to_string(lineno) + " has an empty key or value");
        }
        if (!out.emplace(key, value).second) {
            throw Error(ErrorKind::ConfigError, "key '" + key + "' repeats");
        }
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline std::uint64_t parse_u64(const std::string& value, const std::string& key) {
    try {
        std::size_t pos = 0;
        std::uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, "key '" + key + "' has non-numeric value '" + value + "'");
    }
}

/// Keys: vocab, d_model, n_layers, d_ff, seed. All required, none extra.
inline ModelConfig parse_model_config(const std::string& text) {
    auto kv = parse_kv(text);
    const std::set<std::string> known = {"vocab", "d_model", "n_layers", "d_ff", "seed"};
    for (const auto& [key, value] : kv) {
        if (!known.count(key)) {
            throw Error(ErrorKind::ConfigError, "unknown model config key '" + key + "'");
        }
    }
    for (const auto& key : known) {
        if (!kv.count(key)) {
            throw Error(ErrorKind::ConfigError, "model config is missing key '" + key + "'");
        }
    }
    ModelConfig cfg;
    cfg.vocab = parse_u64(kv.at("vocab"), "vocab");
    cfg.d_model = parse_u64(kv.at("d_model"), "d_model");
    cfg.n_layers = parse_u64(kv.at("n_layers"), "n_layers");
    cfg.d_ff = parse_u64(kv.at("d_ff"), "d_ff");
    cfg.seed = parse_u64(kv.at("seed"), "seed");
    cfg.validate();
    return cfg;
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
    return parse_model_config(read_text_file(path));
}

struct ServerConfig {
    std::string listen_host = "127.0.0.1";
    int listen_port = 8080;
    std::filesystem::path model_config_path;
    std::filesystem::path registry_dir;
    std::size_t n_slots = 8;
    std::size_t r_max = 4;
    ServingMode mode = ServingMode::BatchedMulti;
    SchedulerConfig scheduler;

    void validate() const {
        if (n_slots < 1 || r_max < 1) {
            throw Error(ErrorKind::ConfigError, "n_slots and r_max must be >= 1");
        }
        scheduler.validate();
    }
};

/// Keys: listen, model, registry, n_slots, r_max, mode, max_batch, window_ms.
inline ServerConfig parse_server_config(const std::string& text) {
    auto kv = parse_kv(text);
    const std::set<std::string> known = {"listen", "model",     "registry", "n_slots",
                                         "r_max",  "max_batch", "window_ms", "mode"};
    for (const auto& [key, value] : kv) {
        if (!known.count(key)) {
            throw Error(ErrorKind::ConfigError, "unknown server config key '" + key + "'");
        }
    }
    for (const char* required : {"listen", "model", "registry"}) {
        if (!kv.count(required)) {
            throw Error(ErrorKind::ConfigError,
                        std::string("server config is missing key '") + required + "'");
        }
    }
    ServerConfig cfg;
    const std::string& listen = kv.at("listen");
    auto colon = listen.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == listen.size()) {
        throw Error(ErrorKind::ConfigError, "listen must be host:port, got '" + listen + "'");
    }
    cfg.listen_host = listen.substr(0, colon);
    cfg.listen_port = static_cast<int>(parse_u64(listen.substr(colon + 1), "listen"));
    cfg.model_config_path = kv.at("model");
    cfg.registry_dir = kv.at("registry");
    if (kv.count("n_slots")) {
        cfg.n_slots = parse_u64(kv.at("n_slots"), "n_slots");
    }
    if (kv.count("r_max")) {
        cfg.r_max = parse_u64(kv.at("r_max"), "r_max");
    }
    if (kv.count("mode")) {
        cfg.mode = parse_serving_mode(kv.at("mode"));
    }
    if (kv.count("max_batch")) {
        cfg.scheduler.max_batch = parse_u64(kv.at("max_batch"), "max_batch");
    }
    if (kv.count("window_ms")) {
        cfg.scheduler.window_ms = static_cast<std::int64_t>(parse_u64(kv.at("window_ms"), "window_ms"));
    }
    cfg.validate();
    return cfg;
}

inline ServerConfig load_server_config(const std::filesystem::path& path) {
    return parse_server_config(read_text_file(path));
}

}  // namespace multilora
