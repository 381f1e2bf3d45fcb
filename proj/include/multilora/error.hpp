// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace multilora {

// Every failure the library can raise, one kind per distinct caller-visible
// condition. The HTTP layer maps each kind to exactly one status code.
enum class ErrorKind {
    ShapeMismatch,
    DomainError,
    Validation,
    FormatError,
    UnsupportedVersion,
    Truncation,
    Corruption,
    DuplicateId,
    UnknownId,
    CapacityExhausted,
    RankOverflow,
    LayerMismatch,
    InvalidMask,
    MixedBatch,
    OutOfVocab,
    UnsortedTrace,
    IoError,
    ConfigError,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ShapeMismatch: return "shape-mismatch";
        case ErrorKind::DomainError: return "domain-error";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::FormatError: return "format-error";
        case ErrorKind::UnsupportedVersion: return "unsupported-version";
        case ErrorKind::Truncation: return "truncation";
        case ErrorKind::Corruption: return "corruption";
        case ErrorKind::DuplicateId: return "duplicate-id";
        case ErrorKind::UnknownId: return "unknown-id";
        case ErrorKind::CapacityExhausted: return "capacity-exhausted";
        case ErrorKind::RankOverflow: return "rank-overflow";
        case ErrorKind::LayerMismatch: return "layer-mismatch";
        case ErrorKind::InvalidMask: return "invalid-mask";
        case ErrorKind::MixedBatch: return "mixed-batch";
        case ErrorKind::OutOfVocab: return "out-of-vocab";
        case ErrorKind::UnsortedTrace: return "unsorted-trace";
        case ErrorKind::IoError: return "io-error";
        case ErrorKind::ConfigError: return "config-error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace multilora
