#include "cdr3gen/error.hpp"

namespace cdr3gen {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::OverlongSource: return "OverlongSource";
        case ErrorKind::OverlongTarget: return "OverlongTarget";
        case ErrorKind::UnknownResidue: return "UnknownResidue";
        case ErrorKind::DisabledChannel: return "DisabledChannel";
        case ErrorKind::EmptyBatch: return "EmptyBatch";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::EmptySplit: return "EmptySplit";
        case ErrorKind::EmptySequence: return "EmptySequence";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::EmptyIndex: return "EmptyIndex";
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::MalformedRow: return "MalformedRow";
        case ErrorKind::TooFewContexts: return "TooFewContexts";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::BadCheckpoint: return "BadCheckpoint";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::Io: return "IoError";
        case ErrorKind::Usage: return "UsageError";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, std::string module, const std::string& detail)
    : std::runtime_error(module + ": " + std::string(to_string(kind)) + ": " + detail),
      kind_(kind),
      module_(std::move(module)),
      detail_(detail) {}

}  // namespace cdr3gen
