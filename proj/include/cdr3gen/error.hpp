#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdr3gen {

enum class ErrorKind {
    OverlongSource,
    OverlongTarget,
    UnknownResidue,
    DisabledChannel,
    EmptyBatch,
    ShapeMismatch,
    EmptySplit,
    EmptySequence,
    EmptyInput,
    EmptyIndex,
    MissingColumn,
    MalformedRow,
    TooFewContexts,
    InvalidConfig,
    BadCheckpoint,
    NonFinite,
    Io,
    Usage,
};

std::string_view to_string(ErrorKind kind);

// Every domain failure carries the module that raised it so the CLI can
// report provenance without string parsing.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& detail);

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& module() const noexcept { return module_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string module_;
    std::string detail_;
};

}  // namespace cdr3gen
