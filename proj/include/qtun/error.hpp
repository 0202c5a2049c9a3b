#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qtun {

enum class Errc {
    DomainError,
    BreakdownRegime,
    NoConvergence,
    UnknownLayer,
    NonFinite,
    InvalidModel,
    InvalidParams,
    FormatError,
    MetadataMissing,
    EmptyStream,
    ResolutionError,
    InsufficientData,
    FitDiverged,
    InvalidFit,
    EmptyHistogram,
    BlockTooSmall,
    LengthMismatch,
    InsufficientSeed,
    TooShort,
    ShapeMismatch,
    ConfigError,
    IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the library; `code()` distinguishes the failure.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

protected:
    struct Verbatim {};
    /// `what` used as is, without the code prefix.
    Error(Errc code, const std::string& what, Verbatim) : std::runtime_error(what), code_(code) {}

private:
    Errc code_;
};

} // namespace qtun
