#include "qtun/error.hpp"

namespace qtun {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::DomainError: return "DomainError";
    case Errc::BreakdownRegime: return "BreakdownRegime";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::UnknownLayer: return "UnknownLayer";
    case Errc::NonFinite: return "NonFinite";
    case Errc::InvalidModel: return "InvalidModel";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::FormatError: return "FormatError";
    case Errc::MetadataMissing: return "MetadataMissing";
    case Errc::EmptyStream: return "EmptyStream";
    case Errc::ResolutionError: return "ResolutionError";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::FitDiverged: return "FitDiverged";
    case Errc::InvalidFit: return "InvalidFit";
    case Errc::EmptyHistogram: return "EmptyHistogram";
    case Errc::BlockTooSmall: return "BlockTooSmall";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InsufficientSeed: return "InsufficientSeed";
    case Errc::TooShort: return "TooShort";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

} // namespace qtun
