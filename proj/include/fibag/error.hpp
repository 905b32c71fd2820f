#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fibag {

enum class ErrorKind {
    // data_model
    Io,
    EmptyIntersection,
    NonNumericCell,
    DuplicateSampleId,
    DanglingIndex,
    DuplicateBiomarkerId,
    Format,
    // gp_mechanistic
    NonFiniteDistance,
    NonPositiveQuadForm,
    FactorizationFailure,
    QuadratureNotConverged,
    SingularDesign,
    NonFinite,
    // calibration
    EmptyEvidence,
    WeightMismatch,
    UnknownCovariate,
    // cbvs
    ZeroIterations,
    AllMovesImpossible,
    Divergence,
    InvalidConfig,
    // selection_fdr
    EmptyInput,
    AlphaOutOfRange,
    // sim_bench
    BisectionFailed,
    LevelOutOfRange,
    DegenerateTruth,
    // cli
    Usage,
};

constexpr std::string_view to_string(ErrorKind k) noexcept {
    switch (k) {
    case ErrorKind::Io: return "Io";
    case ErrorKind::EmptyIntersection: return "EmptyIntersection";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::DuplicateSampleId: return "DuplicateSampleId";
    case ErrorKind::DanglingIndex: return "DanglingIndex";
    case ErrorKind::DuplicateBiomarkerId: return "DuplicateBiomarkerId";
    case ErrorKind::Format: return "Format";
    case ErrorKind::NonFiniteDistance: return "NonFiniteDistance";
    case ErrorKind::NonPositiveQuadForm: return "NonPositiveQuadForm";
    case ErrorKind::FactorizationFailure: return "FactorizationFailure";
    case ErrorKind::QuadratureNotConverged: return "QuadratureNotConverged";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyEvidence: return "EmptyEvidence";
    case ErrorKind::WeightMismatch: return "WeightMismatch";
    case ErrorKind::UnknownCovariate: return "UnknownCovariate";
    case ErrorKind::ZeroIterations: return "ZeroIterations";
    case ErrorKind::AllMovesImpossible: return "AllMovesImpossible";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorKind::BisectionFailed: return "BisectionFailed";
    case ErrorKind::LevelOutOfRange: return "LevelOutOfRange";
    case ErrorKind::DegenerateTruth: return "DegenerateTruth";
    case ErrorKind::Usage: return "Usage";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Process exit codes used by the command-line front end.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int io = 2;
inline constexpr int usage = 64;
inline constexpr int data_format = 65;
inline constexpr int numerical = 70;
} // namespace exit_code

inline int exit_code_for(ErrorKind k) noexcept {
    switch (k) {
    case ErrorKind::Io: return exit_code::io;
    case ErrorKind::Usage:
    case ErrorKind::InvalidConfig:
    case ErrorKind::AlphaOutOfRange:
    case ErrorKind::LevelOutOfRange:
    case ErrorKind::ZeroIterations: return exit_code::usage;
    case ErrorKind::EmptyIntersection:
    case ErrorKind::NonNumericCell:
    case ErrorKind::DuplicateSampleId:
    case ErrorKind::DanglingIndex:
    case ErrorKind::DuplicateBiomarkerId:
    case ErrorKind::Format:
    case ErrorKind::EmptyEvidence:
    case ErrorKind::WeightMismatch:
    case ErrorKind::UnknownCovariate:
    case ErrorKind::EmptyInput:
    case ErrorKind::DegenerateTruth:
    case ErrorKind::SingularDesign: return exit_code::data_format;
    default: return exit_code::numerical;
    }
}

} // namespace fibag
