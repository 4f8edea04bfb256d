#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

enum class Err {
    EmptyText,
    TooLong,
    InvalidConfig,
    ShapeMismatch,
    InvalidMetric,
    EmptyCorpus,
    DegenerateSequence,
    ContextOverflow,
    LengthMismatch,
    EmptyInput,
    IoFailure,
    EmptySet,
    DimensionMismatch,
    FingerprintMismatch,
    EmptyGrid,
    EmptyPrompts,
    ParseError,
    EmptyLexicon,
    UnknownCategory,
    TooFewSamples,
    ZeroVarianceBoth,
    DegenerateTable,
    OutOfRangeP,
    EmptyAfterFilter,
    KeyMismatch,
};

inline const char* err_name(Err e) {
    switch (e) {
        case Err::EmptyText: return "EmptyText";
        case Err::TooLong: return "TooLong";
        case Err::InvalidConfig: return "InvalidConfig";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::InvalidMetric: return "InvalidMetric";
        case Err::EmptyCorpus: return "EmptyCorpus";
        case Err::DegenerateSequence: return "DegenerateSequence";
        case Err::ContextOverflow: return "ContextOverflow";
        case Err::LengthMismatch: return "LengthMismatch";
        case Err::EmptyInput: return "EmptyInput";
        case Err::IoFailure: return "IoFailure";
        case Err::EmptySet: return "EmptySet";
        case Err::DimensionMismatch: return "DimensionMismatch";
        case Err::FingerprintMismatch: return "FingerprintMismatch";
        case Err::EmptyGrid: return "EmptyGrid";
        case Err::EmptyPrompts: return "EmptyPrompts";
        case Err::ParseError: return "ParseError";
        case Err::EmptyLexicon: return "EmptyLexicon";
        case Err::UnknownCategory: return "UnknownCategory";
        case Err::TooFewSamples: return "TooFewSamples";
        case Err::ZeroVarianceBoth: return "ZeroVarianceBoth";
        case Err::DegenerateTable: return "DegenerateTable";
        case Err::OutOfRangeP: return "OutOfRangeP";
        case Err::EmptyAfterFilter: return "EmptyAfterFilter";
        case Err::KeyMismatch: return "KeyMismatch";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Err kind, const std::string& msg)
        : std::runtime_error(std::string(err_name(kind)) + ": " + msg), kind_(kind) {}

    Err kind() const { return kind_; }

private:
    Err kind_;
};

}  // namespace steerlab
