#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cotext {

enum class ErrorCode {
    reserved_marker_present,
    io_failure,
    format_error,
    missing_doc,
    missing_source,
    corpus_empty,
    vocab_too_small,
    id_out_of_range,
    sentinel_in_input,
    malformed_example,
    shape_mismatch,
    all_masked,
    invalid_config,
    diverged,
    empty_mixture,
    version_mismatch,
    vocab_mismatch,
    input_too_long,
    lex_error,
    parse_error,
    length_mismatch,
    empty,
    invalid_weights,
    bad_label,
    gradcheck_failed,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::reserved_marker_present: return "RESERVED_MARKER_PRESENT";
    case ErrorCode::io_failure: return "IO_FAILURE";
    case ErrorCode::format_error: return "FORMAT_ERROR";
    case ErrorCode::missing_doc: return "MISSING_DOC";
    case ErrorCode::missing_source: return "MISSING_SOURCE";
    case ErrorCode::corpus_empty: return "CORPUS_EMPTY";
    case ErrorCode::vocab_too_small: return "VOCAB_TOO_SMALL";
    case ErrorCode::id_out_of_range: return "ID_OUT_OF_RANGE";
    case ErrorCode::sentinel_in_input: return "SENTINEL_IN_INPUT";
    case ErrorCode::malformed_example: return "MALFORMED_EXAMPLE";
    case ErrorCode::shape_mismatch: return "SHAPE_MISMATCH";
    case ErrorCode::all_masked: return "ALL_MASKED";
    case ErrorCode::invalid_config: return "INVALID_CONFIG";
    case ErrorCode::diverged: return "DIVERGED";
    case ErrorCode::empty_mixture: return "EMPTY_MIXTURE";
    case ErrorCode::version_mismatch: return "VERSION_MISMATCH";
    case ErrorCode::vocab_mismatch: return "VOCAB_MISMATCH";
    case ErrorCode::input_too_long: return "INPUT_TOO_LONG";
    case ErrorCode::lex_error: return "LEX_ERROR";
    case ErrorCode::parse_error: return "PARSE_ERROR";
    case ErrorCode::length_mismatch: return "LENGTH_MISMATCH";
    case ErrorCode::empty: return "EMPTY";
    case ErrorCode::invalid_weights: return "INVALID_WEIGHTS";
    case ErrorCode::bad_label: return "BAD_LABEL";
    case ErrorCode::gradcheck_failed: return "GRADCHECK_FAILED";
    }
    return "UNKNOWN";
}

/// Domain error carrying a machine-readable code. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace cotext
