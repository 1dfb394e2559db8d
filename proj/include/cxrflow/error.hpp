#pragma once

#include <stdexcept>
#include <string>

namespace cxrflow {

// Every documented failure in the engine carries one of these codes so callers
// (and tests) can branch on the failure class instead of matching message text.
enum class ErrorCode {
    // provider
    EmptyPrompt,
    Transport,
    RateLimited,
    Timeout,
    Malformed,
    ScriptParse,
    ScriptMiss,
    Config,
    // toolkit
    DuplicateTool,
    UnknownTool,
    // react
    UnparseableThought,
    UnknownToolRequested,
    // edv
    MissingSection,
    UnparseableVerdict,
    // planner
    UnparseablePlan,
    // synthesis
    NoOption,
    Ambiguous,
    UnparseableAnswer,
    // trace / replay
    SequenceGap,
    SchemaVersionMismatch,
    Corrupt,
    ReplayDivergence,
    IoError,
    // harness / fixtures
    DatasetParse,
    UnknownScenario,
    Precondition,
};

const char* error_code_name(ErrorCode code);
// Inverse of error_code_name; throws EngineError{Corrupt} on unknown names.
ErrorCode error_code_from_name(const std::string& name);

class EngineError : public std::runtime_error {
public:
    EngineError(ErrorCode code, const std::string& message, long line = -1);

    // Rebuilds an error whose what() is exactly `formatted` — used by replay
    // to reproduce recorded failures byte-for-byte.
    static EngineError preformatted(ErrorCode code, const std::string& formatted);

    ErrorCode code() const noexcept { return code_; }
    // 1-based line number for parse errors in line-delimited files, -1 otherwise.
    long line() const noexcept { return line_; }

private:
    struct Raw {};
    EngineError(Raw, ErrorCode code, const std::string& formatted);
    ErrorCode code_;
    long line_;
};

} // namespace cxrflow
