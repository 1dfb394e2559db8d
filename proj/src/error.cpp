#include "cxrflow/error.hpp"

namespace cxrflow {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyPrompt: return "EmptyPrompt";
        case ErrorCode::Transport: return "Transport";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::Malformed: return "Malformed";
        case ErrorCode::ScriptParse: return "ScriptParse";
        case ErrorCode::ScriptMiss: return "ScriptMiss";
        case ErrorCode::Config: return "Config";
        case ErrorCode::DuplicateTool: return "DuplicateTool";
        case ErrorCode::UnknownTool: return "UnknownTool";
        case ErrorCode::UnparseableThought: return "UnparseableThought";
        case ErrorCode::UnknownToolRequested: return "UnknownToolRequested";
        case ErrorCode::MissingSection: return "MissingSection";
        case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
        case ErrorCode::UnparseablePlan: return "UnparseablePlan";
        case ErrorCode::NoOption: return "NoOption";
        case ErrorCode::Ambiguous: return "Ambiguous";
        case ErrorCode::UnparseableAnswer: return "UnparseableAnswer";
        case ErrorCode::SequenceGap: return "SequenceGap";
        case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
        case ErrorCode::Corrupt: return "Corrupt";
        case ErrorCode::ReplayDivergence: return "ReplayDivergence";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::DatasetParse: return "DatasetParse";
        case ErrorCode::UnknownScenario: return "UnknownScenario";
        case ErrorCode::Precondition: return "Precondition";
    }
    return "Unknown";
}

ErrorCode error_code_from_name(const std::string& name) {
    static const ErrorCode all[] = {
        ErrorCode::EmptyPrompt,        ErrorCode::Transport,
        ErrorCode::RateLimited,        ErrorCode::Timeout,
        ErrorCode::Malformed,          ErrorCode::ScriptParse,
        ErrorCode::ScriptMiss,         ErrorCode::Config,
        ErrorCode::DuplicateTool,      ErrorCode::UnknownTool,
        ErrorCode::UnparseableThought, ErrorCode::UnknownToolRequested,
        ErrorCode::MissingSection,     ErrorCode::UnparseableVerdict,
        ErrorCode::UnparseablePlan,    ErrorCode::NoOption,
        ErrorCode::Ambiguous,          ErrorCode::UnparseableAnswer,
        ErrorCode::SequenceGap,        ErrorCode::SchemaVersionMismatch,
        ErrorCode::Corrupt,            ErrorCode::ReplayDivergence,
        ErrorCode::IoError,            ErrorCode::DatasetParse,
        ErrorCode::UnknownScenario,    ErrorCode::Precondition,
    };
    for (ErrorCode c : all)
        if (name == error_code_name(c)) return c;
    throw EngineError(ErrorCode::Corrupt, "unknown error code name: " + name);
}

static std::string format_message(ErrorCode code, const std::string& message, long line) {
    std::string out = "[";
    out += error_code_name(code);
    out += "] ";
    out += message;
    if (line >= 0) {
        out += " (line ";
        out += std::to_string(line);
        out += ")";
    }
    return out;
}

EngineError::EngineError(ErrorCode code, const std::string& message, long line)
    : std::runtime_error(format_message(code, message, line)), code_(code), line_(line) {}

EngineError::EngineError(Raw, ErrorCode code, const std::string& formatted)
    : std::runtime_error(formatted), code_(code), line_(-1) {}

EngineError EngineError::preformatted(ErrorCode code, const std::string& formatted) {
    return EngineError(Raw{}, code, formatted);
}

} // namespace cxrflow
