#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "cxrflow/error.hpp"

namespace cxrflow {

// Applies `fn` to every non-blank line of a JSON-Lines file. Parse failures
// surface as EngineError{parse_code} with the 1-based line number; a missing
// or unreadable file surfaces as EngineError{IoError}.
void for_each_jsonl(const std::filesystem::path& path, ErrorCode parse_code,
                    const std::function<void(const nlohmann::json&, long line)>& fn);

// Single-line JSON parse with the same error convention.
nlohmann::json parse_json_line(const std::string& line, ErrorCode parse_code, long line_no);

} // namespace cxrflow
