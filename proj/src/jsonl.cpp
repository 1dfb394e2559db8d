#include "cxrflow/jsonl.hpp"

#include <fstream>

namespace cxrflow {

nlohmann::json parse_json_line(const std::string& line, ErrorCode parse_code, long line_no) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw EngineError(parse_code, "invalid JSON", line_no);
    return j;
}

void for_each_jsonl(const std::filesystem::path& path, ErrorCode parse_code,
                    const std::function<void(const nlohmann::json&, long line)>& fn) {
    std::ifstream in(path);
    if (!in) throw EngineError(ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        fn(parse_json_line(line, parse_code, line_no), line_no);
    }
}

} // namespace cxrflow
