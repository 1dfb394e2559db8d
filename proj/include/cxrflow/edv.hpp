#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cxrflow/case.hpp"
#include "cxrflow/provider.hpp"

namespace cxrflow {

// Ordinal confidence scale; rank() gives the comparison order used when
// sorting findings for synthesis.
enum class Confidence {
    not_well_supported = 0,
    uncertain = 1,
    plausible = 2,
    well_supported = 3,
};

int confidence_rank(Confidence c);
const char* confidence_name(Confidence c);
Confidence confidence_from_name(const std::string& name);

// Maps free-text confidence wording onto the scale (case/hyphen-insensitive,
// word-boundary phrase matching). Unknown wording -> uncertain.
Confidence confidence_from_phrase(const std::string& phrase);

struct ValidationRecord {
    std::string source_tool;
    std::string source_statement;
    std::string conclusion;
    std::vector<std::string> supportive; // image-grounded evidence for
    std::vector<std::string> refuting;   // image-grounded evidence against
    Confidence confidence = Confidence::uncertain;
    std::string raw_verdict; // the validator's full reply, for audit

    bool operator==(const ValidationRecord&) const = default;
};

void to_json(nlohmann::json& j, const ValidationRecord& r);
void from_json(const nlohmann::json& j, ValidationRecord& r);

// Conclusion / evidence / confidence parsed out of a verdict reply; tool and
// statement attribution are added by validate().
struct ParsedVerdict {
    std::string conclusion;
    std::vector<std::string> supportive;
    std::vector<std::string> refuting;
    Confidence confidence = Confidence::uncertain;
};

// Labeled-heading parse of a verdict reply. Throws EngineError{MissingSection}
// when no Conclusion heading is found; missing evidence sections become empty
// lists, missing/unknown confidence becomes uncertain. Groundedness
// normalization: no evidence at all caps confidence at uncertain;
// well-supported without supportive evidence demotes to plausible;
// not-well-supported without refuting evidence lifts to uncertain.
ParsedVerdict parse_verdict(const std::string& raw);

std::vector<ChatMessage> render_validation_prompt(const std::string& source_tool,
                                                  const std::string& statement,
                                                  const CaseInput& c);

// One director call per statement (plus one repair retry when the reply has
// no Conclusion heading). Persistent failure -> EngineError{UnparseableVerdict}.
ValidationRecord validate(const std::string& source_tool, const std::string& statement,
                          const CaseInput& c, const ProviderHandle& validator, ExchangeLog* log);

} // namespace cxrflow
