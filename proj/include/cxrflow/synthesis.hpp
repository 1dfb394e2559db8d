#pragma once

#include "cxrflow/team.hpp"

namespace cxrflow {

struct DiagnosisResult {
    std::string answer; // option text / normalized yes|no / report text
    std::string rationale;
    std::vector<size_t> cited_validations; // indices into MemoryLog::entries()
    TaskKind task_kind = TaskKind::free_text_report;
    std::optional<std::string> chosen_option; // option label, multiple-choice only
};

void to_json(nlohmann::json& j, const DiagnosisResult& r);
void from_json(const nlohmann::json& j, DiagnosisResult& r);

struct AnswerParse {
    std::string answer;
    std::optional<std::string> chosen_label;
};

// Committal-answer extraction. Multiple-choice: option labels and option
// texts are matched with set semantics — exactly one distinct option wins,
// none -> EngineError{NoOption}, several -> EngineError{Ambiguous}. An
// explicit "Answer:" marker is preferred over whole-text scanning. Binary:
// yes/present/positive -> "yes", no/absent/negative -> "no", same set
// semantics. Reports pass through trimmed.
AnswerParse parse_answer(const std::string& raw, TaskKind kind,
                         const std::vector<AnswerOption>& options);

// Findings ranked strongest-first (stable on log order), discounted claims
// quarantined in their own block, team analyses and reasoning log appended.
std::vector<ChatMessage> render_synthesis_prompt(const CaseInput& c,
                                                 const std::optional<Strategy>& strategy,
                                                 const MemoryLog& log, const TeamOutput& team);

// Final director call (one repair retry on NoOption/Ambiguous for scorable
// tasks, then EngineError{UnparseableAnswer}). cited_validations lists every
// validation of at least plausible confidence, in log order.
DiagnosisResult diagnose(const CaseInput& c, const std::optional<Strategy>& strategy,
                         const MemoryLog& log, const TeamOutput& team,
                         const ProviderHandle& director, ExchangeLog* exchanges);

} // namespace cxrflow
