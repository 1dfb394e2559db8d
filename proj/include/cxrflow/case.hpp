#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxrflow/message.hpp"

namespace cxrflow {

enum class TaskKind { multiple_choice, binary, free_text_report };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct AnswerOption {
    std::string label; // "A", "B", ...
    std::string text;

    bool operator==(const AnswerOption&) const = default;
};

// One diagnostic case: the unit of work for the whole pipeline.
struct CaseInput {
    std::string id;
    std::string query;
    std::vector<ImageRef> images;
    TaskKind task_kind = TaskKind::free_text_report;
    std::vector<AnswerOption> options;   // multiple-choice only
    std::optional<std::string> gold;     // reference answer, when known

    // Throws EngineError{Precondition} on structural violations: empty id/query,
    // options present iff multiple-choice, duplicate option labels, gold label
    // (for multiple-choice) not among the options.
    void validate() const;

    bool operator==(const CaseInput&) const = default;
};

void to_json(nlohmann::json& j, const CaseInput& c);
void from_json(const nlohmann::json& j, CaseInput& c);

// Deterministic textual presentation of the case (question, options, expected
// answer form) shared by every prompt that shows the case to a model.
std::string case_presentation(const CaseInput& c);

} // namespace cxrflow
