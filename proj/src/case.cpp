#include "cxrflow/case.hpp"

#include <set>

#include "cxrflow/error.hpp"

namespace cxrflow {

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::multiple_choice: return "multiple-choice";
        case TaskKind::binary: return "binary";
        case TaskKind::free_text_report: return "free-text-report";
    }
    return "free-text-report";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "multiple-choice") return TaskKind::multiple_choice;
    if (name == "binary") return TaskKind::binary;
    if (name == "free-text-report") return TaskKind::free_text_report;
    throw EngineError(ErrorCode::Precondition, "unknown task kind: " + name);
}

void CaseInput::validate() const {
    if (id.empty()) throw EngineError(ErrorCode::Precondition, "case id must be non-empty");
    if (query.empty())
        throw EngineError(ErrorCode::Precondition, "case " + id + ": query must be non-empty");
    if (task_kind == TaskKind::multiple_choice) {
        if (options.size() < 2)
            throw EngineError(ErrorCode::Precondition,
                              "case " + id + ": multiple-choice needs at least two options");
        std::set<std::string> labels;
        for (const auto& opt : options) {
            if (opt.label.empty() || opt.text.empty())
                throw EngineError(ErrorCode::Precondition,
                                  "case " + id + ": option label and text must be non-empty");
            if (!labels.insert(opt.label).second)
                throw EngineError(ErrorCode::Precondition,
                                  "case " + id + ": duplicate option label " + opt.label);
        }
        if (gold && !labels.count(*gold))
            throw EngineError(ErrorCode::Precondition,
                              "case " + id + ": gold '" + *gold + "' is not an option label");
    } else if (!options.empty()) {
        throw EngineError(ErrorCode::Precondition,
                          "case " + id + ": options are only valid for multiple-choice");
    }
    std::set<std::string> image_ids;
    for (const auto& img : images) {
        if (img.id.empty() || img.location.empty())
            throw EngineError(ErrorCode::Precondition,
                              "case " + id + ": image id and location must be non-empty");
        if (!image_ids.insert(img.id).second)
            throw EngineError(ErrorCode::Precondition,
                              "case " + id + ": duplicate image id " + img.id);
    }
}

std::string case_presentation(const CaseInput& c) {
    std::string out = "Case " + c.id + ".\nQuestion: " + c.query + "\n";
    switch (c.task_kind) {
        case TaskKind::multiple_choice:
            out += "Options:\n";
            for (const auto& opt : c.options) out += "  " + opt.label + ") " + opt.text + "\n";
            out += "The final answer must be one of these options.\n";
            break;
        case TaskKind::binary:
            out += "The final answer must be yes or no.\n";
            break;
        case TaskKind::free_text_report:
            out += "The final answer is a written radiology report.\n";
            break;
    }
    return out;
}

void to_json(nlohmann::json& j, const CaseInput& c) {
    j = nlohmann::json{
        {"id", c.id},
        {"query", c.query},
        {"images", c.images},
        {"task_kind", task_kind_name(c.task_kind)},
    };
    if (!c.options.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& opt : c.options) arr.push_back({{"label", opt.label}, {"text", opt.text}});
        j["options"] = std::move(arr);
    }
    if (c.gold) j["gold"] = *c.gold;
}

void from_json(const nlohmann::json& j, CaseInput& c) {
    j.at("id").get_to(c.id);
    j.at("query").get_to(c.query);
    c.images.clear();
    if (j.contains("images")) j.at("images").get_to(c.images);
    c.task_kind = task_kind_from_name(j.at("task_kind").get<std::string>());
    c.options.clear();
    if (j.contains("options")) {
        for (const auto& o : j.at("options"))
            c.options.push_back({o.at("label").get<std::string>(), o.at("text").get<std::string>()});
    }
    if (j.contains("gold") && !j.at("gold").is_null())
        c.gold = j.at("gold").get<std::string>();
    else
        c.gold.reset();
}

} // namespace cxrflow
