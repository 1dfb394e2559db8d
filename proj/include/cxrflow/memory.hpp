#pragma once

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cxrflow/edv.hpp"
#include "cxrflow/toolkit.hpp"

namespace cxrflow {

// decision = sufficient ? stop : invoke the listed tools
struct ThoughtEntry {
    int iteration = 1;
    std::string text; // the director's reasoning (rationale or raw reply)
    bool sufficient = false;
    std::vector<ToolInvocation> invocations; // non-empty iff !sufficient
};

struct ActionEntry {
    int iteration = 1;
    std::vector<ToolInvocation> invocations; // never empty
};

struct ObservationEntry {
    int iteration = 1;
    std::vector<ToolOutput> outputs; // one per invocation, same order
};

void to_json(nlohmann::json& j, const ThoughtEntry& t);
void from_json(const nlohmann::json& j, ThoughtEntry& t);
void to_json(nlohmann::json& j, const ActionEntry& a);
void from_json(const nlohmann::json& j, ActionEntry& a);
void to_json(nlohmann::json& j, const ObservationEntry& o);
void from_json(const nlohmann::json& j, ObservationEntry& o);

using LogEntry = std::variant<ThoughtEntry, ActionEntry, ObservationEntry, ValidationRecord>;

// Append-only reasoning log. Append methods enforce the grammar: an action
// must follow a tools-decision thought of the same iteration, an observation
// must answer the preceding action invocation-for-invocation, validations
// attach to statements of the current observation.
class MemoryLog {
public:
    void append_thought(const ThoughtEntry& t);
    void append_action(const ActionEntry& a);
    void append_observation(const ObservationEntry& o);
    void append_validation(const ValidationRecord& r);

    const std::vector<LogEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    size_t thought_count() const;
    size_t validation_count() const;
    std::vector<const ValidationRecord*> validations() const;
    // index of the entry within entries(), paired with the record
    std::vector<std::pair<size_t, const ValidationRecord*>> indexed_validations() const;

private:
    std::vector<LogEntry> entries_;
    int last_thought_iteration_ = 0;
    enum class Tail { none, thought_tools, thought_done, action, observation, validation };
    Tail tail_ = Tail::none;
    size_t pending_validations_ = 0; // statements of the last observation not yet validated
};

// Text rendering of the log for prompts, oldest first. Entries beyond
// char_cap are elided from the front (a marker notes how many were dropped).
std::string render_transcript(const MemoryLog& log, size_t char_cap = 32768);

} // namespace cxrflow
