#pragma once

#include "cxrflow/pipeline.hpp"

namespace cxrflow {

struct ValidationExpect {
    std::string statement_contains; // matches a validation's source statement
    std::string confidence;         // confidence name the validation must carry
    std::string refuting_contains;  // empty = no refuting-evidence check
};

void to_json(nlohmann::json& j, const ValidationExpect& v);
void from_json(const nlohmann::json& j, ValidationExpect& v);

// Scenario assertions; unset optionals are unchecked. Text matching is
// case-insensitive substring.
struct Expected {
    std::string strategy;                 // expected collaboration mode name
    std::optional<int> members;           // exact member-event count
    std::optional<int> tool_invocations;  // exact tool-output count
    std::optional<int> iterations;        // exact thought-event count
    std::vector<ValidationExpect> validations;
    std::vector<std::string> answer_contains;
    std::vector<std::string> answer_excludes;
    std::optional<std::string> chosen_option;
    std::vector<std::string> member_text_contains;
    std::optional<size_t> max_events;
};

void to_json(nlohmann::json& j, const Expected& e);
void from_json(const nlohmann::json& j, Expected& e);

// A fully wired deterministic end-to-end case: input, tool specs, a merged
// fingerprint-keyed provider script covering every request the pipeline will
// issue (at any ablation level), and the assertions its trace must satisfy.
struct Scenario {
    std::string name;
    CaseInput case_input;
    std::vector<ToolSpec> tools;
    RunConfig config;
    std::vector<ScriptEntry> script; // merged, fingerprint-keyed
    std::map<std::string, std::vector<ScriptEntry>> role_scripts; // director/edv/member/tool-<name>
    Expected expected;
};

std::vector<std::string> scenario_names();

// Builds the named scenario in memory. Scripts are authored by a bootstrap
// pass: the pipeline runs once per ablation level against ordered role
// scripts, and the recorded exchanges become the fingerprint-keyed script.
// Unknown name -> EngineError{UnknownScenario}.
Scenario load_scenario(const std::string& name);

// One shared scripted provider for every role and tool.
Wiring wire_scenario(const Scenario& s);

RunTrace run_scenario(const Scenario& s, const RunOptions& options = {});

struct ScenarioReport {
    bool pass = true;
    std::string first_failure; // names the first violated assertion
};

ScenarioReport assert_scenario(const Scenario& s, const RunTrace& trace);

// Bundle layout: case.json, config.json, tools.jsonl, expected.json,
// script.jsonl (merged), scripts/<role>.jsonl, images/<id>.png placeholders.
void save_bundle(const Scenario& s, const std::filesystem::path& dir);
Scenario load_bundle(const std::filesystem::path& dir);

} // namespace cxrflow
