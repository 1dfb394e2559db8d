#pragma once

#include "cxrflow/pipeline.hpp"

namespace cxrflow {

// One JSON case per line; duplicate ids or schema violations ->
// EngineError{DatasetParse} with the line number.
std::vector<CaseInput> load_dataset(const std::filesystem::path& path);

struct CaseResult {
    std::string id;
    bool ok = false;
    std::string answer;
    std::optional<std::string> chosen_option;
    TaskKind task_kind = TaskKind::free_text_report;
    std::optional<bool> correct;  // set only for scorable (gold-bearing MC/binary) cases
    std::optional<double> score;  // external scorer output for free-text cases
    std::string strategy;         // chosen collaboration mode, when one was selected
    int iterations = 0;           // thought events
    int provider_calls = 0;       // provider-exchange events
    std::string error_code;       // set when !ok
    std::string error_message;
    std::string trace_file; // empty when tracing was off
};

void to_json(nlohmann::json& j, const CaseResult& r);

struct BatchReport {
    std::vector<CaseResult> results; // dataset order
    size_t scorable = 0;
    size_t correct = 0;
    std::optional<double> accuracy; // unset when no case is scorable ("n/a")
    std::map<std::string, size_t> by_strategy;
};

void to_json(nlohmann::json& j, const BatchReport& r);
std::string render_report(const BatchReport& r);

struct BatchOptions {
    int parallelism = 1;
    std::optional<std::filesystem::path> trace_dir; // per-case trace files
    std::optional<std::vector<ScriptEntry>> force_script;
    std::optional<std::filesystem::path> reports_dir; // free-text answers, one file per case
    std::string scorer_cmd; // external scorer: `cmd <candidate> <reference>` -> number on stdout
};

// Runs every case independently (fresh wiring per case — nothing leaks
// between cases), up to `parallelism` at a time. Case failures become error
// rows, never batch failures. Results keep dataset order regardless of
// completion order.
BatchReport run_batch(const std::vector<CaseInput>& dataset, const RunConfig& config,
                      const BatchOptions& options);

// Extracts a result row from a finished trace (exposed for tests).
CaseResult summarize_trace(const RunTrace& trace);

struct SweepTable {
    std::vector<std::string> groups; // task kinds present, dataset order + "overall" last
    // accuracy[group][ablation name]; unset cell = n/a
    std::map<std::string, std::map<std::string, std::optional<double>>> accuracy;
    std::map<std::string, BatchReport> reports; // per ablation name
};

nlohmann::json sweep_to_json(const SweepTable& t);
std::string render_sweep(const SweepTable& t);

// Same dataset at all four ablation levels; per-level traces land in
// <trace_dir>/<level>/ when tracing is on.
SweepTable ablation_sweep(const std::vector<CaseInput>& dataset, const RunConfig& base,
                          const BatchOptions& options);

} // namespace cxrflow
