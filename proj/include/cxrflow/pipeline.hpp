#pragma once

#include "cxrflow/react.hpp"
#include "cxrflow/trace.hpp"

namespace cxrflow {

// The model endpoints a run talks to. edv defaults to the director when wired
// from a RunConfig; fixtures wire the roles separately.
struct Wiring {
    ProviderHandle director;
    ProviderHandle edv;
    ProviderHandle members;
    ToolRegistry tools;
};

struct RunOptions {
    size_t member_concurrency = 0;     // 0 = one thread per member
    size_t validation_concurrency = 0; // 0 = one task per statement
    size_t transcript_cap = kDefaultTranscriptCap;
    std::optional<std::filesystem::path> trace_path; // write-ahead trace file
    const RunTrace* verify_reference = nullptr;      // replay verification target
};

// Builds live wiring from a RunConfig: http providers for director/EDV/members
// (EDV shares the director endpoint), registry from the tool manifest. When
// `force_script` is given every role and every tool is served by one shared
// scripted provider built from those entries.
Wiring build_wiring(const RunConfig& config,
                    const std::optional<std::vector<ScriptEntry>>& force_script = std::nullopt);

// Runs the full pipeline for one case at the configured ablation level:
// react loop (with EDV when enabled), then strategy selection, recruitment
// and team execution (full only), then synthesis. Documented failures land in
// the trace result, never as exceptions — except ReplayDivergence and
// SequenceGap, which are harness-level and propagate.
RunTrace run_case(const CaseInput& c, const RunConfig& config, const Wiring& wiring,
                  const RunOptions& options = {});

// Re-executes a recorded run against providers reconstructed purely from its
// recorded exchanges, comparing every produced event in-flight. Any response
// mutation or code drift raises EngineError{ReplayDivergence} naming the
// first diverging stage and sequence number.
RunTrace replay(const RunTrace& recorded,
                const std::optional<std::filesystem::path>& trace_path = std::nullopt);

} // namespace cxrflow
