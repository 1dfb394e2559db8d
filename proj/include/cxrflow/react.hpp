#pragma once

#include <functional>

#include "cxrflow/events.hpp"
#include "cxrflow/memory.hpp"

namespace cxrflow {

inline constexpr size_t kDefaultTranscriptCap = 32768;

std::vector<ChatMessage> render_thought_prompt(const MemoryLog& log, const CaseInput& c,
                                               const ToolRegistry& registry,
                                               size_t transcript_cap = kDefaultTranscriptCap);

// One director call (plus one repair retry when the reply is not the required
// JSON). The returned entry's iteration is log.thought_count() + 1 and its
// invocations carry the case images plus 1-based indices. Errors:
// UnparseableThought after the failed retry, UnknownToolRequested when the
// director names a tool the registry lacks (not repaired — a tool the
// catalog never offered is a wiring bug, not sloppy formatting).
ThoughtEntry think(const MemoryLog& log, const CaseInput& c, const ProviderHandle& director,
                   const ToolRegistry& registry, ExchangeLog* exchanges,
                   size_t transcript_cap = kDefaultTranscriptCap);

// Concurrent fan-out over the action's invocations; outputs come back in
// invocation order regardless of completion order. Backend failures land in
// ToolOutput.status, never as exceptions.
ObservationEntry execute_action(const ActionEntry& action, const ToolRegistry& registry);

// Per-statement validator plugged into the loop when EDV is on. Appends its
// provider exchanges to the given log.
using ValidatorFn =
    std::function<ValidationRecord(const std::string& source_tool, const std::string& statement,
                                   ExchangeLog& exchanges)>;

struct LoopOptions {
    size_t validation_concurrency = 0; // 0 = one task per statement
    size_t transcript_cap = kDefaultTranscriptCap;
};

// The full iterative loop: Thought -> (Action -> Observation -> Validations)
// until the director declares sufficiency or `budget` iterations have run.
// budget 0 -> empty log. Emits thought/action/observation/validation events
// plus provider-exchange events (in deterministic order) to `sink` when set.
MemoryLog run_loop(const CaseInput& c, const ToolRegistry& registry,
                   const ProviderHandle& director, int budget, const ValidatorFn* validator,
                   EventSink* sink, const LoopOptions& options = {});

// Builds one provider-exchange record from a completed tool output (the
// request fingerprint is recomputed from the registry's request rendering).
ProviderExchange exchange_from_output(const ToolRegistry& registry, const ToolOutput& out);

void emit_exchanges(EventSink* sink, const ExchangeLog& exchanges);

} // namespace cxrflow
