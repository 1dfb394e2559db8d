#pragma once

#include <string>

#include <json.hpp>

namespace cxrflow {

// Trace event classes. provider_exchange records raw model traffic; the rest
// mirror pipeline stages.
enum class Stage {
    thought,
    action,
    observation,
    validation,
    strategy,
    recruitment,
    member,
    synthesis,
    provider_exchange,
};

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Where pipeline stages report events. The trace recorder implements this;
// modules only ever see the interface, so they stay trace-format agnostic.
class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void emit(Stage stage, nlohmann::json payload) = 0;
    // Degraded-mode markers ("strategy-fallback", ...) accumulated on the run.
    virtual void add_flag(const std::string& flag) { (void)flag; }
};

} // namespace cxrflow
