#include "cxrflow/pipeline.hpp"

#include <deque>
#include <map>

#include "cxrflow/react.hpp"

namespace cxrflow {

Wiring build_wiring(const RunConfig& config,
                    const std::optional<std::vector<ScriptEntry>>& force_script) {
    config.validate();
    Wiring w;
    std::vector<ToolSpec> specs;
    if (!config.tool_manifest.empty() && config.tool_manifest != "<inline>")
        specs = load_manifest(config.tool_manifest);

    if (force_script) {
        auto scripted = std::make_shared<ScriptedProvider>(*force_script);
        w.director = {scripted, config.director};
        w.edv = {scripted, config.director};
        w.members = {scripted, config.member_provider};
        for (const auto& s : specs) w.tools.register_backend(s, scripted);
    } else {
        auto director = std::make_shared<HttpProvider>(config.seed);
        w.director = {director, config.director};
        w.edv = {director, config.director}; // validator rides the director endpoint
        w.members = {std::make_shared<HttpProvider>(config.seed), config.member_provider};
        w.tools = build_registry(specs, config.seed);
    }
    return w;
}

RunTrace run_case(const CaseInput& c, const RunConfig& config, const Wiring& wiring,
                  const RunOptions& options) {
    c.validate();
    config.validate();
    TraceRecorder recorder(config, c, wiring.tools.specs(), options.trace_path);
    if (options.verify_reference) recorder.verify_against(*options.verify_reference);

    try {
        const int budget = config.ablation == Ablation::none ? 0 : config.budget;
        const bool edv_on =
            config.ablation == Ablation::tools_edv || config.ablation == Ablation::full;

        ValidatorFn validator = [&](const std::string& tool, const std::string& statement,
                                    ExchangeLog& exchanges) {
            return validate(tool, statement, c, wiring.edv, &exchanges);
        };

        LoopOptions loop_options;
        loop_options.validation_concurrency = options.validation_concurrency;
        loop_options.transcript_cap = options.transcript_cap;
        MemoryLog log = run_loop(c, wiring.tools, wiring.director, budget,
                                 edv_on ? &validator : nullptr, &recorder, loop_options);

        std::optional<Strategy> strategy;
        TeamOutput team; // kind none unless the full pipeline builds one
        if (config.ablation == Ablation::full) {
            ExchangeLog xlog;
            StrategyChoice choice;
            try {
                choice = select_strategy(c, log, wiring.director, &xlog);
            } catch (...) {
                emit_exchanges(&recorder, xlog);
                throw;
            }
            emit_exchanges(&recorder, xlog);
            recorder.emit(Stage::strategy, nlohmann::json{{"value", strategy_name(choice.value)},
                                                          {"fallback", choice.fallback},
                                                          {"raw", choice.raw}});
            if (choice.fallback) recorder.add_flag("strategy-fallback");
            strategy = choice.value;

            ExchangeLog rlog;
            TeamPlan plan;
            try {
                plan = recruit(c, log, choice.value, wiring.director, config.k_max,
                               config.member_provider, &rlog);
            } catch (...) {
                emit_exchanges(&recorder, rlog);
                throw;
            }
            emit_exchanges(&recorder, rlog);
            if (choice.value != Strategy::skip)
                recorder.emit(Stage::recruitment, nlohmann::json(plan));
            team = execute(plan, c, wiring.members, options.member_concurrency, &recorder);
        }

        ExchangeLog slog;
        DiagnosisResult diagnosis;
        try {
            diagnosis = diagnose(c, strategy, log, team, wiring.director, &slog);
        } catch (...) {
            emit_exchanges(&recorder, slog);
            throw;
        }
        emit_exchanges(&recorder, slog);
        recorder.emit(Stage::synthesis, nlohmann::json(diagnosis));
        recorder.set_result(RunResult{std::move(diagnosis), std::nullopt});
    } catch (const EngineError& e) {
        // harness-level failures propagate; everything documented becomes the result
        if (e.code() == ErrorCode::ReplayDivergence || e.code() == ErrorCode::SequenceGap) throw;
        recorder.set_result(
            RunResult{std::nullopt, RunError{error_code_name(e.code()), e.what()}});
    } catch (const std::exception& e) {
        recorder.set_result(RunResult{std::nullopt, RunError{"Internal", e.what()}});
    }
    recorder.finalize();
    return recorder.trace();
}

// ---------------------------------------------------------------------------
// replay

namespace {

// Serves recorded exchanges keyed by request fingerprint, FIFO per key so a
// prompt that legitimately repeats gets its responses back in recorded order.
class ReplayProvider : public Provider {
public:
    explicit ReplayProvider(const std::vector<TraceEvent>& events) {
        for (const auto& e : events) {
            if (e.stage != Stage::provider_exchange) continue;
            ProviderExchange x = e.payload.get<ProviderExchange>();
            queues_[x.fingerprint].push_back(std::move(x));
        }
    }

    ProviderResponse complete(std::span<const ChatMessage> messages,
                              const ProviderConfig& config) override {
        validate_messages(messages);
        (void)config;
        const std::string fp = fingerprint(messages);
        ProviderExchange x;
        {
            std::lock_guard lock(mu_);
            auto it = queues_.find(fp);
            if (it == queues_.end() || it->second.empty())
                throw EngineError(ErrorCode::ReplayDivergence,
                                  "no recorded exchange for request fingerprint " + fp);
            x = std::move(it->second.front());
            it->second.pop_front();
        }
        if (!x.ok)
            throw EngineError::preformatted(error_code_from_name(x.error_code), x.error_message);
        ProviderResponse resp;
        resp.content = std::move(x.response);
        resp.backend = backend_kind_from_name(x.backend);
        return resp;
    }

private:
    std::map<std::string, std::deque<ProviderExchange>> queues_;
    std::mutex mu_;
};

} // namespace

RunTrace replay(const RunTrace& recorded, const std::optional<std::filesystem::path>& trace_path) {
    auto provider = std::make_shared<ReplayProvider>(recorded.events);
    Wiring w;
    w.director = {provider, recorded.config.director};
    w.edv = {provider, recorded.config.director};
    w.members = {provider, recorded.config.member_provider};
    for (const auto& spec : recorded.tools) w.tools.register_backend(spec, provider);

    RunOptions options;
    // sequential sub-steps: recorded responses must pair with the requests in
    // recorded order even when one prompt fingerprint repeats
    options.member_concurrency = 1;
    options.validation_concurrency = 1;
    options.trace_path = trace_path;
    options.verify_reference = &recorded;

    RunTrace rerun = run_case(recorded.case_input, recorded.config, w, options);
    std::string why;
    if (!traces_equal_modulo_time(rerun, recorded, &why))
        throw EngineError(ErrorCode::ReplayDivergence, "replay differs from recording: " + why);
    return rerun;
}

} // namespace cxrflow
